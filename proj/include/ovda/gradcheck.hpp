#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ovda/autodiff.hpp"

namespace ovda::ad {

struct GradcheckReport {
    std::vector<double> max_rel_error;  // one entry per parameter tensor
    double worst = 0.0;
    double tolerance = 0.0;
    bool passed = false;
};

// Denominator floor for the relative error, so that gradients that are zero up
// to truncation error are compared absolutely.
inline constexpr double kGradcheckFloor = 1e-3;

template <class T>
using ScalarFn = std::function<Var<T>(Tape<T>&, std::span<const Var<T>>)>;

// Compares the tape gradient of `f` against central differences
// (f(p+h) - f(p-h)) / 2h, element by element.
template <class T>
GradcheckReport gradcheck(const ScalarFn<T>& f, const std::vector<BasicTensor<T>>& params, double h, double tol) {
    if (!(h >= 1e-5 && h <= 1e-2)) throw std::invalid_argument("gradcheck: h must lie in [1e-5, 1e-2]");

    auto evaluate = [&](const std::vector<BasicTensor<T>>& ps) {
        Tape<T> tape(false);
        std::vector<Var<T>> vars;
        for (const auto& p : ps) vars.push_back(tape.constant(p));
        const double v = static_cast<double>(f(tape, vars).value().item());
        if (!std::isfinite(v)) throw NonFiniteError("gradcheck: function value is not finite");
        return v;
    };

    Tape<T> tape;
    std::vector<Var<T>> vars;
    for (const auto& p : params) vars.push_back(tape.parameter(p));
    Var<T> loss = f(tape, vars);
    tape.backward(loss);

    GradcheckReport report;
    report.tolerance = tol;
    std::vector<BasicTensor<T>> probe = params;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        const BasicTensor<T> analytic = tape.grad(vars[pi]);
        double worst = 0.0;
        for (std::size_t i = 0; i < params[pi].size(); ++i) {
            const T orig = params[pi][i];
            probe[pi][i] = orig + static_cast<T>(h);
            const double up = evaluate(probe);
            probe[pi][i] = orig - static_cast<T>(h);
            const double down = evaluate(probe);
            probe[pi][i] = orig;
            const double numeric = (up - down) / (2.0 * h);
            const double a = static_cast<double>(analytic[i]);
            const double denom = std::max({std::abs(a), std::abs(numeric), kGradcheckFloor});
            worst = std::max(worst, std::abs(a - numeric) / denom);
        }
        report.max_rel_error.push_back(worst);
        report.worst = std::max(report.worst, worst);
    }
    report.passed = report.worst <= tol;
    return report;
}

}  // namespace ovda::ad
