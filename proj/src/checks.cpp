#include "ovda/checks.hpp"

#include <cmath>
#include <functional>
#include <ostream>
#include <random>
#include <sstream>

#include "ovda/alignment.hpp"
#include "ovda/depth_model.hpp"
#include "ovda/gradcheck.hpp"
#include "ovda/losses.hpp"

namespace ovda {

namespace {

ModelConfig tiny_config(std::size_t context, std::uint64_t seed) {
    ModelConfig cfg;
    cfg.patch = 2;
    cfg.encoder_channels = 8;
    cfg.head_channels = 8;
    cfg.context = context;
    cfg.seed = seed;
    return cfg;
}

template <class T>
BasicTensor<T> uniform(Shape shape, std::mt19937_64& rng, double lo, double hi) {
    BasicTensor<T> t(std::move(shape));
    std::uniform_real_distribution<double> d(lo, hi);
    for (T& v : t.data()) v = static_cast<T>(d(rng));
    return t;
}

EncoderFeatures<float> random_frames(const Model<float>& model, std::size_t frames, std::mt19937_64& rng) {
    std::vector<Tensor> rgb;
    for (std::size_t n = 0; n < frames; ++n) rgb.push_back(uniform<float>({4, 6, 3}, rng, 0.0, 1.0));
    return encode_sequence(model.encoder, rgb);
}

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(3);
    os << v;
    return os.str();
}

CheckResult streaming_equivalence(const CheckOptions& opt) {
    const std::pair<std::size_t, std::size_t> configs[] = {{2, 1}, {2, 6}, {4, 4}, {4, 12}, {8, 24}};
    double worst = 0.0;
    std::mt19937_64 rng(opt.seed);
    for (const auto& [c, N] : configs) {
        const auto model = Model<float>::create(tiny_config(c, opt.seed + c * 31 + N));
        const auto feats = random_frames(model, N, rng);
        const auto batch = predict_batch(model, feats, opt.inject_band_bug ? c + 1 : c);
        const auto stream = predict_stream(model, feats);
        for (std::size_t n = 0; n < N; ++n) worst = std::max(worst, max_abs_diff(batch[n], stream[n]));
    }
    return {"streaming_equivalence", worst < 1e-5, "max |batch - stream| = " + fmt(worst)};
}

CheckResult causality(const CheckOptions& opt) {
    std::mt19937_64 rng(opt.seed + 1);
    const std::size_t c = 3, N = 9, cut = 5;
    const auto model = Model<float>::create(tiny_config(c, opt.seed + 2));
    auto feats = random_frames(model, N, rng);
    const auto before = predict_batch(model, feats, c);
    const std::size_t per_frame = feats.tokens.size() / N;
    for (std::size_t i = cut * per_frame; i < feats.tokens.size(); ++i) feats.tokens[i] += 1.0f;
    const auto after = predict_batch(model, feats, c);
    double leak = 0.0;
    for (std::size_t n = 0; n < cut; ++n) leak = std::max(leak, max_abs_diff(before[n], after[n]));
    return {"causality", leak <= 1e-6, "max change before the perturbed frame = " + fmt(leak)};
}

CheckResult motion_gradcheck(const CheckOptions& opt) {
    using Td = BasicTensor<double>;
    std::mt19937_64 rng(opt.seed + 3);
    const std::size_t N = 4, S = 2, C = 3, c = 2;
    auto p = MotionModuleParams<double>::init(C, c, rng);
    p.pos_table = uniform<double>({c, C}, rng, -0.5, 0.5);
    const Td x = uniform<double>({N, S, C}, rng, -1.0, 1.0);
    const Td w = uniform<double>({N, S, C}, rng, -1.0, 1.0);
    std::vector<Td> params{x};
    for (auto& [name, t] : p.named()) params.push_back(*t);
    ad::ScalarFn<double> f = [&](ad::Tape<double>& tape, std::span<const ad::Var<double>> v) {
        MotionModuleVars<double> mv{v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8], v[9], v[10], v[11]};
        return ad::sum(ad::mul(motion_module_batch(v[0], mv, c), tape.constant(w)));
    };
    const auto r = ad::gradcheck(f, params, 1e-5, 1e-4);
    return {"motion_module_gradcheck", r.passed, "worst relative error = " + fmt(r.worst)};
}

CheckResult loss_gradcheck(const CheckOptions& opt) {
    using Td = BasicTensor<double>;
    using Loss = std::function<ad::Var<double>(const ad::Var<double>&, const SequenceTarget<double>&)>;
    const Loss losses[] = {
        [](const ad::Var<double>& p, const SequenceTarget<double>& t) { return loss_ssi_scene(p, t); },
        [](const ad::Var<double>& p, const SequenceTarget<double>& t) { return loss_tgm(p, t); },
        [](const ad::Var<double>& p, const SequenceTarget<double>& t) { return loss_sascon(p, t); },
    };
    double worst = 0.0;
    bool passed = true;
    for (std::uint64_t s = 0; s < 3; ++s) {
        std::mt19937_64 rng(opt.seed + 10 + s);
        const SequenceTarget<double> t{uniform<double>({3, 6}, rng, 0.2, 2.0), Td({3, 6}, 1.0)};
        const Td pred = uniform<double>({3, 6}, rng, -1.0, 1.0);
        for (const Loss& loss : losses) {
            ad::ScalarFn<double> f = [&](ad::Tape<double>&, std::span<const ad::Var<double>> v) { return loss(v[0], t); };
            const auto r = ad::gradcheck(f, {pred}, 1e-5, 1e-4);
            passed = passed && r.passed;
            worst = std::max(worst, r.worst);
        }
    }
    return {"loss_gradcheck", passed, "worst relative error = " + fmt(worst)};
}

CheckResult alignment_oracle(const CheckOptions& opt) {
    std::mt19937_64 rng(opt.seed + 20);
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    double worst_gap = 0.0, worst_recovery = 0.0;
    auto residual = [](const std::vector<float>& p, const std::vector<float>& g, double s, double t) {
        double r = 0.0;
        for (std::size_t i = 0; i < p.size(); ++i) r += std::pow(s * p[i] + t - g[i], 2);
        return r;
    };
    for (int k = 0; k < 20; ++k) {
        std::vector<float> p(12), g(12);
        for (std::size_t i = 0; i < p.size(); ++i) {
            p[i] = static_cast<float>(u(rng));
            g[i] = static_cast<float>(u(rng));
        }
        const AffineAlign a = least_squares_align(p, g);
        const double best = residual(p, g, a.scale, a.shift);
        for (double ds : {-1e-3, 0.0, 1e-3})
            for (double dt : {-1e-3, 0.0, 1e-3})
                worst_gap = std::max(worst_gap, best - residual(p, g, a.scale + ds, a.shift + dt));
        const double s = 0.5 + 0.1 * k, t = u(rng);
        std::vector<float> exact(p.size());
        for (std::size_t i = 0; i < p.size(); ++i) exact[i] = static_cast<float>(s * p[i] + t);
        const AffineAlign r = least_squares_align(p, exact);
        worst_recovery = std::max({worst_recovery, std::abs(r.scale - s), std::abs(r.shift - t)});
    }
    return {"alignment_oracle", worst_gap <= 1e-9 && worst_recovery < 1e-5,
            "perturbation gain " + fmt(worst_gap) + ", affine recovery error " + fmt(worst_recovery)};
}

CheckResult metric_fixtures(const CheckOptions&) {
    const std::vector<float> gt{1.0f, 1.0f}, pred{1.0f, 1.5f};
    const double a = absrel(gt, pred), d = delta1(gt, pred);
    const bool perfect = absrel(gt, gt) == 0.0 && delta1(gt, gt) == 1.0;
    return {"metric_fixtures", a == 0.25 && d == 0.5 && perfect, "absrel " + fmt(a) + ", delta1 " + fmt(d)};
}

}  // namespace

std::vector<CheckResult> run_checks(const CheckOptions& opt) {
    std::vector<CheckResult> out;
    for (auto check : {streaming_equivalence, causality, motion_gradcheck, loss_gradcheck, alignment_oracle,
                       metric_fixtures}) {
        try {
            out.push_back(check(opt));
        } catch (const std::exception& e) {
            out.push_back({"(exception)", false, e.what()});
        }
    }
    return out;
}

bool print_checks(std::ostream& os, const std::vector<CheckResult>& results) {
    bool all = true;
    for (const auto& r : results) {
        os << (r.passed ? "PASS " : "FAIL ") << r.name << ": " << r.detail << '\n';
        all = all && r.passed;
    }
    return all;
}

}  // namespace ovda
