#pragma once

// Training losses over a predicted inverse-depth sequence pred [N, P] against
// ground-truth inverse depth gt [N, P] with validity mask [N, P].
//
// All affine fits are differentiated through: the gradient of a loss includes
// the dependence of (s, t) on the prediction.

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ovda/alignment.hpp"
#include "ovda/autodiff.hpp"
#include "ovda/tensor.hpp"

namespace ovda {

struct LossWeights {
    double alpha = 1.0;
    double beta = 1.0;
    double gamma = 1.0;
};

template <class T>
struct SequenceTarget {
    BasicTensor<T> gt;    // [N, P] inverse depth
    BasicTensor<T> mask;  // [N, P] in {0, 1}

    std::size_t frames() const { return gt.dim(0); }
    std::size_t pixels() const { return gt.dim(1); }

    SequenceTarget frame(std::size_t n) const { return slice(n, n + 1); }

    SequenceTarget slice(std::size_t begin, std::size_t end) const {
        const std::size_t P = pixels();
        auto cut = [&](const BasicTensor<T>& t) {
            std::vector<T> v(t.data().begin() + static_cast<std::ptrdiff_t>(begin * P),
                             t.data().begin() + static_cast<std::ptrdiff_t>(end * P));
            return BasicTensor<T>({end - begin, P}, std::move(v));
        };
        return {cut(gt), cut(mask)};
    }
};

// Differentiable least-squares fit of pred to gt over mask > 0.5.
// Returns a [2] Var holding (scale, shift). Throws AlignmentError when fewer
// than two pixels are valid or the masked prediction has (near) zero variance.
template <class T>
ad::Var<T> affine_fit(const ad::Var<T>& pred, const BasicTensor<T>& gt, const BasicTensor<T>& mask) {
    const BasicTensor<T>& p = pred.value();
    if (p.size() != gt.size() || p.size() != mask.size()) throw ShapeError("affine_fit: size mismatch");
    double n = 0.0, mp = 0.0, mg = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (mask[i] <= T{0.5}) continue;
        n += 1.0;
        mp += p[i];
        mg += gt[i];
    }
    if (n < 2.0) throw AlignmentError("affine_fit: needs at least 2 valid pixels");
    mp /= n;
    mg /= n;
    double cov = 0.0, var = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (mask[i] <= T{0.5}) continue;
        cov += (p[i] - mp) * (gt[i] - mg);
        var += (p[i] - mp) * (p[i] - mp);
    }
    if (var / n < kDegenerateVariance) throw AlignmentError("affine_fit: degenerate (constant) prediction");
    const double s = cov / var;
    const double t = mg - s * mp;
    BasicTensor<T> out({2}, {static_cast<T>(s), static_cast<T>(t)});
    return pred.tape()->record(
        "affine_fit", std::move(out), {pred}, [pred, gt, mask, n, mp, mg, var, s](ad::Tape<T>& tape, const BasicTensor<T>& g) {
            const BasicTensor<T>& pv = pred.value();
            BasicTensor<T> gp(pv.shape());
            const double gs = g[0], gt_ = g[1];
            for (std::size_t i = 0; i < pv.size(); ++i) {
                if (mask[i] <= T{0.5}) continue;
                const double ds = ((gt[i] - mg) - 2.0 * s * (pv[i] - mp)) / var;
                const double dt = -ds * mp - s / n;
                gp[i] = static_cast<T>(gs * ds + gt_ * dt);
            }
            tape.accumulate(pred, gp);
        });
}

template <class T>
ad::Var<T> apply_fit(const ad::Var<T>& pred, const ad::Var<T>& fit) {
    return ad::add(ad::mul(pred, ad::slice0(fit, 0, 1)), ad::slice0(fit, 1, 2));
}

namespace detail {

template <class T>
T mask_count(const BasicTensor<T>& mask) {
    T n = 0;
    for (T v : mask.data()) n += v > T{0.5} ? T{1} : T{0};
    return n;
}

// sum(mask * |a - b|) / sum(mask)
template <class T>
ad::Var<T> masked_l1(const ad::Var<T>& diff, const BasicTensor<T>& mask) {
    ad::Tape<T>& tape = *diff.tape();
    const T n = mask_count(mask);
    if (n == T{0}) throw AlignmentError("masked_l1: no valid pixels");
    return ad::scale(ad::sum(ad::mul(ad::abs(diff), tape.constant(mask))), T{1} / n);
}

template <class T>
void check_target(const ad::Var<T>& pred, const SequenceTarget<T>& target, const char* op) {
    if (pred.shape().size() != 2 || pred.shape() != target.gt.shape() || target.mask.shape() != target.gt.shape()) {
        throw ShapeError(std::string(op) + ": prediction " + shape_str(pred.shape()) + " vs target " +
                         shape_str(target.gt.shape()));
    }
}

}  // namespace detail

// Prediction aligned by one (s, t) fitted over the whole sequence.
template <class T>
ad::Var<T> scene_align(const ad::Var<T>& pred, const SequenceTarget<T>& target) {
    return apply_fit(pred, affine_fit(pred, target.gt, target.mask));
}

// Scene-level scale-and-shift-invariant loss: MAE after a sequence-wide fit.
template <class T>
ad::Var<T> loss_ssi_scene(const ad::Var<T>& pred, const SequenceTarget<T>& target) {
    detail::check_target(pred, target, "loss_ssi_scene");
    ad::Tape<T>& tape = *pred.tape();
    return detail::masked_l1(ad::sub(scene_align(pred, target), tape.constant(target.gt)), target.mask);
}

// Temporal gradient matching on an already aligned prediction:
// mean over t >= 1 and pixels valid in both t and t-1 of
// |(a_t - a_{t-1}) - (g_t - g_{t-1})|.
template <class T>
ad::Var<T> tgm_aligned(const ad::Var<T>& aligned, const SequenceTarget<T>& target) {
    detail::check_target(aligned, target, "tgm_aligned");
    const std::size_t N = target.frames(), P = target.pixels();
    if (N < 2) throw std::invalid_argument("tgm: needs at least 2 frames");
    ad::Tape<T>& tape = *aligned.tape();
    BasicTensor<T> gdiff({N - 1, P}), pair_mask({N - 1, P});
    for (std::size_t t = 1; t < N; ++t)
        for (std::size_t i = 0; i < P; ++i) {
            gdiff[(t - 1) * P + i] = target.gt[t * P + i] - target.gt[(t - 1) * P + i];
            pair_mask[(t - 1) * P + i] =
                (target.mask[t * P + i] > T{0.5} && target.mask[(t - 1) * P + i] > T{0.5}) ? T{1} : T{0};
        }
    ad::Var<T> adiff = ad::sub(ad::slice0(aligned, 1, N), ad::slice0(aligned, 0, N - 1));
    return detail::masked_l1(ad::sub(adiff, tape.constant(gdiff)), pair_mask);
}

template <class T>
ad::Var<T> loss_tgm(const ad::Var<T>& pred, const SequenceTarget<T>& target) {
    detail::check_target(pred, target, "loss_tgm");
    return tgm_aligned(scene_align(pred, target), target);
}

// Scale-and-shift consistency: per frame, the prediction aligned with the
// frame-0 fit versus the same frame aligned with its own fit; per-frame masked
// L1, averaged over all N frames (frame 0 contributes exactly zero).
template <class T>
ad::Var<T> loss_sascon(const ad::Var<T>& pred, const SequenceTarget<T>& target) {
    detail::check_target(pred, target, "loss_sascon");
    const std::size_t N = target.frames();
    if (N == 0) throw std::invalid_argument("loss_sascon: empty sequence");
    ad::Tape<T>& tape = *pred.tape();
    const SequenceTarget<T> t0 = target.frame(0);
    const ad::Var<T> first_fit = affine_fit(ad::slice0(pred, 0, 1), t0.gt, t0.mask);
    ad::Var<T> total = tape.constant(BasicTensor<T>::scalar(T{0}));
    for (std::size_t i = 1; i < N; ++i) {
        const SequenceTarget<T> ti = target.frame(i);
        const ad::Var<T> pi = ad::slice0(pred, i, i + 1);
        const ad::Var<T> own_fit = affine_fit(pi, ti.gt, ti.mask);
        const ad::Var<T> diff = ad::sub(apply_fit(pi, first_fit), apply_fit(pi, own_fit));
        total = ad::add(total, detail::masked_l1(diff, ti.mask));
    }
    return ad::scale(total, T{1} / static_cast<T>(N));
}

// alpha * SSI + beta * TGM. Terms are recorded in a fixed order so the
// backward pass accumulates identically to loss_terms.
template <class T>
ad::Var<T> loss_vda(const ad::Var<T>& pred, const SequenceTarget<T>& target, const LossWeights& w) {
    const ad::Var<T> ssi = loss_ssi_scene(pred, target);
    const ad::Var<T> tgm = loss_tgm(pred, target);
    return ad::add(ad::scale(ssi, static_cast<T>(w.alpha)), ad::scale(tgm, static_cast<T>(w.beta)));
}

template <class T>
struct LossTerms {
    ad::Var<T> total;
    double ssi = 0.0, tgm = 0.0, sascon = 0.0;
};

// alpha * SSI + beta * TGM + gamma * SaSCon. With gamma == 0 the SaSCon term is
// not evaluated and the result is exactly loss_vda.
template <class T>
LossTerms<T> loss_terms(const ad::Var<T>& pred, const SequenceTarget<T>& target, const LossWeights& w) {
    const ad::Var<T> ssi = loss_ssi_scene(pred, target);
    const ad::Var<T> tgm = loss_tgm(pred, target);
    LossTerms<T> out;
    out.ssi = ssi.value().item();
    out.tgm = tgm.value().item();
    out.total = ad::add(ad::scale(ssi, static_cast<T>(w.alpha)), ad::scale(tgm, static_cast<T>(w.beta)));
    if (w.gamma != 0.0) {
        const ad::Var<T> sas = loss_sascon(pred, target);
        out.sascon = sas.value().item();
        out.total = ad::add(out.total, ad::scale(sas, static_cast<T>(w.gamma)));
    }
    return out;
}

template <class T>
ad::Var<T> loss_total(const ad::Var<T>& pred, const SequenceTarget<T>& target, const LossWeights& w) {
    return loss_terms(pred, target, w).total;
}

}  // namespace ovda
