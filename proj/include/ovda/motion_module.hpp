#pragma once

// Temporal attention block ("motion module") with two execution modes:
//
//  * batch:  all N frames at once, each query frame q attending to key frames
//            k with 0 <= q - k < c (banded causal mask); used for training.
//  * stream: one frame at a time against a FeatureCache holding the last c
//            pre-positional-encoding latents; used for online inference.
//
// Positional encoding is an additive learned table indexed by age within the
// window (0 = current frame). In batch mode the projection of the table is
// folded into the kernel (K = Y Wk + bk + PE[age] Wk); in stream mode the
// encoding is added to each cached latent before projecting. Both routes
// compute the same function.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "ovda/attention_cache.hpp"
#include "ovda/autodiff.hpp"
#include "ovda/kernels.hpp"
#include "ovda/tensor.hpp"

namespace ovda {

enum class Layout { FrameMajor, TokenMajor };

// Hidden features of N frames with S spatial tokens and C channels, stored as
// [N, S, C] (frame-major) or [S, N, C] (token-major).
template <class T>
struct LatentFeatures {
    BasicTensor<T> data;
    Layout layout = Layout::FrameMajor;

    std::size_t frames() const { return layout == Layout::FrameMajor ? data.dim(0) : data.dim(1); }
    std::size_t tokens() const { return layout == Layout::FrameMajor ? data.dim(1) : data.dim(0); }
    std::size_t channels() const { return data.dim(2); }
};

template <class T>
LatentFeatures<T> reorder_temporal(const LatentFeatures<T>& x) {
    return LatentFeatures<T>{ad::swap_leading_axes(x.data),
                             x.layout == Layout::FrameMajor ? Layout::TokenMajor : Layout::FrameMajor};
}

// Admissibility of (query frame, key frame) pairs during batch training.
struct WindowedMask {
    std::size_t context = 1;
    std::size_t frames = 1;

    bool admissible(std::size_t q, std::size_t k) const { return k <= q && q - k < context; }
};

template <class T>
struct MotionModuleParams {
    BasicTensor<T> ln_gain, ln_bias;  // [C]
    BasicTensor<T> wq, bq, wk, bk, wv, bv, wo, bo;
    BasicTensor<T> pos_table;  // [c, C], row a = encoding of age a

    std::size_t channels() const { return ln_gain.size(); }
    std::size_t context() const { return pos_table.dim(0); }

    std::vector<std::pair<std::string, BasicTensor<T>*>> named() {
        return {{"ln_gain", &ln_gain}, {"ln_bias", &ln_bias}, {"wq", &wq}, {"bq", &bq}, {"wk", &wk},
                {"bk", &bk},           {"wv", &wv},           {"bv", &bv}, {"wo", &wo}, {"bo", &bo},
                {"pos_table", &pos_table}};
    }

    static MotionModuleParams init(std::size_t channels, std::size_t context, std::mt19937_64& rng,
                                   T out_scale = T{0.5}) {
        std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(channels)));
        auto mat = [&](T gain) {
            BasicTensor<T> w({channels, channels});
            for (T& v : w.data()) v = static_cast<T>(normal(rng)) * gain;
            return w;
        };
        MotionModuleParams p;
        p.ln_gain = BasicTensor<T>::ones({channels});
        p.ln_bias = BasicTensor<T>::zeros({channels});
        p.wq = mat(T{1});
        p.bq = BasicTensor<T>::zeros({channels});
        p.wk = mat(T{1});
        p.bk = BasicTensor<T>::zeros({channels});
        p.wv = mat(T{1});
        p.bv = BasicTensor<T>::zeros({channels});
        p.wo = mat(out_scale);
        p.bo = BasicTensor<T>::zeros({channels});
        p.pos_table = sinusoidal_table(context, channels);
        return p;
    }

    static BasicTensor<T> sinusoidal_table(std::size_t rows, std::size_t channels) {
        BasicTensor<T> pe({rows, channels});
        for (std::size_t a = 0; a < rows; ++a) {
            for (std::size_t c = 0; c < channels; ++c) {
                const double freq = std::pow(10000.0, -static_cast<double>(2 * (c / 2)) / static_cast<double>(channels));
                const double angle = static_cast<double>(a) * freq;
                pe[a * channels + c] = static_cast<T>(0.5 * (c % 2 == 0 ? std::sin(angle) : std::cos(angle)));
            }
        }
        return pe;
    }
};

// Parameters bound to a tape as Vars (trainable or constant).
template <class T>
struct MotionModuleVars {
    ad::Var<T> ln_gain, ln_bias, wq, bq, wk, bk, wv, bv, wo, bo, pos_table;

    static MotionModuleVars bind(ad::Tape<T>& tape, const MotionModuleParams<T>& p, bool trainable) {
        auto b = [&](const BasicTensor<T>& t) { return trainable ? tape.parameter(t) : tape.constant(t); };
        return {b(p.ln_gain), b(p.ln_bias), b(p.wq), b(p.bq), b(p.wk), b(p.bk),
                b(p.wv),      b(p.bv),      b(p.wo), b(p.bo), b(p.pos_table)};
    }
};

inline constexpr double kLayerNormEps = 1e-5;

// Adds row `age` of the positional table to every token of a single-frame latent [S, C].
template <class T>
BasicTensor<T> positional_encode(const BasicTensor<T>& latent, std::size_t age, const BasicTensor<T>& pos_table) {
    if (age >= pos_table.dim(0)) {
        throw std::out_of_range("positional_encode: age " + std::to_string(age) + " outside table of " +
                                std::to_string(pos_table.dim(0)) + " rows");
    }
    const std::size_t C = pos_table.dim(1);
    if (latent.cols() != C) throw ShapeError("positional_encode: latent " + shape_str(latent.shape()));
    BasicTensor<T> out = latent;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += pos_table[age * C + i % C];
    return out;
}

namespace detail {

template <class T>
BasicTensor<T> affine(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& b) {
    BasicTensor<T> y = kernels::parallel::matmul(x, w);
    const std::size_t n = w.dim(1);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += b[i % n];
    return y;
}

}  // namespace detail

template <class T>
struct StreamAttention {
    BasicTensor<T> out;      // [S, C], after the output projection
    BasicTensor<T> weights;  // [S, w], oldest first
};

// Attention of the current frame [S, C] over a window of latents (oldest
// first, newest == current frame). Window entries are positionally encoded by
// age (w-1-position) and projected to keys/values on every call.
template <class T>
StreamAttention<T> attend_streaming(const BasicTensor<T>& current, const std::vector<BasicTensor<T>>& window,
                                    const MotionModuleParams<T>& p, std::size_t context) {
    const std::size_t w = window.size();
    if (w == 0) throw std::invalid_argument("attend_streaming: empty window");
    if (w > context || context > p.context()) {
        throw std::invalid_argument("attend_streaming: window of " + std::to_string(w) + " frames exceeds context " +
                                    std::to_string(context));
    }
    if (current.rank() != 2) throw ShapeError("attend_streaming: current frame must be [S, C]");
    const std::size_t S = current.dim(0), C = current.dim(1);
    const BasicTensor<T> q = detail::affine(positional_encode(current, 0, p.pos_table), p.wq, p.bq);
    BasicTensor<T> keys({w, S, C}), values({w, S, C});
    for (std::size_t i = 0; i < w; ++i) {
        if (window[i].shape() != current.shape()) throw ShapeError("attend_streaming: window latent shape mismatch");
        const BasicTensor<T> encoded = positional_encode(window[i], w - 1 - i, p.pos_table);
        const BasicTensor<T> k = detail::affine(encoded, p.wk, p.bk);
        const BasicTensor<T> v = detail::affine(encoded, p.wv, p.bv);
        std::copy(k.data().begin(), k.data().end(), keys.data().begin() + static_cast<std::ptrdiff_t>(i * S * C));
        std::copy(v.data().begin(), v.data().end(), values.data().begin() + static_cast<std::ptrdiff_t>(i * S * C));
    }
    auto att = kernels::parallel::window_attention(q, keys, values, static_cast<T>(1.0 / std::sqrt(static_cast<double>(C))));
    return {detail::affine(att.out, p.wo, p.bo), std::move(att.probs)};
}

// Batch attention over y [N, S, C] (frame-major, already layer-normed) with a
// banded causal mask of width `band`. Returns the output-projected attention,
// frame-major. Ages beyond the positional table reuse its oldest row.
template <class T>
ad::Var<T> attend_batch_masked(const ad::Var<T>& y, const MotionModuleVars<T>& p, std::size_t band) {
    const std::size_t N = y.shape()[0], C = y.shape()[2];
    const std::size_t rows = p.pos_table.shape()[0];
    ad::Var<T> table = p.pos_table;
    const std::size_t needed = std::min(band, N);
    if (needed > rows) {
        std::vector<std::size_t> idx(needed);
        for (std::size_t a = 0; a < needed; ++a) idx[a] = std::min(a, rows - 1);
        table = ad::gather_rows(table, idx);
    }
    ad::Var<T> age0 = ad::reshape(ad::slice0(p.pos_table, 0, 1), {C});
    ad::Var<T> q = ad::linear(ad::add_row(y, age0), p.wq, p.bq);
    ad::Var<T> kb = ad::linear(y, p.wk, p.bk);
    ad::Var<T> vb = ad::linear(y, p.wv, p.bv);
    ad::Var<T> kp = ad::matmul(table, p.wk);
    ad::Var<T> vp = ad::matmul(table, p.wv);
    const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(C)));
    ad::Var<T> att = ad::band_attention(ad::swap_leading(q), ad::swap_leading(kb), kp, ad::swap_leading(vb), vp, band,
                                        scale);
    return ad::linear(ad::swap_leading(att), p.wo, p.bo);
}

// Batch-mode module: x + Attn(LN(x)) over x [N, S, C].
template <class T>
ad::Var<T> motion_module_batch(const ad::Var<T>& x, const MotionModuleVars<T>& p, std::size_t band) {
    ad::Var<T> y = ad::layer_norm(x, p.ln_gain, p.ln_bias, static_cast<T>(kLayerNormEps));
    return ad::add(x, attend_batch_masked(y, p, band));
}

template <class T>
BasicTensor<T> layer_norm_frame(const BasicTensor<T>& x, const BasicTensor<T>& gain, const BasicTensor<T>& bias) {
    ad::Tape<T> tape(false);
    return ad::layer_norm(tape.constant(x), tape.constant(gain), tape.constant(bias), static_cast<T>(kLayerNormEps))
        .value();
}

// Stream-mode module for one frame x [S, C]: the normalised latent is pushed
// into the bank before attending, so the window always ends with this frame.
template <class T>
BasicTensor<T> motion_module_stream(const BasicTensor<T>& x, std::int64_t frame_index, CacheBank<T>& bank,
                                    const MotionModuleParams<T>& p) {
    const BasicTensor<T> y = layer_norm_frame(x, p.ln_gain, p.ln_bias);
    bank.push(frame_index, y);
    const auto window = bank.window_for(frame_index);
    StreamAttention<T> att = attend_streaming(y, window, p, bank.capacity());
    BasicTensor<T> out = x;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += att.out[i];
    return out;
}

}  // namespace ovda
