#pragma once

// Toy video depth model: frozen patch encoder -> spatiotemporal head
// (per-frame blocks interleaved with motion modules) -> per-patch inverse
// depth, upsampled to the input resolution.

#include <array>
#include <cstddef>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ovda/attention_cache.hpp"
#include "ovda/autodiff.hpp"
#include "ovda/motion_module.hpp"
#include "ovda/tensor.hpp"

namespace ovda {

struct ModelConfig {
    std::size_t patch = 4;
    std::size_t encoder_channels = 16;
    std::size_t head_channels = 16;
    std::size_t motion_modules = 2;
    std::size_t context = 16;
    std::size_t caches = 1;
    PrecisionMode precision = PrecisionMode::Full32;
    std::uint64_t seed = 0;
    // Multi-scale fusion factors of the full-size head. Recorded for reference;
    // this head runs at a single scale.
    std::array<double, 4> fusion_factors{4.0, 2.0, 1.0, 0.5};

    void validate() const {
        if (patch == 0) throw std::invalid_argument("ModelConfig: patch must be >= 1");
        if (encoder_channels == 0 || head_channels == 0) throw std::invalid_argument("ModelConfig: channels must be >= 1");
        if (motion_modules == 0) throw std::invalid_argument("ModelConfig: need at least one motion module");
        if (context == 0) throw std::invalid_argument("ModelConfig: context must be >= 1");
        if (caches == 0) throw std::invalid_argument("ModelConfig: caches must be >= 1");
    }
};

// Patch-grid features of one frame ([S, E]) or a sequence ([N, S, E]).
template <class T>
struct EncoderFeatures {
    BasicTensor<T> tokens;
    std::size_t grid_h = 0;
    std::size_t grid_w = 0;

    std::size_t tokens_per_frame() const { return grid_h * grid_w; }
};

// Frozen patchify-and-project encoder. Each token sees only its own p x p patch.
template <class T>
struct EncoderStub {
    std::size_t patch = 4;
    BasicTensor<T> weight;  // [3 p^2, E]
    BasicTensor<T> bias;    // [E]

    static EncoderStub init(std::size_t patch, std::size_t channels, std::uint64_t seed) {
        std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
        const std::size_t in = 3 * patch * patch;
        std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(in)));
        EncoderStub e;
        e.patch = patch;
        e.weight = BasicTensor<T>({in, channels});
        for (T& v : e.weight.data()) v = static_cast<T>(2.0 * normal(rng));
        e.bias = BasicTensor<T>({channels});
        for (T& v : e.bias.data()) v = static_cast<T>(0.1 * normal(rng));
        return e;
    }

    std::vector<std::pair<std::string, BasicTensor<T>*>> named() {
        return {{"encoder.weight", &weight}, {"encoder.bias", &bias}};
    }
};

// rgb [H, W, 3] with values in [0, 1] -> tokens [S, E], patches in row-major grid order.
template <class T>
EncoderFeatures<T> encode_frame(const EncoderStub<T>& enc, const BasicTensor<T>& rgb) {
    const std::size_t p = enc.patch;
    if (rgb.rank() != 3 || rgb.dim(2) != 3) throw ShapeError("encode_frame: expected [H, W, 3], got " + shape_str(rgb.shape()));
    const std::size_t H = rgb.dim(0), W = rgb.dim(1);
    if (H % p != 0 || W % p != 0 || H == 0 || W == 0) {
        throw ShapeError("encode_frame: " + std::to_string(H) + "x" + std::to_string(W) +
                         " is not divisible by patch size " + std::to_string(p));
    }
    const std::size_t gh = H / p, gw = W / p, in = 3 * p * p;
    BasicTensor<T> patches({gh * gw, in});
    for (std::size_t gy = 0; gy < gh; ++gy)
        for (std::size_t gx = 0; gx < gw; ++gx)
            for (std::size_t dy = 0; dy < p; ++dy)
                for (std::size_t dx = 0; dx < p; ++dx)
                    for (std::size_t ch = 0; ch < 3; ++ch)
                        patches[(gy * gw + gx) * in + (dy * p + dx) * 3 + ch] =
                            rgb[((gy * p + dy) * W + gx * p + dx) * 3 + ch];
    return {detail::affine(patches, enc.weight, enc.bias), gh, gw};
}

template <class T>
EncoderFeatures<T> encode_sequence(const EncoderStub<T>& enc, const std::vector<BasicTensor<T>>& frames) {
    if (frames.empty()) throw std::invalid_argument("encode_sequence: no frames");
    EncoderFeatures<T> out;
    std::vector<T> all;
    for (const auto& f : frames) {
        EncoderFeatures<T> one = encode_frame(enc, f);
        if (out.grid_h == 0) {
            out.grid_h = one.grid_h;
            out.grid_w = one.grid_w;
        } else if (one.grid_h != out.grid_h || one.grid_w != out.grid_w) {
            throw ShapeError("encode_sequence: frames differ in size");
        }
        all.insert(all.end(), one.tokens.data().begin(), one.tokens.data().end());
    }
    const std::size_t E = enc.weight.dim(1);
    out.tokens = BasicTensor<T>({frames.size(), out.grid_h * out.grid_w, E}, std::move(all));
    return out;
}

template <class T>
struct BlockParams {
    BasicTensor<T> ln_gain, ln_bias, w, b;
};

template <class T>
struct HeadParams {
    BasicTensor<T> proj_w, proj_b;
    std::vector<BlockParams<T>> blocks;
    std::vector<MotionModuleParams<T>> motion;
    BasicTensor<T> out_ln_gain, out_ln_bias, out_w, out_b;

    // Parameters in declared (checkpoint and optimiser) order.
    std::vector<std::pair<std::string, BasicTensor<T>*>> named() {
        std::vector<std::pair<std::string, BasicTensor<T>*>> out{{"head.proj_w", &proj_w}, {"head.proj_b", &proj_b}};
        for (std::size_t j = 0; j < blocks.size(); ++j) {
            const std::string pre = "head.block" + std::to_string(j) + ".";
            out.emplace_back(pre + "ln_gain", &blocks[j].ln_gain);
            out.emplace_back(pre + "ln_bias", &blocks[j].ln_bias);
            out.emplace_back(pre + "w", &blocks[j].w);
            out.emplace_back(pre + "b", &blocks[j].b);
            for (auto& [name, ptr] : motion[j].named()) {
                out.emplace_back("head.motion" + std::to_string(j) + "." + name, ptr);
            }
        }
        out.emplace_back("head.out_ln_gain", &out_ln_gain);
        out.emplace_back("head.out_ln_bias", &out_ln_bias);
        out.emplace_back("head.out_w", &out_w);
        out.emplace_back("head.out_b", &out_b);
        return out;
    }
};

template <class T>
struct Model {
    ModelConfig config;
    EncoderStub<T> encoder;
    HeadParams<T> head;

    static Model create(const ModelConfig& cfg) {
        cfg.validate();
        Model m;
        m.config = cfg;
        m.encoder = EncoderStub<T>::init(cfg.patch, cfg.encoder_channels, cfg.seed);
        std::mt19937_64 rng(cfg.seed);
        const std::size_t E = cfg.encoder_channels, C = cfg.head_channels;
        auto normal_mat = [&](std::size_t r, std::size_t c, double stddev) {
            std::normal_distribution<double> normal(0.0, stddev);
            BasicTensor<T> w({r, c});
            for (T& v : w.data()) v = static_cast<T>(normal(rng));
            return w;
        };
        m.head.proj_w = normal_mat(E, C, 1.0 / std::sqrt(static_cast<double>(E)));
        m.head.proj_b = BasicTensor<T>::zeros({C});
        for (std::size_t j = 0; j < cfg.motion_modules; ++j) {
            BlockParams<T> b;
            b.ln_gain = BasicTensor<T>::ones({C});
            b.ln_bias = BasicTensor<T>::zeros({C});
            b.w = normal_mat(C, C, 1.0 / std::sqrt(static_cast<double>(C)));
            b.b = BasicTensor<T>::zeros({C});
            m.head.blocks.push_back(std::move(b));
            m.head.motion.push_back(MotionModuleParams<T>::init(C, cfg.context, rng));
        }
        m.head.out_ln_gain = BasicTensor<T>::ones({C});
        m.head.out_ln_bias = BasicTensor<T>::zeros({C});
        m.head.out_w = normal_mat(C, 1, 1.0 / std::sqrt(static_cast<double>(C)));
        m.head.out_b = BasicTensor<T>::scalar(T{1});
        return m;
    }

    std::vector<std::pair<std::string, BasicTensor<T>*>> named_parameters() {
        auto out = encoder.named();
        for (auto& np : head.named()) out.push_back(np);
        return out;
    }

    template <class U>
    Model<U> cast() const {
        Model<U> m;
        m.config = config;
        m.encoder.patch = encoder.patch;
        m.encoder.weight = encoder.weight.template cast<U>();
        m.encoder.bias = encoder.bias.template cast<U>();
        Model<T> self = *this;
        auto src = self.head.named();
        m.head.blocks.resize(head.blocks.size());
        m.head.motion.resize(head.motion.size());
        auto dst = m.head.named();
        for (std::size_t i = 0; i < src.size(); ++i) *dst[i].second = src[i].second->template cast<U>();
        return m;
    }
};

// Head parameters bound to a tape, in HeadParams::named() order.
template <class T>
struct HeadVars {
    ad::Var<T> proj_w, proj_b;
    struct Block {
        ad::Var<T> ln_gain, ln_bias, w, b;
    };
    std::vector<Block> blocks;
    std::vector<MotionModuleVars<T>> motion;
    ad::Var<T> out_ln_gain, out_ln_bias, out_w, out_b;

    static HeadVars bind(ad::Tape<T>& tape, const HeadParams<T>& p, bool trainable) {
        auto b = [&](const BasicTensor<T>& t) { return trainable ? tape.parameter(t) : tape.constant(t); };
        HeadVars v;
        v.proj_w = b(p.proj_w);
        v.proj_b = b(p.proj_b);
        for (std::size_t j = 0; j < p.blocks.size(); ++j) {
            v.blocks.push_back({b(p.blocks[j].ln_gain), b(p.blocks[j].ln_bias), b(p.blocks[j].w), b(p.blocks[j].b)});
            v.motion.push_back(MotionModuleVars<T>::bind(tape, p.motion[j], trainable));
        }
        v.out_ln_gain = b(p.out_ln_gain);
        v.out_ln_bias = b(p.out_ln_bias);
        v.out_w = b(p.out_w);
        v.out_b = b(p.out_b);
        return v;
    }

    std::vector<ad::Var<T>> flat() const {
        std::vector<ad::Var<T>> out{proj_w, proj_b};
        for (std::size_t j = 0; j < blocks.size(); ++j) {
            const auto& bl = blocks[j];
            const auto& mm = motion[j];
            for (const auto& v : {bl.ln_gain, bl.ln_bias, bl.w, bl.b, mm.ln_gain, mm.ln_bias, mm.wq, mm.bq, mm.wk,
                                  mm.bk, mm.wv, mm.bv, mm.wo, mm.bo, mm.pos_table})
                out.push_back(v);
        }
        for (const auto& v : {out_ln_gain, out_ln_bias, out_w, out_b}) out.push_back(v);
        return out;
    }
};

namespace detail {

template <class T>
ad::Var<T> frame_block(const ad::Var<T>& x, const typename HeadVars<T>::Block& b) {
    ad::Var<T> y = ad::layer_norm(x, b.ln_gain, b.ln_bias, static_cast<T>(kLayerNormEps));
    return ad::add(x, ad::tanh(ad::linear(y, b.w, b.b)));
}

template <class T>
ad::Var<T> depth_readout(const ad::Var<T>& h, const HeadVars<T>& v) {
    ad::Var<T> y = ad::layer_norm(h, v.out_ln_gain, v.out_ln_bias, static_cast<T>(kLayerNormEps));
    return ad::linear(y, v.out_w, v.out_b);
}

}  // namespace detail

// Batch (training) forward over features [N, S, E]; returns inverse depth [N, H*W].
// `band` is the attention mask width and defaults to the model's context.
template <class T>
ad::Var<T> head_forward_batch(const ad::Var<T>& features, const HeadVars<T>& v, const ModelConfig& cfg,
                              std::size_t grid_h, std::size_t grid_w, std::size_t band = 0) {
    if (features.shape().size() != 3 || features.shape()[0] == 0) {
        throw ShapeError("head_forward_batch: features must be [N, S, E] with N >= 1");
    }
    if (features.shape()[1] != grid_h * grid_w) throw ShapeError("head_forward_batch: token count does not match grid");
    if (band == 0) band = cfg.context;
    const std::size_t N = features.shape()[0], S = features.shape()[1];
    ad::Var<T> h = ad::linear(features, v.proj_w, v.proj_b);
    for (std::size_t j = 0; j < v.blocks.size(); ++j) {
        h = detail::frame_block(h, v.blocks[j]);
        h = motion_module_batch(h, v.motion[j], band);
    }
    ad::Var<T> d = ad::reshape(detail::depth_readout(h, v), {N, S});
    return ad::upsample_nearest(d, grid_h, grid_w, cfg.patch);
}

// Inference-only batch prediction; one [H, W] inverse-depth map per frame.
template <class T>
std::vector<BasicTensor<T>> predict_batch(const Model<T>& model, const EncoderFeatures<T>& features,
                                          std::size_t band = 0) {
    ad::Tape<T> tape(false);
    const HeadVars<T> v = HeadVars<T>::bind(tape, model.head, false);
    ad::Var<T> out = head_forward_batch(tape.constant(features.tokens), v, model.config, features.grid_h,
                                        features.grid_w, band);
    const std::size_t N = features.tokens.dim(0), H = features.grid_h * model.config.patch,
                      W = features.grid_w * model.config.patch;
    std::vector<BasicTensor<T>> frames;
    for (std::size_t n = 0; n < N; ++n) {
        std::vector<T> px(out.value().data().begin() + static_cast<std::ptrdiff_t>(n * H * W),
                          out.value().data().begin() + static_cast<std::ptrdiff_t>((n + 1) * H * W));
        frames.emplace_back(Shape{H, W}, std::move(px));
    }
    return frames;
}

class SessionError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

// Online inference state: one cache bank per motion module and a frame counter.
template <class T>
class StreamingSession {
public:
    // `context` may be smaller than the model's trained context (0 = model's).
    explicit StreamingSession(const Model<T>& model, std::size_t context = 0, std::size_t caches = 0,
                              std::optional<PrecisionMode> precision = std::nullopt)
        : model_(&model),
          context_(context ? context : model.config.context),
          caches_(caches ? caches : model.config.caches),
          precision_(precision.value_or(model.config.precision)) {
        if (context_ > model.config.context) {
            throw std::invalid_argument("StreamingSession: context " + std::to_string(context_) +
                                        " exceeds the model's positional table (" +
                                        std::to_string(model.config.context) + ")");
        }
        reset();
    }

    void reset() {
        banks_.clear();
        for (std::size_t j = 0; j < model_->head.motion.size(); ++j) {
            banks_.emplace_back(context_, caches_, precision_, "motion" + std::to_string(j));
        }
        t_ = 0;
    }

    // Processes the next frame's features [S, E] and returns inverse depth [H, W].
    BasicTensor<T> step(const EncoderFeatures<T>& frame) { return advance(t_, frame); }

    BasicTensor<T> advance(std::int64_t frame_index, const EncoderFeatures<T>& frame) {
        if (frame_index != t_) {
            throw SessionError("StreamingSession: expected frame " + std::to_string(t_) + ", got " +
                               std::to_string(frame_index));
        }
        if (frame.tokens.rank() != 2) throw ShapeError("StreamingSession: expected one frame of features [S, E]");
        const ModelConfig& cfg = model_->config;
        const HeadParams<T>& hp = model_->head;
        ad::Tape<T> tape(false);
        tape.set_check_finite(check_finite_);
        auto c = [&](const BasicTensor<T>& t) { return tape.constant(t); };
        BasicTensor<T> h = ad::linear(c(frame.tokens), c(hp.proj_w), c(hp.proj_b)).value();
        for (std::size_t j = 0; j < hp.blocks.size(); ++j) {
            const typename HeadVars<T>::Block b{c(hp.blocks[j].ln_gain), c(hp.blocks[j].ln_bias), c(hp.blocks[j].w),
                                                c(hp.blocks[j].b)};
            h = detail::frame_block(c(h), b).value();
            h = motion_module_stream(h, frame_index, banks_[j], hp.motion[j]);
        }
        ad::Var<T> y = ad::layer_norm(c(h), c(hp.out_ln_gain), c(hp.out_ln_bias), static_cast<T>(kLayerNormEps));
        ad::Var<T> d = ad::linear(y, c(hp.out_w), c(hp.out_b));
        ad::Var<T> up = ad::upsample_nearest(ad::reshape(d, {1, frame.tokens_per_frame()}), frame.grid_h, frame.grid_w,
                                             cfg.patch);
        ++t_;
        return up.value().reshaped({frame.grid_h * cfg.patch, frame.grid_w * cfg.patch});
    }

    std::size_t memory_footprint() const {
        std::size_t n = 0;
        for (const auto& b : banks_) n += b.memory_footprint();
        return n;
    }

    std::int64_t frame_counter() const { return t_; }
    std::size_t context() const { return context_; }
    const std::vector<CacheBank<T>>& banks() const { return banks_; }
    void set_check_finite(bool on) { check_finite_ = on; }

private:
    const Model<T>* model_;
    std::size_t context_;
    std::size_t caches_;
    PrecisionMode precision_;
    std::vector<CacheBank<T>> banks_;
    std::int64_t t_ = 0;
    bool check_finite_ = true;
};

template <class T>
BasicTensor<T> head_forward_stream(StreamingSession<T>& session, std::int64_t frame_index,
                                   const EncoderFeatures<T>& frame) {
    return session.advance(frame_index, frame);
}

template <class T>
void reset_session(StreamingSession<T>& session) {
    session.reset();
}

// Single-frame view into a sequence's features.
template <class T>
EncoderFeatures<T> frame_features(const EncoderFeatures<T>& seq, std::size_t n) {
    const std::size_t S = seq.tokens.dim(1), E = seq.tokens.dim(2);
    std::vector<T> v(seq.tokens.data().begin() + static_cast<std::ptrdiff_t>(n * S * E),
                     seq.tokens.data().begin() + static_cast<std::ptrdiff_t>((n + 1) * S * E));
    return {BasicTensor<T>({S, E}, std::move(v)), seq.grid_h, seq.grid_w};
}

// Runs a whole sequence through a fresh streaming session.
template <class T>
std::vector<BasicTensor<T>> predict_stream(const Model<T>& model, const EncoderFeatures<T>& seq,
                                           std::size_t context = 0, std::size_t caches = 0,
                                           std::optional<PrecisionMode> precision = std::nullopt) {
    StreamingSession<T> session(model, context, caches, precision);
    std::vector<BasicTensor<T>> out;
    for (std::size_t n = 0; n < seq.tokens.dim(0); ++n) out.push_back(session.step(frame_features(seq, n)));
    return out;
}

// Versioned binary checkpoint (float32 little-endian); layout in docs/checkpoint.md.
void save_checkpoint(const std::string& path, Model<float>& model, std::uint64_t step);
std::pair<Model<float>, std::uint64_t> load_checkpoint(const std::string& path);

}  // namespace ovda
