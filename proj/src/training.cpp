#include "ovda/training.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numbers>
#include <ostream>
#include <sstream>

namespace ovda {

std::vector<double> frame_augment(std::vector<Tensor>& rgb, const AugmentConfig& cfg, std::mt19937_64& rng) {
    if (!(cfg.max_fraction >= 0.0 && cfg.max_fraction <= 1.0)) {
        throw std::invalid_argument("frame_augment: max_fraction must be in [0, 1]");
    }
    if (!(cfg.max_rect_side > 0.0 && cfg.max_rect_side <= 1.0)) {
        throw std::invalid_argument("frame_augment: max_rect_side must be in (0, 1]");
    }
    std::vector<double> fractions;
    fractions.reserve(rgb.size());
    for (Tensor& frame : rgb) {
        if (frame.rank() != 3 || frame.dim(2) != 3) throw ShapeError("frame_augment: expected [H, W, 3] frames");
        if (!cfg.enabled || cfg.max_fraction == 0.0) {
            fractions.push_back(0.0);
            continue;
        }
        const std::size_t H = frame.dim(0), W = frame.dim(1), P = H * W;
        const double f = std::uniform_real_distribution<double>(0.0, cfg.max_fraction)(rng);
        const auto cap = static_cast<std::size_t>(std::floor(cfg.max_fraction * static_cast<double>(P)));
        const std::size_t target = std::min(cap, static_cast<std::size_t>(std::floor(f * static_cast<double>(P))));
        const std::size_t max_w = std::max<std::size_t>(1, static_cast<std::size_t>(cfg.max_rect_side * W));
        const std::size_t max_h = std::max<std::size_t>(1, static_cast<std::size_t>(cfg.max_rect_side * H));
        std::vector<char> covered(P, 0);
        std::size_t count = 0;
        while (count < target) {
            const std::size_t rw = std::uniform_int_distribution<std::size_t>(1, max_w)(rng);
            const std::size_t rh = std::uniform_int_distribution<std::size_t>(1, max_h)(rng);
            const std::size_t x0 = std::uniform_int_distribution<std::size_t>(0, W - rw)(rng);
            const std::size_t y0 = std::uniform_int_distribution<std::size_t>(0, H - rh)(rng);
            for (std::size_t y = y0; y < y0 + rh && count < target; ++y)
                for (std::size_t x = x0; x < x0 + rw && count < target; ++x) {
                    char& c = covered[y * W + x];
                    if (!c) {
                        c = 1;
                        ++count;
                    }
                }
        }
        for (std::size_t i = 0; i < P; ++i)
            if (covered[i]) frame[i * 3] = frame[i * 3 + 1] = frame[i * 3 + 2] = 0.0f;
        fractions.push_back(static_cast<double>(count) / static_cast<double>(P));
    }
    return fractions;
}

double cosine_lr(double lr, double lr_min, std::size_t step, std::size_t horizon) {
    if (horizon == 0) return lr;
    const double progress = std::min(1.0, static_cast<double>(step) / static_cast<double>(horizon));
    return lr_min + 0.5 * (lr - lr_min) * (1.0 + std::cos(std::numbers::pi * progress));
}

SequenceTarget<float> make_target(const DepthSequence& depth) {
    depth.validate();
    if (depth.size() == 0) throw std::invalid_argument("make_target: empty sequence");
    const std::size_t N = depth.size(), P = depth.frames[0].size();
    SequenceTarget<float> t{Tensor({N, P}), Tensor({N, P})};
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t f = 0; f < N; ++f)
        for (std::size_t i = 0; i < P; ++i) {
            const float z = depth.frames[f][i];
            if (depth.valid[f][i] > 0.5f && z > 0.0f) {
                t.gt[f * P + i] = 1.0f / z;
                t.mask[f * P + i] = 1.0f;
                sum += 1.0 / z;
                ++n;
            }
        }
    if (n == 0) throw AlignmentError("make_target: no valid pixels");
    const auto norm = static_cast<float>(static_cast<double>(n) / sum);
    for (float& v : t.gt.data()) v *= norm;
    return t;
}

TrainSample make_sample(const Model<float>& model, const LoadedSequence& seq, std::size_t start, std::size_t stride,
                        std::size_t clip_frames, const AugmentConfig* augment, std::mt19937_64& rng) {
    if (stride == 0 || clip_frames == 0) throw std::invalid_argument("make_sample: stride and clip length must be >= 1");
    const std::size_t last = start + (clip_frames - 1) * stride;
    if (last >= seq.rgb.size()) {
        throw std::out_of_range("make_sample: clip ends at frame " + std::to_string(last) + " of " +
                                std::to_string(seq.rgb.size()));
    }
    std::vector<Tensor> rgb;
    DepthSequence depth;
    for (std::size_t k = 0; k < clip_frames; ++k) {
        const std::size_t f = start + k * stride;
        rgb.push_back(seq.rgb[f]);
        depth.frames.push_back(seq.depth.frames[f]);
        depth.valid.push_back(seq.depth.valid[f]);
    }
    if (augment) frame_augment(rgb, *augment, rng);
    return {encode_sequence(model.encoder, rgb), make_target(depth)};
}

TrainSample sample_clip(const Model<float>& model, const std::vector<LoadedSequence>& pool, const TrainConfig& cfg,
                        const AugmentConfig& augment, std::mt19937_64& rng) {
    if (pool.empty()) throw std::invalid_argument("sample_clip: empty training pool");
    if (cfg.max_stride < 1 || cfg.max_stride > 4) throw std::invalid_argument("sample_clip: max_stride must be 1..4");
    if (cfg.clip_frames < 2) throw std::invalid_argument("sample_clip: clips need at least 2 frames");
    const LoadedSequence& seq = pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)];
    if (seq.rgb.size() < 2) throw std::invalid_argument("sample_clip: sequence '" + seq.id + "' has fewer than 2 frames");
    std::size_t stride = std::uniform_int_distribution<std::size_t>(1, cfg.max_stride)(rng);
    // Short sequences: fall back to smaller strides until at least 2 frames fit.
    while (stride > 1 && (seq.rgb.size() - 1) / stride + 1 < 2) --stride;
    const std::size_t clip = std::min(cfg.clip_frames, (seq.rgb.size() - 1) / stride + 1);
    const std::size_t max_start = seq.rgb.size() - 1 - (clip - 1) * stride;
    const std::size_t start = std::uniform_int_distribution<std::size_t>(0, max_start)(rng);
    // Separate stream so clip selection does not depend on whether augmentation is on.
    std::mt19937_64 aug_rng(rng());
    return make_sample(model, seq, start, stride, clip, augment.enabled ? &augment : nullptr, aug_rng);
}

StepStats train_step(Model<float>& model, const std::vector<TrainSample>& batch, const LossWeights& weights,
                     double lr) {
    if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
    if (weights.alpha < 0 || weights.beta < 0 || weights.gamma < 0) {
        throw std::invalid_argument("train_step: loss weights must be non-negative");
    }
    ad::Tape<float> tape;
    const HeadVars<float> vars = HeadVars<float>::bind(tape, model.head, true);
    StepStats stats;
    std::optional<ad::Var<float>> total;
    for (const TrainSample& s : batch) {
        const ad::Var<float> pred = head_forward_batch(tape.constant(s.features.tokens), vars, model.config,
                                                       s.features.grid_h, s.features.grid_w, model.config.context);
        const LossTerms<float> terms = loss_terms(pred, s.target, weights);
        stats.ssi += terms.ssi;
        stats.tgm += terms.tgm;
        stats.sascon += terms.sascon;
        total = total ? ad::add(*total, terms.total) : terms.total;
    }
    const float inv_b = 1.0f / static_cast<float>(batch.size());
    const ad::Var<float> loss = ad::scale(*total, inv_b);
    stats.loss = loss.value().item();
    stats.ssi *= inv_b;
    stats.tgm *= inv_b;
    stats.sascon *= inv_b;
    stats.lr = lr;
    if (!std::isfinite(stats.loss)) {
        std::ostringstream os;
        os << "train_step: non-finite loss (ssi=" << stats.ssi << ", tgm=" << stats.tgm << ", sascon=" << stats.sascon
           << ")";
        throw NonFiniteError(os.str());
    }
    tape.backward(loss);

    auto params = model.head.named();
    const std::vector<ad::Var<float>> flat = vars.flat();
    std::vector<Tensor> grads;
    grads.reserve(flat.size());
    for (std::size_t i = 0; i < flat.size(); ++i) {
        grads.push_back(tape.grad(flat[i]));
        if (!grads.back().all_finite()) throw NonFiniteError("train_step: non-finite gradient for " + params[i].first);
    }
    const auto step = static_cast<float>(lr);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto p = params[i].second->data();
        const auto g = grads[i].data();
        for (std::size_t k = 0; k < p.size(); ++k) p[k] -= step * g[k];
    }
    return stats;
}

std::vector<StepStats> train(Model<float>& model, const std::vector<LoadedSequence>& pool, const TrainConfig& cfg,
                             const LossWeights& weights, const AugmentConfig& augment, std::size_t start_step,
                             const StepCallback& on_step) {
    if (cfg.batch == 0) throw std::invalid_argument("train: batch must be >= 1");
    if (!(cfg.lr >= 0.0) || !std::isfinite(cfg.lr)) throw std::invalid_argument("train: learning rate must be >= 0");
    const std::size_t horizon = cfg.schedule_steps ? cfg.schedule_steps : start_step + cfg.steps;
    std::vector<StepStats> history;
    for (std::size_t k = 0; k < cfg.steps; ++k) {
        const std::size_t step = start_step + k + 1;
        std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                          static_cast<std::uint32_t>(step), static_cast<std::uint32_t>(step >> 32)};
        std::mt19937_64 rng(seq);
        std::vector<TrainSample> batch;
        for (std::size_t b = 0; b < cfg.batch; ++b) batch.push_back(sample_clip(model, pool, cfg, augment, rng));
        const double lr = cfg.cosine ? cosine_lr(cfg.lr, cfg.lr_min, step - 1, horizon) : cfg.lr;
        StepStats s = train_step(model, batch, weights, lr);
        s.step = step;
        history.push_back(s);
        if (on_step) on_step(s);
    }
    return history;
}

void write_train_csv_header(std::ostream& os) { os << "step,loss,ssi,tgm,sascon,lr\n"; }

void write_train_csv_row(std::ostream& os, const StepStats& s) {
    os << s.step << ',' << std::setprecision(9) << s.loss << ',' << s.ssi << ',' << s.tgm << ',' << s.sascon << ','
       << s.lr << '\n';
}

DepthSequence predict_sequence(const Model<float>& model, const LoadedSequence& seq, const StreamOptions& opt) {
    StreamingSession<float> session(model, opt.context, opt.caches, opt.precision);
    DepthSequence out;
    out.kind = SequenceKind::Predicted;
    for (const Tensor& rgb : seq.rgb) {
        out.frames.push_back(session.step(encode_frame(model.encoder, rgb)));
        out.valid.push_back(Tensor::ones(out.frames.back().shape()));
    }
    return out;
}

EvalReport evaluate_model(const Model<float>& model, const std::vector<LoadedSequence>& sequences,
                          AlignProtocol protocol, const StreamOptions& opt) {
    if (sequences.empty()) throw std::invalid_argument("evaluate_model: no sequences");
    std::vector<EvalReport> reports;
    for (const LoadedSequence& s : sequences) reports.push_back(evaluate(predict_sequence(model, s, opt), s.depth, protocol));
    return pool_reports(reports);
}

std::vector<AblationConfig> standard_ablation() {
    return {
        {"none", false, {1, 1, 0}, false},
        {"vda", true, {1, 1, 0}, false},
        {"vda+aug", true, {1, 1, 0}, true},
        {"vda+sascon", true, {1, 1, 1}, false},
        {"ovda+aug", true, {1, 1, 1}, true},
    };
}

std::vector<AblationRow> ablation_suite(const ModelFactory& factory, const std::vector<LoadedSequence>& train_set,
                                        const std::vector<LoadedSequence>& eval_set, const TrainConfig& cfg,
                                        const std::vector<AblationConfig>& rows, const AugmentConfig& augment) {
    std::vector<AblationRow> out;
    for (const AblationConfig& row : rows) {
        Model<float> model = factory();
        AblationRow r{row.name};
        if (row.train) {
            AugmentConfig a = augment;
            a.enabled = row.augment;
            const auto history = train(model, train_set, cfg, row.weights, a);
            if (!history.empty()) r.final_loss = history.back().loss;
        }
        const EvalReport rep = evaluate_model(model, eval_set, AlignProtocol::FirstFrame);
        r.absrel = rep.absrel;
        r.delta1 = rep.delta1;
        out.push_back(r);
    }
    return out;
}

void write_ablation_csv(std::ostream& os, const std::vector<AblationRow>& rows) {
    os << "config,absrel,delta1,final_loss\n";
    for (const auto& r : rows) {
        os << r.name << ',' << std::setprecision(9) << r.absrel << ',' << r.delta1 << ',' << r.final_loss << '\n';
    }
}

LoadedSequence to_loaded(const GeneratedSequence& g, const std::string& id) {
    LoadedSequence s;
    s.id = id;
    s.depth.kind = SequenceKind::GroundTruth;
    for (std::size_t n = 0; n < g.rgb.size(); ++n) {
        s.rgb.push_back(from_rgb8(to_rgb8(g.rgb[n])));
        s.depth.frames.push_back(g.depth[n]);
        s.depth.valid.push_back(g.valid[n]);
        s.source_frames.push_back(n);
    }
    return s;
}

}  // namespace ovda
