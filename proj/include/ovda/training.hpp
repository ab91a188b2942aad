#pragma once

// Toy fine-tuning of the spatiotemporal head with the encoder frozen:
// frame augmentation, stride sampling, plain gradient descent with an optional
// cosine schedule, and the loss-configuration ablation.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "ovda/alignment.hpp"
#include "ovda/dataio.hpp"
#include "ovda/depth_model.hpp"
#include "ovda/losses.hpp"

namespace ovda {

struct AugmentConfig {
    double max_fraction = 0.4;       // per-frame coverage target ~ Uniform[0, max_fraction]
    double max_rect_side = 0.5;      // rectangle sides ~ Uniform[1, max_rect_side * extent] pixels
    bool enabled = true;
};

// Zeroes random rectangles in every frame ([H, W, 3]) until the frame's drawn
// coverage target is met exactly. The last rectangle is cut short in raster
// order so coverage never overshoots. Returns the realised fraction per frame.
std::vector<double> frame_augment(std::vector<Tensor>& rgb, const AugmentConfig& cfg, std::mt19937_64& rng);

struct TrainConfig {
    double lr = 1e-3;
    double lr_min = 0.0;
    bool cosine = true;
    std::size_t steps = 200;
    std::size_t schedule_steps = 0;  // cosine horizon; 0 = start step + steps
    std::size_t batch = 1;           // sequences per step
    std::size_t clip_frames = 8;
    std::size_t max_stride = 4;      // stride ~ Uniform{1..max_stride}
    std::uint64_t seed = 0;
};

// lr at `step` (0-based) of a cosine decay over `horizon` steps.
double cosine_lr(double lr, double lr_min, std::size_t step, std::size_t horizon);

// Training targets: inverse depth on valid pixels, rescaled so its mean over
// the clip's valid pixels is 1. Invalid pixels hold 0 and are masked.
SequenceTarget<float> make_target(const DepthSequence& depth);

struct TrainSample {
    EncoderFeatures<float> features;  // [N, S, E] from the frozen encoder
    SequenceTarget<float> target;     // [N, H*W]
};

// Frames start, start+stride, ... (clip_frames of them) of a full-rate sequence.
TrainSample make_sample(const Model<float>& model, const LoadedSequence& seq, std::size_t start, std::size_t stride,
                        std::size_t clip_frames, const AugmentConfig* augment, std::mt19937_64& rng);

// Random clip: sequence, stride and start drawn from rng.
TrainSample sample_clip(const Model<float>& model, const std::vector<LoadedSequence>& pool, const TrainConfig& cfg,
                        const AugmentConfig& augment, std::mt19937_64& rng);

struct StepStats {
    std::size_t step = 0;
    double loss = 0.0, ssi = 0.0, tgm = 0.0, sascon = 0.0, lr = 0.0;
};

// One gradient-descent update of the head parameters on `batch` (mean loss).
// The encoder is never touched. Throws NonFiniteError before any parameter is
// modified if the loss or a gradient is not finite.
StepStats train_step(Model<float>& model, const std::vector<TrainSample>& batch, const LossWeights& weights,
                     double lr);

using StepCallback = std::function<void(const StepStats&)>;

// Steps start_step+1 .. start_step+cfg.steps. The clip drawn at a given step
// depends only on (seed, step), so a resumed run matches an uninterrupted one.
std::vector<StepStats> train(Model<float>& model, const std::vector<LoadedSequence>& pool, const TrainConfig& cfg,
                             const LossWeights& weights, const AugmentConfig& augment, std::size_t start_step = 0,
                             const StepCallback& on_step = {});

void write_train_csv_header(std::ostream& os);
void write_train_csv_row(std::ostream& os, const StepStats& s);

// ---- evaluation helpers ---------------------------------------------------

struct StreamOptions {
    std::size_t context = 0;  // 0 = model's
    std::size_t caches = 0;
    std::optional<PrecisionMode> precision;
};

// Streams one sequence; returns predicted inverse depth per frame (all valid).
DepthSequence predict_sequence(const Model<float>& model, const LoadedSequence& seq, const StreamOptions& opt = {});

// Streams every sequence and pools the per-sequence reports.
EvalReport evaluate_model(const Model<float>& model, const std::vector<LoadedSequence>& sequences,
                          AlignProtocol protocol, const StreamOptions& opt = {});

// ---- loss ablation ----------------------------------------------------------

struct AblationConfig {
    std::string name;
    bool train = true;
    LossWeights weights;
    bool augment = false;
};

// none, L_VDA, L_VDA + frame augmentation, L_VDA + SaSCon, L_oVDA + augmentation.
std::vector<AblationConfig> standard_ablation();

struct AblationRow {
    std::string name;
    double absrel = 0.0;
    double delta1 = 0.0;
    double final_loss = 0.0;
};

using ModelFactory = std::function<Model<float>()>;

// Each row starts from a fresh factory model and sees the same clip sequence
// (same seed); evaluation uses first-frame alignment on streamed predictions.
std::vector<AblationRow> ablation_suite(const ModelFactory& factory, const std::vector<LoadedSequence>& train_set,
                                        const std::vector<LoadedSequence>& eval_set, const TrainConfig& cfg,
                                        const std::vector<AblationConfig>& rows, const AugmentConfig& augment = {});

void write_ablation_csv(std::ostream& os, const std::vector<AblationRow>& rows);

// Converts generated in-memory data to the same form load_sequence returns
// (rgb quantised to 8 bits as on disk).
LoadedSequence to_loaded(const GeneratedSequence& g, const std::string& id);

}  // namespace ovda
