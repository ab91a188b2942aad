#pragma once

// Closed-form affine alignment, depth metrics, evaluation protocols and the
// scale-drift analysis. Everything here is a pure function of its inputs.

#include <cstddef>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ovda/tensor.hpp"

namespace ovda {

inline constexpr double kMaxDepth = 80.0;
inline constexpr double kDelta1Threshold = 1.25;
inline constexpr double kDegenerateVariance = 1e-12;

class AlignmentError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct AffineAlign {
    double scale = 1.0;
    double shift = 0.0;
    bool degenerate = false;
};

// Least-squares (s, t) minimising sum over valid i of (s * pred_i + t - gt_i)^2.
// A pixel is valid when mask_i > 0.5 (an empty mask means all valid). When the
// prediction has (near) zero variance the fit is flagged degenerate and
// s = 1, t = mean(gt) - mean(pred).
AffineAlign least_squares_align(std::span<const float> pred, std::span<const float> gt,
                                std::span<const float> mask = {});

std::vector<float> apply_align(std::span<const float> pred, const AffineAlign& align);

// 1 / max(d, eps), clipped to kMaxDepth.
std::vector<float> invert_disparity(std::span<const float> disparity, double eps = 1e-6);

double absrel(std::span<const float> gt, std::span<const float> aligned, std::span<const float> mask = {});
double delta1(std::span<const float> gt, std::span<const float> aligned, std::span<const float> mask = {});

enum class SequenceKind { GroundTruth, Predicted };

// Per-frame maps ([H, W]) with validity masks ({0, 1}, same shape).
struct DepthSequence {
    std::vector<Tensor> frames;
    std::vector<Tensor> valid;
    SequenceKind kind = SequenceKind::GroundTruth;

    std::size_t size() const { return frames.size(); }
    void validate() const;
};

// Space in which (s, t) is fitted. Disparity: the prediction is inverse depth,
// fitted against 1/gt and inverted back before the depth metrics. Depth: the
// prediction is fitted to gt directly.
enum class AlignSpace { Disparity, Depth };

struct EvalReport {
    double absrel = 0.0;
    double delta1 = 0.0;
    std::size_t pixels = 0;
    AffineAlign align;
    std::vector<double> frame_absrel;
    std::vector<double> frame_delta1;
};

enum class AlignProtocol { FirstFrame, Global500, GlobalAll };

AlignProtocol parse_align_protocol(const std::string& s);
std::string to_string(AlignProtocol p);

// (s, t) from frame 0 only, applied to every frame; metrics pooled over all
// valid pixels of all frames.
EvalReport eval_first_frame(const DepthSequence& pred, const DepthSequence& gt,
                            AlignSpace space = AlignSpace::Disparity);

// One (s, t) fitted jointly over the first `horizon` frames (all when empty);
// metrics over the same frames.
EvalReport eval_global(const DepthSequence& pred, const DepthSequence& gt, std::optional<std::size_t> horizon,
                       AlignSpace space = AlignSpace::Disparity);

EvalReport evaluate(const DepthSequence& pred, const DepthSequence& gt, AlignProtocol protocol,
                    AlignSpace space = AlignSpace::Disparity);

// Pixel-pooled combination of several per-sequence reports. The fitted
// (s, t) is kept only when there is a single report.
EvalReport pool_reports(const std::vector<EvalReport>& reports);

struct DriftCurve {
    std::vector<double> raw;       // mean |s0 - sj| / |s0| per frame index
    std::vector<double> smoothed;  // centred moving average of raw
    std::vector<std::size_t> support;  // sequences containing frame j
    std::size_t window = 4;
};

DriftCurve scale_drift_curve(const std::vector<DepthSequence>& preds, const std::vector<DepthSequence>& gts,
                             std::size_t window = 4, AlignSpace space = AlignSpace::Disparity);

// Centred moving average over offsets [-w/2, w - 1 - w/2], truncated at the ends.
std::vector<double> moving_average(const std::vector<double>& v, std::size_t window);

void write_report_csv(std::ostream& os, const EvalReport& r);
void write_drift_csv(std::ostream& os, const DriftCurve& c);

// Mean rank of each method across columns (rank 1 = largest value).
std::map<std::string, double> mean_rank(const std::map<std::string, std::vector<double>>& scores);

}  // namespace ovda
