#include "ovda/alignment.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>

namespace ovda {

namespace {

bool is_valid(std::span<const float> mask, std::size_t i) { return mask.empty() || mask[i] > 0.5f; }

void check_sizes(std::span<const float> a, std::span<const float> b, std::span<const float> mask, const char* op) {
    if (a.size() != b.size() || (!mask.empty() && mask.size() != a.size())) {
        throw ShapeError(std::string(op) + ": input sizes differ");
    }
}

// Streaming accumulation of the centred normal equations.
struct FitAccumulator {
    std::vector<double> p, g;

    void add(double pv, double gv) {
        p.push_back(pv);
        g.push_back(gv);
    }

    AffineAlign solve() const {
        const std::size_t n = p.size();
        if (n < 2) throw AlignmentError("least squares alignment needs at least 2 valid pixels, got " + std::to_string(n));
        double mp = 0.0, mg = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            mp += p[i];
            mg += g[i];
        }
        mp /= static_cast<double>(n);
        mg /= static_cast<double>(n);
        double cov = 0.0, var = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            cov += (p[i] - mp) * (g[i] - mg);
            var += (p[i] - mp) * (p[i] - mp);
        }
        if (var / static_cast<double>(n) < kDegenerateVariance) return {1.0, mg - mp, true};
        const double s = cov / var;
        return {s, mg - s * mp, false};
    }
};

// Ground truth in the metric convention: valid iff masked in and positive, clipped to kMaxDepth.
struct PreparedFrame {
    std::vector<float> gt_depth;
    std::vector<float> target;  // what the prediction is fitted to
    std::vector<float> valid;
};

PreparedFrame prepare(const Tensor& gt, const Tensor& mask, AlignSpace space) {
    PreparedFrame f;
    f.gt_depth.resize(gt.size());
    f.target.resize(gt.size());
    f.valid.resize(gt.size());
    for (std::size_t i = 0; i < gt.size(); ++i) {
        const bool ok = (mask.empty() || mask[i] > 0.5f) && gt[i] > 0.0f && std::isfinite(gt[i]);
        const float d = ok ? static_cast<float>(std::min<double>(gt[i], kMaxDepth)) : 1.0f;
        f.gt_depth[i] = d;
        f.target[i] = space == AlignSpace::Disparity ? 1.0f / d : d;
        f.valid[i] = ok ? 1.0f : 0.0f;
    }
    return f;
}

std::vector<float> to_depth(std::span<const float> pred, const AffineAlign& a, AlignSpace space) {
    std::vector<float> aligned = apply_align(pred, a);
    return space == AlignSpace::Disparity ? invert_disparity(aligned) : aligned;
}

EvalReport evaluate_with(const DepthSequence& pred, const DepthSequence& gt, std::size_t fit_begin,
                         std::size_t fit_end, std::size_t eval_end, AlignSpace space) {
    pred.validate();
    gt.validate();
    if (pred.size() != gt.size()) throw ShapeError("evaluation: prediction and ground truth lengths differ");
    if (pred.size() == 0) throw std::invalid_argument("evaluation: empty sequence");
    std::vector<PreparedFrame> frames;
    for (std::size_t n = 0; n < eval_end; ++n) {
        if (pred.frames[n].shape() != gt.frames[n].shape()) throw ShapeError("evaluation: frame sizes differ");
        frames.push_back(prepare(gt.frames[n], gt.valid[n], space));
        // Pixels the prediction marks invalid are excluded as well.
        if (!pred.valid.empty() && !pred.valid[n].empty()) {
            for (std::size_t i = 0; i < frames.back().valid.size(); ++i)
                if (pred.valid[n][i] <= 0.5f) frames.back().valid[i] = 0.0f;
        }
    }
    FitAccumulator acc;
    for (std::size_t n = fit_begin; n < fit_end; ++n)
        for (std::size_t i = 0; i < frames[n].valid.size(); ++i)
            if (frames[n].valid[i] > 0.5f) acc.add(pred.frames[n][i], frames[n].target[i]);

    EvalReport r;
    r.align = acc.solve();
    double sum_rel = 0.0, inliers = 0.0;
    for (std::size_t n = 0; n < eval_end; ++n) {
        const std::vector<float> depth = to_depth(pred.frames[n].data(), r.align, space);
        std::size_t count = 0;
        double f_rel = 0.0, f_in = 0.0;
        for (std::size_t i = 0; i < depth.size(); ++i) {
            if (frames[n].valid[i] <= 0.5f) continue;
            const double g = frames[n].gt_depth[i], d = depth[i];
            f_rel += std::abs(g - d) / g;
            if (d > 0.0 && std::max(g / d, d / g) < kDelta1Threshold) f_in += 1.0;
            ++count;
        }
        r.frame_absrel.push_back(count ? f_rel / static_cast<double>(count) : 0.0);
        r.frame_delta1.push_back(count ? f_in / static_cast<double>(count) : 0.0);
        sum_rel += f_rel;
        inliers += f_in;
        r.pixels += count;
    }
    if (r.pixels == 0) throw AlignmentError("evaluation: no valid pixels");
    r.absrel = sum_rel / static_cast<double>(r.pixels);
    r.delta1 = inliers / static_cast<double>(r.pixels);
    return r;
}

}  // namespace

AffineAlign least_squares_align(std::span<const float> pred, std::span<const float> gt, std::span<const float> mask) {
    check_sizes(pred, gt, mask, "least_squares_align");
    FitAccumulator acc;
    for (std::size_t i = 0; i < pred.size(); ++i)
        if (is_valid(mask, i)) acc.add(pred[i], gt[i]);
    return acc.solve();
}

std::vector<float> apply_align(std::span<const float> pred, const AffineAlign& align) {
    std::vector<float> out(pred.size());
    for (std::size_t i = 0; i < pred.size(); ++i) {
        out[i] = static_cast<float>(align.scale * pred[i] + align.shift);
    }
    return out;
}

std::vector<float> invert_disparity(std::span<const float> disparity, double eps) {
    std::vector<float> out(disparity.size());
    for (std::size_t i = 0; i < disparity.size(); ++i) {
        out[i] = static_cast<float>(std::min(1.0 / std::max<double>(disparity[i], eps), kMaxDepth));
    }
    return out;
}

double absrel(std::span<const float> gt, std::span<const float> aligned, std::span<const float> mask) {
    check_sizes(gt, aligned, mask, "absrel");
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < gt.size(); ++i) {
        if (!is_valid(mask, i)) continue;
        if (!(gt[i] > 0.0f)) throw std::invalid_argument("absrel: ground truth must be positive on valid pixels");
        sum += std::abs(static_cast<double>(gt[i]) - aligned[i]) / gt[i];
        ++n;
    }
    if (n == 0) throw AlignmentError("absrel: no valid pixels");
    return sum / static_cast<double>(n);
}

double delta1(std::span<const float> gt, std::span<const float> aligned, std::span<const float> mask) {
    check_sizes(gt, aligned, mask, "delta1");
    double in = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < gt.size(); ++i) {
        if (!is_valid(mask, i)) continue;
        if (!(gt[i] > 0.0f)) throw std::invalid_argument("delta1: ground truth must be positive on valid pixels");
        const double g = gt[i], d = aligned[i];
        if (d > 0.0 && std::max(g / d, d / g) < kDelta1Threshold) in += 1.0;
        ++n;
    }
    if (n == 0) throw AlignmentError("delta1: no valid pixels");
    return in / static_cast<double>(n);
}

void DepthSequence::validate() const {
    if (!valid.empty() && valid.size() != frames.size()) {
        throw ShapeError("DepthSequence: " + std::to_string(valid.size()) + " masks for " +
                         std::to_string(frames.size()) + " frames");
    }
    for (std::size_t n = 0; n < valid.size(); ++n) {
        if (!valid[n].empty() && valid[n].shape() != frames[n].shape()) {
            throw ShapeError("DepthSequence: mask " + std::to_string(n) + " shape differs from its frame");
        }
    }
}

AlignProtocol parse_align_protocol(const std::string& s) {
    if (s == "first") return AlignProtocol::FirstFrame;
    if (s == "global500") return AlignProtocol::Global500;
    if (s == "globalall") return AlignProtocol::GlobalAll;
    throw std::invalid_argument("unknown alignment '" + s + "' (expected first, global500 or globalall)");
}

std::string to_string(AlignProtocol p) {
    switch (p) {
        case AlignProtocol::FirstFrame: return "first";
        case AlignProtocol::Global500: return "global500";
        case AlignProtocol::GlobalAll: return "globalall";
    }
    return "?";
}

EvalReport eval_first_frame(const DepthSequence& pred, const DepthSequence& gt, AlignSpace space) {
    return evaluate_with(pred, gt, 0, 1, pred.size(), space);
}

EvalReport eval_global(const DepthSequence& pred, const DepthSequence& gt, std::optional<std::size_t> horizon,
                       AlignSpace space) {
    const std::size_t end = horizon ? std::min(*horizon, pred.size()) : pred.size();
    if (end == 0) throw std::invalid_argument("eval_global: horizon must be >= 1");
    return evaluate_with(pred, gt, 0, end, end, space);
}

EvalReport evaluate(const DepthSequence& pred, const DepthSequence& gt, AlignProtocol protocol, AlignSpace space) {
    switch (protocol) {
        case AlignProtocol::FirstFrame: return eval_first_frame(pred, gt, space);
        case AlignProtocol::Global500: return eval_global(pred, gt, 500, space);
        case AlignProtocol::GlobalAll: return eval_global(pred, gt, std::nullopt, space);
    }
    throw std::invalid_argument("evaluate: bad protocol");
}

EvalReport pool_reports(const std::vector<EvalReport>& reports) {
    EvalReport out;
    double rel = 0.0, in = 0.0;
    for (const auto& r : reports) {
        rel += r.absrel * static_cast<double>(r.pixels);
        in += r.delta1 * static_cast<double>(r.pixels);
        out.pixels += r.pixels;
        out.frame_absrel.insert(out.frame_absrel.end(), r.frame_absrel.begin(), r.frame_absrel.end());
        out.frame_delta1.insert(out.frame_delta1.end(), r.frame_delta1.begin(), r.frame_delta1.end());
    }
    if (out.pixels == 0) throw AlignmentError("pool_reports: no pixels");
    if (reports.size() == 1) out.align = reports.front().align;
    out.absrel = rel / static_cast<double>(out.pixels);
    out.delta1 = in / static_cast<double>(out.pixels);
    return out;
}

std::vector<double> moving_average(const std::vector<double>& v, std::size_t window) {
    if (window <= 1) return v;
    const auto n = static_cast<std::ptrdiff_t>(v.size());
    const auto lo = -static_cast<std::ptrdiff_t>(window / 2);
    const auto hi = static_cast<std::ptrdiff_t>(window) - 1 + lo;
    std::vector<double> out(v.size());
    for (std::ptrdiff_t j = 0; j < n; ++j) {
        double s = 0.0;
        std::size_t c = 0;
        for (std::ptrdiff_t k = std::max<std::ptrdiff_t>(0, j + lo); k <= std::min(n - 1, j + hi); ++k) {
            s += v[static_cast<std::size_t>(k)];
            ++c;
        }
        out[static_cast<std::size_t>(j)] = s / static_cast<double>(c);
    }
    return out;
}

DriftCurve scale_drift_curve(const std::vector<DepthSequence>& preds, const std::vector<DepthSequence>& gts,
                             std::size_t window, AlignSpace space) {
    if (preds.size() != gts.size()) throw ShapeError("scale_drift_curve: prediction/gt sequence counts differ");
    DriftCurve curve;
    curve.window = window;
    std::vector<double> sums;
    for (std::size_t q = 0; q < preds.size(); ++q) {
        const DepthSequence& p = preds[q];
        const DepthSequence& g = gts[q];
        if (p.size() != g.size()) throw ShapeError("scale_drift_curve: sequence lengths differ");
        double s0 = 0.0;
        for (std::size_t j = 0; j < p.size(); ++j) {
            const PreparedFrame f = prepare(g.frames[j], g.valid.empty() ? Tensor() : g.valid[j], space);
            const AffineAlign a = least_squares_align(p.frames[j].data(), f.target, f.valid);
            if (j == 0) {
                if (a.degenerate || a.scale == 0.0) {
                    throw AlignmentError("scale_drift_curve: degenerate first-frame scale in sequence " +
                                         std::to_string(q));
                }
                s0 = a.scale;
            }
            if (sums.size() <= j) {
                sums.resize(j + 1, 0.0);
                curve.support.resize(j + 1, 0);
            }
            sums[j] += std::abs(s0 - a.scale) / std::abs(s0);
            curve.support[j] += 1;
        }
    }
    curve.raw.resize(sums.size());
    for (std::size_t j = 0; j < sums.size(); ++j) curve.raw[j] = sums[j] / static_cast<double>(curve.support[j]);
    curve.smoothed = moving_average(curve.raw, window);
    return curve;
}

void write_report_csv(std::ostream& os, const EvalReport& r) {
    os << "metric,value\n" << std::setprecision(9);
    os << "absrel," << r.absrel << '\n';
    os << "delta1," << r.delta1 << '\n';
    os << "pixels," << r.pixels << '\n';
    os << "scale," << r.align.scale << '\n';
    os << "shift," << r.align.shift << '\n';
    os << "degenerate," << (r.align.degenerate ? 1 : 0) << '\n';
}

void write_drift_csv(std::ostream& os, const DriftCurve& c) {
    os << "frame_index,drift,data_support\n" << std::setprecision(9);
    for (std::size_t j = 0; j < c.smoothed.size(); ++j) {
        os << j << ',' << c.smoothed[j] << ',' << c.support[j] << '\n';
    }
}

std::map<std::string, double> mean_rank(const std::map<std::string, std::vector<double>>& scores) {
    std::map<std::string, double> out;
    if (scores.empty()) return out;
    const std::size_t cols = scores.begin()->second.size();
    for (const auto& [name, v] : scores) {
        if (v.size() != cols) throw ShapeError("mean_rank: method " + name + " has a different column count");
        out[name] = 0.0;
    }
    for (std::size_t c = 0; c < cols; ++c) {
        for (const auto& [name, v] : scores) {
            double rank = 1.0;
            for (const auto& [other, w] : scores)
                if (other != name && w[c] > v[c]) rank += 1.0;
            out[name] += rank / static_cast<double>(cols);
        }
    }
    return out;
}

}  // namespace ovda
