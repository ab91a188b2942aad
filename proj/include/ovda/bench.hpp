#pragma once

// Wall-clock comparison of streaming inference against recomputing the whole
// sequence in batch mode every time a frame arrives. Only the head is timed:
// encoder features are computed once up front, since both modes share them.

#include <cstddef>
#include <iosfwd>
#include <vector>

#include "ovda/depth_model.hpp"

namespace ovda {

struct LatencyReport {
    std::size_t context = 0;
    std::size_t caches = 1;
    PrecisionMode precision = PrecisionMode::Full32;
    std::size_t frames = 0;           // frames streamed
    std::size_t warmup_excluded = 0;  // first `context` frames, not in the median
    double stream_median_ms = 0.0;
    // Batch over frames [0, n] with band `context`, to emit frame n.
    double batch_prefix_median_ms = 0.0;
    // Batch over the last `context` frames only, to emit frame n.
    double batch_window_median_ms = 0.0;
    std::size_t prefix_samples = 0;
    std::size_t cache_bytes = 0;  // session footprint after the last frame
};

// Streams every frame of `features`; the batch baselines are timed at up to
// `prefix_samples` evenly spaced frames after warm-up. Throws when the
// sequence has no frames past the warm-up.
LatencyReport measure_latency(const Model<float>& model, const EncoderFeatures<float>& features, std::size_t context,
                              std::size_t caches = 1, PrecisionMode precision = PrecisionMode::Full32,
                              std::size_t prefix_samples = 16);

// Frames [begin, end) of a feature sequence.
EncoderFeatures<float> slice_features(const EncoderFeatures<float>& seq, std::size_t begin, std::size_t end);

double median(std::vector<double> v);

void write_bench_csv_header(std::ostream& os);
void write_bench_csv_row(std::ostream& os, const LatencyReport& r);

}  // namespace ovda
