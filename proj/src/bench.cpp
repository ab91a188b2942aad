#include "ovda/bench.hpp"

#include <algorithm>
#include <chrono>
#include <iomanip>
#include <ostream>
#include <stdexcept>

namespace ovda {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point start) {
    return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

}  // namespace

double median(std::vector<double> v) {
    if (v.empty()) throw std::invalid_argument("median: empty sample");
    const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
    std::nth_element(v.begin(), mid, v.end());
    if (v.size() % 2 == 1) return *mid;
    const double hi = *mid;
    return 0.5 * (hi + *std::max_element(v.begin(), mid));
}

EncoderFeatures<float> slice_features(const EncoderFeatures<float>& seq, std::size_t begin, std::size_t end) {
    const std::size_t N = seq.tokens.dim(0), S = seq.tokens.dim(1), E = seq.tokens.dim(2);
    if (begin >= end || end > N) throw std::out_of_range("slice_features: bad frame range");
    std::vector<float> v(seq.tokens.data().begin() + static_cast<std::ptrdiff_t>(begin * S * E),
                         seq.tokens.data().begin() + static_cast<std::ptrdiff_t>(end * S * E));
    return {Tensor({end - begin, S, E}, std::move(v)), seq.grid_h, seq.grid_w};
}

LatencyReport measure_latency(const Model<float>& model, const EncoderFeatures<float>& features, std::size_t context,
                              std::size_t caches, PrecisionMode precision, std::size_t prefix_samples) {
    const std::size_t N = features.tokens.dim(0);
    if (context == 0) context = model.config.context;
    if (N <= context) throw std::invalid_argument("measure_latency: need more frames than the warm-up (context)");
    if (prefix_samples == 0) throw std::invalid_argument("measure_latency: prefix_samples must be >= 1");

    LatencyReport r;
    r.context = context;
    r.caches = caches;
    r.precision = precision;
    r.frames = N;
    r.warmup_excluded = context;

    StreamingSession<float> session(model, context, caches, precision);
    std::vector<double> stream;
    for (std::size_t n = 0; n < N; ++n) {
        const EncoderFeatures<float> f = frame_features(features, n);
        const auto start = Clock::now();
        session.step(f);
        const double ms = ms_since(start);
        if (n >= context) stream.push_back(ms);
    }
    r.stream_median_ms = median(stream);
    r.cache_bytes = session.memory_footprint();

    const std::size_t measured = N - context;
    const std::size_t samples = std::min(prefix_samples, measured);
    std::vector<double> prefix, window;
    for (std::size_t k = 0; k < samples; ++k) {
        const std::size_t n = context + (k * measured) / samples + (measured / samples) / 2;
        const auto p = slice_features(features, 0, n + 1);
        auto start = Clock::now();
        predict_batch(model, p, context);
        prefix.push_back(ms_since(start));
        const auto w = slice_features(features, n + 1 - context, n + 1);
        start = Clock::now();
        predict_batch(model, w, context);
        window.push_back(ms_since(start));
    }
    r.prefix_samples = samples;
    r.batch_prefix_median_ms = median(prefix);
    r.batch_window_median_ms = median(window);
    return r;
}

void write_bench_csv_header(std::ostream& os) {
    os << "context,caches,precision,frames,warmup_excluded,stream_median_ms,batch_prefix_median_ms,"
          "batch_window_median_ms,prefix_samples,cache_bytes\n";
}

void write_bench_csv_row(std::ostream& os, const LatencyReport& r) {
    os << r.context << ',' << r.caches << ',' << to_string(r.precision) << ',' << r.frames << ',' << r.warmup_excluded
       << ',' << std::setprecision(6) << r.stream_median_ms << ',' << r.batch_prefix_median_ms << ','
       << r.batch_window_median_ms << ',' << r.prefix_samples << ',' << r.cache_bytes << '\n';
}

}  // namespace ovda
