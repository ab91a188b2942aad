#pragma once

// Bounded FIFO stores of per-frame latents for the streaming motion modules.
//
// Latents are stored exactly as they enter attention, i.e. after the layer norm
// but before positional encoding and the K/V projections. Window-relative
// positions change every frame, so keys and values are recomputed from these
// latents on each step.

#include <cstddef>
#include <cstdint>
#include <deque>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ovda/half.hpp"
#include "ovda/tensor.hpp"

namespace ovda {

enum class PrecisionMode { Full32, Emulated16 };

inline std::string to_string(PrecisionMode mode) { return mode == PrecisionMode::Full32 ? "fp32" : "fp16"; }

inline PrecisionMode parse_precision(const std::string& s) {
    if (s == "fp32") return PrecisionMode::Full32;
    if (s == "fp16") return PrecisionMode::Emulated16;
    throw std::invalid_argument("unknown precision '" + s + "' (expected fp32 or fp16)");
}

class CacheOrderError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

template <class T>
class FeatureCache {
public:
    explicit FeatureCache(std::size_t capacity, PrecisionMode mode = PrecisionMode::Full32, std::string site_id = {})
        : capacity_(capacity), mode_(mode), site_id_(std::move(site_id)) {
        if (capacity_ == 0) throw std::invalid_argument("FeatureCache: capacity must be >= 1");
    }

    // Appends a latent; when the cache was already full the oldest entry is
    // dropped and its frame index returned.
    std::optional<std::int64_t> push_evict(std::int64_t frame_index, const BasicTensor<T>& latent) {
        if (!entries_.empty() && frame_index <= entries_.back().frame_index) {
            throw CacheOrderError("FeatureCache " + site_id_ + ": frame " + std::to_string(frame_index) +
                                  " is not newer than " + std::to_string(entries_.back().frame_index));
        }
        if (!entries_.empty() && latent.shape() != entries_.front().shape) {
            throw ShapeError("FeatureCache " + site_id_ + ": latent " + shape_str(latent.shape()) +
                             " differs from cached " + shape_str(entries_.front().shape));
        }
        std::optional<std::int64_t> evicted;
        if (entries_.size() == capacity_) {
            evicted = entries_.front().frame_index;
            entries_.pop_front();
        }
        Entry e{frame_index, latent.shape(), {}, {}};
        if (mode_ == PrecisionMode::Full32) {
            e.full.assign(latent.data().begin(), latent.data().end());
        } else {
            e.half.reserve(latent.size());
            for (T v : latent.data()) e.half.push_back(float_to_half_bits(static_cast<float>(v)));
        }
        entries_.push_back(std::move(e));
        return evicted;
    }

    // Snapshot of the stored latents, oldest first.
    std::vector<BasicTensor<T>> window() const {
        std::vector<BasicTensor<T>> out;
        out.reserve(entries_.size());
        for (const Entry& e : entries_) out.push_back(widen(e));
        return out;
    }

    std::vector<std::int64_t> frame_indices() const {
        std::vector<std::int64_t> out;
        for (const Entry& e : entries_) out.push_back(e.frame_index);
        return out;
    }

    // Bytes held by stored latent values under the current precision mode.
    std::size_t memory_footprint() const {
        const std::size_t per_value = mode_ == PrecisionMode::Full32 ? sizeof(T) : sizeof(std::uint16_t);
        std::size_t n = 0;
        for (const Entry& e : entries_) n += shape_numel(e.shape);
        return n * per_value;
    }

    // Moves every entry out, oldest first, leaving the cache empty.
    std::vector<std::pair<std::int64_t, BasicTensor<T>>> drain() {
        std::vector<std::pair<std::int64_t, BasicTensor<T>>> out;
        for (const Entry& e : entries_) out.emplace_back(e.frame_index, widen(e));
        entries_.clear();
        return out;
    }

    void clear() { entries_.clear(); }
    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }
    std::size_t capacity() const { return capacity_; }
    PrecisionMode precision() const { return mode_; }
    const std::string& site_id() const { return site_id_; }

private:
    struct Entry {
        std::int64_t frame_index;
        Shape shape;
        std::vector<T> full;
        std::vector<std::uint16_t> half;
    };

    BasicTensor<T> widen(const Entry& e) const {
        if (mode_ == PrecisionMode::Full32) return BasicTensor<T>(e.shape, e.full);
        std::vector<T> v;
        v.reserve(e.half.size());
        for (std::uint16_t h : e.half) v.push_back(static_cast<T>(half_bits_to_float(h)));
        return BasicTensor<T>(e.shape, std::move(v));
    }

    std::size_t capacity_;
    PrecisionMode mode_;
    std::string site_id_;
    std::deque<Entry> entries_;
};

// m caches of capacity c that together cover a context of roughly m*c frames.
// The first c frames fill cache 0 exactly like a single cache; on the first
// frame after that, the stored frames are redistributed by index mod m and
// frame t is routed to cache t mod m from then on, so each cache holds frames
// spaced m apart.
template <class T>
class CacheBank {
public:
    CacheBank(std::size_t capacity, std::size_t caches, PrecisionMode mode = PrecisionMode::Full32,
              const std::string& site_id = {}) {
        if (caches == 0) throw std::invalid_argument("CacheBank: need at least one cache");
        for (std::size_t k = 0; k < caches; ++k) {
            caches_.emplace_back(capacity, mode, site_id + "/" + std::to_string(k));
        }
    }

    std::size_t route(std::int64_t frame_index) const {
        if (warming_up()) return 0;
        const auto m = static_cast<std::int64_t>(caches_.size());
        return static_cast<std::size_t>(((frame_index % m) + m) % m);
    }

    // Routes and stores the latent; returns the evicted frame index, if any.
    std::optional<std::int64_t> push(std::int64_t frame_index, const BasicTensor<T>& latent) {
        if (pushed_ > 0 && frame_index <= last_index_) {
            throw CacheOrderError("CacheBank: frame " + std::to_string(frame_index) + " is not newer than " +
                                  std::to_string(last_index_));
        }
        if (!warming_up() && !distributed_) redistribute();
        auto evicted = caches_[route(frame_index)].push_evict(frame_index, latent);
        ++pushed_;
        last_index_ = frame_index;
        return evicted;
    }

    // Attention window for a frame that has just been pushed.
    std::vector<BasicTensor<T>> window_for(std::int64_t frame_index) const {
        return caches_[route_pushed(frame_index)].window();
    }

    const FeatureCache<T>& cache(std::size_t k) const { return caches_.at(k); }
    std::size_t cache_count() const { return caches_.size(); }
    std::size_t capacity() const { return caches_.front().capacity(); }
    std::size_t frames_pushed() const { return pushed_; }
    bool warming_up() const { return pushed_ < capacity(); }

    std::size_t memory_footprint() const {
        std::size_t n = 0;
        for (const auto& c : caches_) n += c.memory_footprint();
        return n;
    }

    void clear() {
        for (auto& c : caches_) c.clear();
        pushed_ = 0;
        last_index_ = 0;
        distributed_ = false;
    }

private:
    // Routing as it was when `frame_index` was pushed (the latest push).
    std::size_t route_pushed(std::int64_t frame_index) const {
        if (pushed_ <= capacity()) return 0;
        const auto m = static_cast<std::int64_t>(caches_.size());
        return static_cast<std::size_t>(((frame_index % m) + m) % m);
    }

    void redistribute() {
        distributed_ = true;
        if (caches_.size() == 1) return;
        const auto m = static_cast<std::int64_t>(caches_.size());
        for (auto& [idx, latent] : caches_[0].drain()) {
            caches_[static_cast<std::size_t>(((idx % m) + m) % m)].push_evict(idx, latent);
        }
    }

    std::vector<FeatureCache<T>> caches_;
    std::size_t pushed_ = 0;
    std::int64_t last_index_ = 0;
    bool distributed_ = false;
};

}  // namespace ovda
