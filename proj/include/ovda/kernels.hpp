#pragma once

// Compute kernels used by the motion module and the dense layers.
//
// Every kernel exists twice: `serial::` is the straightforward loop nest kept
// as the reference for tests, `parallel::` is the OpenMP version used by the
// model. Both produce results that agree to rounding; the parallel versions
// are deterministic for a fixed thread count because every reduction that
// crosses threads goes through a per-token buffer merged in token order.

#include <cstddef>

#include "ovda/tensor.hpp"

namespace ovda::kernels {

// Layout of a token-major banded attention problem: S tokens, N frames,
// C channels, band width (context length) `band`.
struct BandDims {
    std::size_t tokens = 0;
    std::size_t frames = 0;
    std::size_t channels = 0;
    std::size_t band = 0;
};

// Forward result of banded attention. `probs` is [S, N, band]; slot a holds the
// weight of key frame q - a (age a) and is zero outside the window.
template <class T>
struct BandForward {
    BasicTensor<T> out;
    BasicTensor<T> probs;
};

template <class T>
struct BandGrads {
    BasicTensor<T> d_query;
    BasicTensor<T> d_key_base;
    BasicTensor<T> d_key_pos;
    BasicTensor<T> d_value_base;
    BasicTensor<T> d_value_pos;
};

// Single-frame attention against a window of w frames. `probs` is [S, w].
template <class T>
struct WindowForward {
    BasicTensor<T> out;
    BasicTensor<T> probs;
};

namespace serial {

template <class T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);

// query, key_base, value_base: [S, N, C]; key_pos, value_pos: [>=band, C].
// For query frame q and key frame k with 0 <= q - k < band:
//   key = key_base[s,k] + key_pos[q-k], value = value_base[s,k] + value_pos[q-k]
template <class T>
BandForward<T> band_attention(const BasicTensor<T>& query, const BasicTensor<T>& key_base,
                              const BasicTensor<T>& key_pos, const BasicTensor<T>& value_base,
                              const BasicTensor<T>& value_pos, std::size_t band, T scale);

template <class T>
BandGrads<T> band_attention_backward(const BasicTensor<T>& d_out, const BasicTensor<T>& query,
                                     const BasicTensor<T>& key_base, const BasicTensor<T>& key_pos,
                                     const BasicTensor<T>& value_base, const BasicTensor<T>& value_pos,
                                     const BasicTensor<T>& probs, std::size_t band, T scale);

// query: [S, C]; keys, values: [w, S, C] ordered oldest -> newest.
template <class T>
WindowForward<T> window_attention(const BasicTensor<T>& query, const BasicTensor<T>& keys,
                                  const BasicTensor<T>& values, T scale);

}  // namespace serial

namespace parallel {

template <class T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <class T>
BandForward<T> band_attention(const BasicTensor<T>& query, const BasicTensor<T>& key_base,
                              const BasicTensor<T>& key_pos, const BasicTensor<T>& value_base,
                              const BasicTensor<T>& value_pos, std::size_t band, T scale);

template <class T>
BandGrads<T> band_attention_backward(const BasicTensor<T>& d_out, const BasicTensor<T>& query,
                                     const BasicTensor<T>& key_base, const BasicTensor<T>& key_pos,
                                     const BasicTensor<T>& value_base, const BasicTensor<T>& value_pos,
                                     const BasicTensor<T>& probs, std::size_t band, T scale);

template <class T>
WindowForward<T> window_attention(const BasicTensor<T>& query, const BasicTensor<T>& keys,
                                  const BasicTensor<T>& values, T scale);

}  // namespace parallel

// Number of OpenMP threads the parallel kernels will use (1 without OpenMP).
int max_threads();
void set_threads(int n);

}  // namespace ovda::kernels
