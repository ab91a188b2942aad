#include "ovda/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace ovda::kernels {

namespace {

template <class T>
void check_matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw ShapeError("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
}

template <class T>
BandDims check_band(const BasicTensor<T>& query, const BasicTensor<T>& key_base, const BasicTensor<T>& key_pos,
                    const BasicTensor<T>& value_base, const BasicTensor<T>& value_pos, std::size_t band) {
    if (query.rank() != 3) throw ShapeError("band_attention: query must be [S, N, C], got " + shape_str(query.shape()));
    const BandDims d{query.dim(0), query.dim(1), query.dim(2), band};
    if (key_base.shape() != query.shape() || value_base.shape() != query.shape()) {
        throw ShapeError("band_attention: key/value base must match query " + shape_str(query.shape()));
    }
    if (band == 0) throw ShapeError("band_attention: band must be >= 1");
    if (key_pos.rank() != 2 || value_pos.rank() != 2 || key_pos.dim(1) != d.channels ||
        value_pos.dim(1) != d.channels || key_pos.dim(0) < std::min(band, d.frames) ||
        value_pos.dim(0) < std::min(band, d.frames)) {
        throw ShapeError("band_attention: positional tables too small for band " + std::to_string(band));
    }
    return d;
}

template <class T>
void check_window(const BasicTensor<T>& query, const BasicTensor<T>& keys, const BasicTensor<T>& values) {
    if (query.rank() != 2 || keys.rank() != 3 || keys.shape() != values.shape() || keys.dim(1) != query.dim(0) ||
        keys.dim(2) != query.dim(1)) {
        throw ShapeError("window_attention: query " + shape_str(query.shape()) + ", keys " + shape_str(keys.shape()) +
                         ", values " + shape_str(values.shape()));
    }
    if (keys.dim(0) == 0) throw ShapeError("window_attention: empty window");
}

}  // namespace

namespace serial {

template <class T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    check_matmul(a, b);
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    BasicTensor<T> c({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) acc += static_cast<double>(a[i * k + p]) * b[p * n + j];
            c[i * n + j] = static_cast<T>(acc);
        }
    }
    return c;
}

template <class T>
BandForward<T> band_attention(const BasicTensor<T>& query, const BasicTensor<T>& key_base,
                              const BasicTensor<T>& key_pos, const BasicTensor<T>& value_base,
                              const BasicTensor<T>& value_pos, std::size_t band, T scale) {
    const BandDims d = check_band(query, key_base, key_pos, value_base, value_pos, band);
    const std::size_t C = d.channels;
    BandForward<T> r{BasicTensor<T>(query.shape()), BasicTensor<T>({d.tokens, d.frames, band})};
    std::vector<double> key(C), scores;
    for (std::size_t s = 0; s < d.tokens; ++s) {
        for (std::size_t q = 0; q < d.frames; ++q) {
            // Materialise every admissible key, then softmax over ages.
            scores.assign(band, -std::numeric_limits<double>::infinity());
            for (std::size_t k = 0; k <= q; ++k) {
                const std::size_t age = q - k;
                if (age >= band) continue;
                double dot = 0.0;
                for (std::size_t c = 0; c < C; ++c) {
                    key[c] = static_cast<double>(key_base[(s * d.frames + k) * C + c]) + key_pos[age * C + c];
                    dot += static_cast<double>(query[(s * d.frames + q) * C + c]) * key[c];
                }
                scores[age] = dot * scale;
            }
            const double mx = *std::max_element(scores.begin(), scores.end());
            double z = 0.0;
            for (double& v : scores) {
                v = std::isinf(v) ? 0.0 : std::exp(v - mx);
                z += v;
            }
            for (std::size_t c = 0; c < C; ++c) {
                double acc = 0.0;
                for (std::size_t age = 0; age < band && age <= q; ++age) {
                    const std::size_t k = q - age;
                    acc += scores[age] / z *
                           (static_cast<double>(value_base[(s * d.frames + k) * C + c]) + value_pos[age * C + c]);
                }
                r.out[(s * d.frames + q) * C + c] = static_cast<T>(acc);
            }
            for (std::size_t age = 0; age < band; ++age) {
                r.probs[(s * d.frames + q) * band + age] = static_cast<T>(scores[age] / z);
            }
        }
    }
    return r;
}

template <class T>
BandGrads<T> band_attention_backward(const BasicTensor<T>& d_out, const BasicTensor<T>& query,
                                     const BasicTensor<T>& key_base, const BasicTensor<T>& key_pos,
                                     const BasicTensor<T>& value_base, const BasicTensor<T>& value_pos,
                                     const BasicTensor<T>& probs, std::size_t band, T scale) {
    const BandDims d = check_band(query, key_base, key_pos, value_base, value_pos, band);
    const std::size_t C = d.channels, N = d.frames;
    BandGrads<T> g{BasicTensor<T>(query.shape()), BasicTensor<T>(query.shape()), BasicTensor<T>(key_pos.shape()),
                   BasicTensor<T>(query.shape()), BasicTensor<T>(value_pos.shape())};
    std::vector<double> dp(band);
    for (std::size_t s = 0; s < d.tokens; ++s) {
        for (std::size_t q = 0; q < N; ++q) {
            const std::size_t qi = (s * N + q) * C;
            const std::size_t width = std::min(band, q + 1);
            double dot_pd = 0.0;
            for (std::size_t age = 0; age < width; ++age) {
                const std::size_t ki = (s * N + (q - age)) * C;
                const double p = probs[(s * N + q) * band + age];
                double acc = 0.0;
                for (std::size_t c = 0; c < C; ++c) {
                    const double v = static_cast<double>(value_base[ki + c]) + value_pos[age * C + c];
                    acc += static_cast<double>(d_out[qi + c]) * v;
                    g.d_value_base[ki + c] += static_cast<T>(p * d_out[qi + c]);
                    g.d_value_pos[age * C + c] += static_cast<T>(p * d_out[qi + c]);
                }
                dp[age] = acc;
                dot_pd += p * acc;
            }
            for (std::size_t age = 0; age < width; ++age) {
                const std::size_t ki = (s * N + (q - age)) * C;
                const double p = probs[(s * N + q) * band + age];
                const double ds = p * (dp[age] - dot_pd) * scale;
                for (std::size_t c = 0; c < C; ++c) {
                    const double kv = static_cast<double>(key_base[ki + c]) + key_pos[age * C + c];
                    g.d_query[qi + c] += static_cast<T>(ds * kv);
                    g.d_key_base[ki + c] += static_cast<T>(ds * query[qi + c]);
                    g.d_key_pos[age * C + c] += static_cast<T>(ds * query[qi + c]);
                }
            }
        }
    }
    return g;
}

template <class T>
WindowForward<T> window_attention(const BasicTensor<T>& query, const BasicTensor<T>& keys,
                                  const BasicTensor<T>& values, T scale) {
    check_window(query, keys, values);
    const std::size_t w = keys.dim(0), S = query.dim(0), C = query.dim(1);
    WindowForward<T> r{BasicTensor<T>(query.shape()), BasicTensor<T>({S, w})};
    std::vector<double> scores(w);
    for (std::size_t s = 0; s < S; ++s) {
        for (std::size_t i = 0; i < w; ++i) {
            double dot = 0.0;
            for (std::size_t c = 0; c < C; ++c) dot += static_cast<double>(query[s * C + c]) * keys[(i * S + s) * C + c];
            scores[i] = dot * scale;
        }
        const double mx = *std::max_element(scores.begin(), scores.end());
        double z = 0.0;
        for (double& v : scores) {
            v = std::exp(v - mx);
            z += v;
        }
        for (std::size_t c = 0; c < C; ++c) {
            double acc = 0.0;
            for (std::size_t i = 0; i < w; ++i) acc += scores[i] / z * values[(i * S + s) * C + c];
            r.out[s * C + c] = static_cast<T>(acc);
        }
        for (std::size_t i = 0; i < w; ++i) r.probs[s * w + i] = static_cast<T>(scores[i] / z);
    }
    return r;
}

}  // namespace serial

namespace parallel {

template <class T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    check_matmul(a, b);
    const std::ptrdiff_t m = static_cast<std::ptrdiff_t>(a.dim(0));
    const std::size_t k = a.dim(1), n = b.dim(1);
    BasicTensor<T> c({a.dim(0), n});
    const T* pa = a.data().data();
    const T* pb = b.data().data();
    T* pc = c.data().data();
#pragma omp parallel for schedule(static) if (m * static_cast<std::ptrdiff_t>(k * n) > 32768)
    for (std::ptrdiff_t i = 0; i < m; ++i) {
        T* row = pc + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const T av = pa[i * k + p];
            const T* brow = pb + p * n;
            for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
        }
    }
    return c;
}

template <class T>
BandForward<T> band_attention(const BasicTensor<T>& query, const BasicTensor<T>& key_base,
                              const BasicTensor<T>& key_pos, const BasicTensor<T>& value_base,
                              const BasicTensor<T>& value_pos, std::size_t band, T scale) {
    const BandDims d = check_band(query, key_base, key_pos, value_base, value_pos, band);
    const std::size_t C = d.channels, N = d.frames;
    BandForward<T> r{BasicTensor<T>(query.shape()), BasicTensor<T>({d.tokens, N, band})};
    const T* Q = query.data().data();
    const T* Kb = key_base.data().data();
    const T* Kp = key_pos.data().data();
    const T* Vb = value_base.data().data();
    const T* Vp = value_pos.data().data();
    T* O = r.out.data().data();
    T* P = r.probs.data().data();
    const std::ptrdiff_t work = static_cast<std::ptrdiff_t>(d.tokens * N);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t idx = 0; idx < work; ++idx) {
        const std::size_t s = static_cast<std::size_t>(idx) / N;
        const std::size_t q = static_cast<std::size_t>(idx) % N;
        const std::size_t width = std::min(band, q + 1);
        const T* qv = Q + (s * N + q) * C;
        T* pr = P + (s * N + q) * band;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t age = 0; age < width; ++age) {
            const T* kb = Kb + (s * N + q - age) * C;
            const T* kp = Kp + age * C;
            T dot = 0;
            for (std::size_t c = 0; c < C; ++c) dot += qv[c] * (kb[c] + kp[c]);
            pr[age] = dot * scale;
            mx = std::max(mx, pr[age]);
        }
        T z = 0;
        for (std::size_t age = 0; age < width; ++age) {
            pr[age] = std::exp(pr[age] - mx);
            z += pr[age];
        }
        T* ov = O + (s * N + q) * C;
        for (std::size_t age = 0; age < width; ++age) {
            pr[age] /= z;
            const T* vb = Vb + (s * N + q - age) * C;
            const T* vp = Vp + age * C;
            for (std::size_t c = 0; c < C; ++c) ov[c] += pr[age] * (vb[c] + vp[c]);
        }
    }
    return r;
}

template <class T>
BandGrads<T> band_attention_backward(const BasicTensor<T>& d_out, const BasicTensor<T>& query,
                                     const BasicTensor<T>& key_base, const BasicTensor<T>& key_pos,
                                     const BasicTensor<T>& value_base, const BasicTensor<T>& value_pos,
                                     const BasicTensor<T>& probs, std::size_t band, T scale) {
    const BandDims d = check_band(query, key_base, key_pos, value_base, value_pos, band);
    const std::size_t C = d.channels, N = d.frames, S = d.tokens;
    BandGrads<T> g{BasicTensor<T>(query.shape()), BasicTensor<T>(query.shape()), BasicTensor<T>(key_pos.shape()),
                   BasicTensor<T>(query.shape()), BasicTensor<T>(value_pos.shape())};
    // Per-token partials for the shared positional tables, merged in token order below.
    const std::size_t ages = std::min(band, N);
    std::vector<T> kp_part(S * ages * C, T{0}), vp_part(S * ages * C, T{0});
    const T* dO = d_out.data().data();
    const T* Q = query.data().data();
    const T* Kb = key_base.data().data();
    const T* Kp = key_pos.data().data();
    const T* Vb = value_base.data().data();
    const T* Vp = value_pos.data().data();
    const T* P = probs.data().data();
    T* dQ = g.d_query.data().data();
    T* dKb = g.d_key_base.data().data();
    T* dVb = g.d_value_base.data().data();
#pragma omp parallel
    {
        std::vector<T> dp(band);
#pragma omp for schedule(static)
        for (std::ptrdiff_t si = 0; si < static_cast<std::ptrdiff_t>(S); ++si) {
            const std::size_t s = static_cast<std::size_t>(si);
            T* kpp = kp_part.data() + s * ages * C;
            T* vpp = vp_part.data() + s * ages * C;
            for (std::size_t q = 0; q < N; ++q) {
                const std::size_t qi = (s * N + q) * C;
                const std::size_t width = std::min(band, q + 1);
                const T* pr = P + (s * N + q) * band;
                T dot_pd = 0;
                for (std::size_t age = 0; age < width; ++age) {
                    const std::size_t ki = (s * N + q - age) * C;
                    T acc = 0;
                    for (std::size_t c = 0; c < C; ++c) {
                        acc += dO[qi + c] * (Vb[ki + c] + Vp[age * C + c]);
                        const T gv = pr[age] * dO[qi + c];
                        dVb[ki + c] += gv;
                        vpp[age * C + c] += gv;
                    }
                    dp[age] = acc;
                    dot_pd += pr[age] * acc;
                }
                for (std::size_t age = 0; age < width; ++age) {
                    const std::size_t ki = (s * N + q - age) * C;
                    const T ds = pr[age] * (dp[age] - dot_pd) * scale;
                    for (std::size_t c = 0; c < C; ++c) {
                        dQ[qi + c] += ds * (Kb[ki + c] + Kp[age * C + c]);
                        const T gk = ds * Q[qi + c];
                        dKb[ki + c] += gk;
                        kpp[age * C + c] += gk;
                    }
                }
            }
        }
    }
    for (std::size_t s = 0; s < S; ++s) {
        for (std::size_t i = 0; i < ages * C; ++i) {
            g.d_key_pos[i] += kp_part[s * ages * C + i];
            g.d_value_pos[i] += vp_part[s * ages * C + i];
        }
    }
    return g;
}

template <class T>
WindowForward<T> window_attention(const BasicTensor<T>& query, const BasicTensor<T>& keys,
                                  const BasicTensor<T>& values, T scale) {
    check_window(query, keys, values);
    const std::size_t w = keys.dim(0), S = query.dim(0), C = query.dim(1);
    WindowForward<T> r{BasicTensor<T>(query.shape()), BasicTensor<T>({S, w})};
    const T* Q = query.data().data();
    const T* K = keys.data().data();
    const T* V = values.data().data();
    T* O = r.out.data().data();
    T* P = r.probs.data().data();
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t si = 0; si < static_cast<std::ptrdiff_t>(S); ++si) {
        const std::size_t s = static_cast<std::size_t>(si);
        T* pr = P + s * w;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t i = 0; i < w; ++i) {
            const T* kv = K + (i * S + s) * C;
            T dot = 0;
            for (std::size_t c = 0; c < C; ++c) dot += Q[s * C + c] * kv[c];
            pr[i] = dot * scale;
            mx = std::max(mx, pr[i]);
        }
        T z = 0;
        for (std::size_t i = 0; i < w; ++i) {
            pr[i] = std::exp(pr[i] - mx);
            z += pr[i];
        }
        T* ov = O + s * C;
        for (std::size_t i = 0; i < w; ++i) {
            pr[i] /= z;
            const T* vv = V + (i * S + s) * C;
            for (std::size_t c = 0; c < C; ++c) ov[c] += pr[i] * vv[c];
        }
    }
    return r;
}

}  // namespace parallel

int max_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

void set_threads(int n) {
#ifdef _OPENMP
    if (n > 0) omp_set_num_threads(n);
#else
    (void)n;
#endif
}

#define OVDA_INSTANTIATE_KERNELS(NS, T)                                                                             \
    template BasicTensor<T> NS::matmul<T>(const BasicTensor<T>&, const BasicTensor<T>&);                          \
    template BandForward<T> NS::band_attention<T>(const BasicTensor<T>&, const BasicTensor<T>&,                   \
                                                  const BasicTensor<T>&, const BasicTensor<T>&,                   \
                                                  const BasicTensor<T>&, std::size_t, T);                         \
    template BandGrads<T> NS::band_attention_backward<T>(                                                          \
        const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&,                \
        const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&, std::size_t, T);                      \
    template WindowForward<T> NS::window_attention<T>(const BasicTensor<T>&, const BasicTensor<T>&,               \
                                                      const BasicTensor<T>&, T);

OVDA_INSTANTIATE_KERNELS(serial, float)
OVDA_INSTANTIATE_KERNELS(serial, double)
OVDA_INSTANTIATE_KERNELS(parallel, float)
OVDA_INSTANTIATE_KERNELS(parallel, double)

#undef OVDA_INSTANTIATE_KERNELS

}  // namespace ovda::kernels
