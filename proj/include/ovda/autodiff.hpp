#pragma once

// Tape-based reverse-mode differentiation over BasicTensor.
//
// A Tape owns every value produced while it is alive. Operations append a node
// holding the forward value and, when recording and any input requires a
// gradient, a closure that maps the node's output gradient onto its inputs.
// Var is a cheap handle (tape pointer + node index).

#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <string>
#include <utility>
#include <vector>

#include "ovda/kernels.hpp"
#include "ovda/tensor.hpp"

namespace ovda::ad {

template <class T>
class Tape;

template <class T>
class Var {
public:
    Var() = default;
    Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

    const BasicTensor<T>& value() const { return tape_->value(id_); }
    const Shape& shape() const { return value().shape(); }
    std::size_t size() const { return value().size(); }
    bool requires_grad() const { return tape_->requires_grad(id_); }
    std::size_t id() const { return id_; }
    Tape<T>* tape() const { return tape_; }
    bool valid() const { return tape_ != nullptr; }

private:
    Tape<T>* tape_ = nullptr;
    std::size_t id_ = 0;
};

template <class T>
class Tape {
public:
    using BackwardFn = std::function<void(Tape&, const BasicTensor<T>& grad_out)>;

    explicit Tape(bool recording = true) : recording_(recording) {}

    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var<T> constant(BasicTensor<T> value) { return push("constant", std::move(value), false, nullptr); }

    Var<T> parameter(BasicTensor<T> value) { return push("parameter", std::move(value), true, nullptr); }

    // Appends the result of an operation. The node requires a gradient when any
    // input does; the closure is dropped when the tape is not recording.
    Var<T> record(const char* op, BasicTensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn fn) {
        bool needs = false;
        for (const Var<T>& in : inputs) needs = needs || in.requires_grad();
        needs = needs && recording_;
        return push(op, std::move(value), needs, needs ? std::move(fn) : BackwardFn{});
    }

    void accumulate(const Var<T>& v, const BasicTensor<T>& g) {
        Node& n = nodes_[v.id()];
        if (!n.requires_grad) return;
        if (g.shape() != n.value.shape()) {
            throw ShapeError("gradient shape " + shape_str(g.shape()) + " for value " + shape_str(n.value.shape()));
        }
        if (n.grad.empty()) {
            n.grad = g;
            return;
        }
        auto dst = n.grad.data();
        auto src = g.data();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }

    void backward(const Var<T>& loss) {
        if (loss.tape() != this) throw std::invalid_argument("backward: loss belongs to another tape");
        const BasicTensor<T>& lv = value(loss.id());
        if (lv.size() != 1) throw ShapeError("backward: loss must be scalar, got " + shape_str(lv.shape()));
        if (!lv.all_finite()) throw NonFiniteError("backward: loss is not finite");
        for (Node& n : nodes_) n.grad = BasicTensor<T>();
        if (!nodes_[loss.id()].requires_grad) return;
        nodes_[loss.id()].grad = BasicTensor<T>(lv.shape(), T{1});
        for (std::size_t i = loss.id() + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (n.backward && !n.grad.empty()) {
                const BasicTensor<T> g = n.grad;
                n.backward(*this, g);
            }
        }
    }

    // Gradient of a requires_grad value after backward(); zeros when the value
    // was not reachable from the loss.
    BasicTensor<T> grad(const Var<T>& v) const {
        const Node& n = nodes_.at(v.id());
        if (n.grad.empty()) return BasicTensor<T>(n.value.shape());
        return n.grad;
    }

    const BasicTensor<T>& value(std::size_t id) const { return nodes_.at(id).value; }
    bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
    const std::string& op_name(std::size_t id) const { return nodes_.at(id).op; }

    void clear() {
        nodes_.clear();
        nodes_.shrink_to_fit();
    }
    std::size_t size() const { return nodes_.size(); }
    bool recording() const { return recording_; }

    bool check_finite() const { return check_finite_; }
    void set_check_finite(bool on) { check_finite_ = on; }

private:
    struct Node {
        std::string op;
        BasicTensor<T> value;
        BasicTensor<T> grad;
        bool requires_grad = false;
        BackwardFn backward;
    };

    Var<T> push(const char* op, BasicTensor<T> value, bool requires_grad, BackwardFn fn) {
        if (check_finite_ && !value.all_finite()) {
            throw NonFiniteError(std::string("non-finite value produced by ") + op);
        }
        nodes_.push_back(Node{op, std::move(value), BasicTensor<T>(), requires_grad, std::move(fn)});
        return Var<T>(this, nodes_.size() - 1);
    }

    std::deque<Node> nodes_;  // deque keeps value references stable across pushes
    bool recording_ = true;
    bool check_finite_ = true;
};

namespace detail {

template <class T>
void require_same_tape(const Var<T>& a, const Var<T>& b, const char* op) {
    if (a.tape() != b.tape()) throw std::invalid_argument(std::string(op) + ": operands on different tapes");
}

// Broadcast rule: rhs either matches lhs exactly or holds a single value.
template <class T>
bool rhs_is_scalar(const Var<T>& a, const Var<T>& b, const char* op) {
    require_same_tape(a, b, op);
    if (a.shape() == b.shape()) return false;
    if (b.size() == 1) return true;
    throw ShapeError(std::string(op) + ": " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

template <class T>
BasicTensor<T> reduce_to(const BasicTensor<T>& g, bool to_scalar) {
    if (!to_scalar) return g;
    T s = 0;
    for (T v : g.data()) s += v;
    return BasicTensor<T>::scalar(s);
}

}  // namespace detail

template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
    detail::require_same_tape(a, b, "matmul");
    BasicTensor<T> out = kernels::parallel::matmul(a.value(), b.value());
    return a.tape()->record("matmul", std::move(out), {a, b}, [a, b](Tape<T>& t, const BasicTensor<T>& g) {
        const BasicTensor<T>& av = a.value();
        const BasicTensor<T>& bv = b.value();
        const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
        if (a.requires_grad()) {
            BasicTensor<T> ga({m, k});
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    T acc = 0;
                    for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * bv[p * n + j];
                    ga[i * k + p] = acc;
                }
            t.accumulate(a, ga);
        }
        if (b.requires_grad()) {
            BasicTensor<T> gb({k, n});
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    const T av_ip = av[i * k + p];
                    for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += av_ip * g[i * n + j];
                }
            t.accumulate(b, gb);
        }
    });
}

// x viewed as [rows, k] (any leading shape) times w [k, n] plus b [n].
template <class T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
    detail::require_same_tape(x, w, "linear");
    detail::require_same_tape(x, b, "linear");
    const BasicTensor<T>& xv = x.value();
    if (w.shape().size() != 2 || xv.rank() == 0 || xv.cols() != w.shape()[0] || b.size() != w.shape()[1]) {
        throw ShapeError("linear: x " + shape_str(xv.shape()) + ", w " + shape_str(w.shape()) + ", b " +
                         shape_str(b.shape()));
    }
    const std::size_t rows = xv.rows(), k = xv.cols(), n = w.shape()[1];
    BasicTensor<T> y = kernels::parallel::matmul(xv.reshaped({rows, k}), w.value());
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < n; ++j) y[i * n + j] += b.value()[j];
    Shape out_shape = xv.shape();
    out_shape.back() = n;
    return x.tape()->record("linear", y.reshaped(out_shape), {x, w, b},
                            [x, w, b, rows, k, n](Tape<T>& t, const BasicTensor<T>& g) {
                                const BasicTensor<T>& xv2 = x.value();
                                const BasicTensor<T>& wv = w.value();
                                if (x.requires_grad()) {
                                    BasicTensor<T> gx(xv2.shape());
                                    for (std::size_t i = 0; i < rows; ++i)
                                        for (std::size_t p = 0; p < k; ++p) {
                                            T acc = 0;
                                            for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * wv[p * n + j];
                                            gx[i * k + p] = acc;
                                        }
                                    t.accumulate(x, gx);
                                }
                                if (w.requires_grad()) {
                                    BasicTensor<T> gw({k, n});
                                    for (std::size_t i = 0; i < rows; ++i)
                                        for (std::size_t p = 0; p < k; ++p) {
                                            const T xi = xv2[i * k + p];
                                            for (std::size_t j = 0; j < n; ++j) gw[p * n + j] += xi * g[i * n + j];
                                        }
                                    t.accumulate(w, gw);
                                }
                                if (b.requires_grad()) {
                                    BasicTensor<T> gb(b.shape());
                                    for (std::size_t i = 0; i < rows; ++i)
                                        for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
                                    t.accumulate(b, gb);
                                }
                            });
}

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    const bool bs = detail::rhs_is_scalar(a, b, "add");
    BasicTensor<T> out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bs ? b.value()[0] : b.value()[i];
    return a.tape()->record("add", std::move(out), {a, b}, [a, b, bs](Tape<T>& t, const BasicTensor<T>& g) {
        t.accumulate(a, g);
        if (b.requires_grad()) t.accumulate(b, detail::reduce_to(g, bs));
    });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    const bool bs = detail::rhs_is_scalar(a, b, "sub");
    BasicTensor<T> out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bs ? b.value()[0] : b.value()[i];
    return a.tape()->record("sub", std::move(out), {a, b}, [a, b, bs](Tape<T>& t, const BasicTensor<T>& g) {
        t.accumulate(a, g);
        if (b.requires_grad()) {
            BasicTensor<T> gb = detail::reduce_to(g, bs);
            for (T& v : gb.data()) v = -v;
            t.accumulate(b, gb);
        }
    });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    const bool bs = detail::rhs_is_scalar(a, b, "mul");
    BasicTensor<T> out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bs ? b.value()[0] : b.value()[i];
    return a.tape()->record("mul", std::move(out), {a, b}, [a, b, bs](Tape<T>& t, const BasicTensor<T>& g) {
        const BasicTensor<T>& av = a.value();
        const BasicTensor<T>& bv = b.value();
        if (a.requires_grad()) {
            BasicTensor<T> ga(g.shape());
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * (bs ? bv[0] : bv[i]);
            t.accumulate(a, ga);
        }
        if (b.requires_grad()) {
            BasicTensor<T> gb(g.shape());
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] = g[i] * av[i];
            t.accumulate(b, detail::reduce_to(gb, bs));
        }
    });
}

template <class T>
Var<T> div(const Var<T>& a, const Var<T>& b) {
    const bool bs = detail::rhs_is_scalar(a, b, "div");
    BasicTensor<T> out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] /= bs ? b.value()[0] : b.value()[i];
    return a.tape()->record("div", std::move(out), {a, b}, [a, b, bs](Tape<T>& t, const BasicTensor<T>& g) {
        const BasicTensor<T>& av = a.value();
        const BasicTensor<T>& bv = b.value();
        if (a.requires_grad()) {
            BasicTensor<T> ga(g.shape());
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] / (bs ? bv[0] : bv[i]);
            t.accumulate(a, ga);
        }
        if (b.requires_grad()) {
            BasicTensor<T> gb(g.shape());
            for (std::size_t i = 0; i < g.size(); ++i) {
                const T d = bs ? bv[0] : bv[i];
                gb[i] = -g[i] * av[i] / (d * d);
            }
            t.accumulate(b, detail::reduce_to(gb, bs));
        }
    });
}

template <class T>
Var<T> scale(const Var<T>& a, T factor) {
    BasicTensor<T> out = a.value();
    for (T& v : out.data()) v *= factor;
    return a.tape()->record("scale", std::move(out), {a}, [a, factor](Tape<T>& t, const BasicTensor<T>& g) {
        BasicTensor<T> ga = g;
        for (T& v : ga.data()) v *= factor;
        t.accumulate(a, ga);
    });
}

// a [rows, n] + row [n] added to every row.
template <class T>
Var<T> add_row(const Var<T>& a, const Var<T>& row) {
    detail::require_same_tape(a, row, "add_row");
    const std::size_t n = row.size();
    if (a.value().cols() != n) throw ShapeError("add_row: " + shape_str(a.shape()) + " + " + shape_str(row.shape()));
    BasicTensor<T> out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += row.value()[i % n];
    return a.tape()->record("add_row", std::move(out), {a, row}, [a, row, n](Tape<T>& t, const BasicTensor<T>& g) {
        t.accumulate(a, g);
        if (row.requires_grad()) {
            BasicTensor<T> gr(row.shape());
            for (std::size_t i = 0; i < g.size(); ++i) gr[i % n] += g[i];
            t.accumulate(row, gr);
        }
    });
}

template <class T>
Var<T> sum(const Var<T>& a) {
    T s = 0;
    for (T v : a.value().data()) s += v;
    return a.tape()->record("sum", BasicTensor<T>::scalar(s), {a}, [a](Tape<T>& t, const BasicTensor<T>& g) {
        t.accumulate(a, BasicTensor<T>(a.shape(), g[0]));
    });
}

template <class T>
Var<T> mean(const Var<T>& a) {
    if (a.size() == 0) throw ShapeError("mean of empty tensor");
    return scale(sum(a), T{1} / static_cast<T>(a.size()));
}

template <class T>
Var<T> abs(const Var<T>& a) {
    BasicTensor<T> out = a.value();
    for (T& v : out.data()) v = std::abs(v);
    return a.tape()->record("abs", std::move(out), {a}, [a](Tape<T>& t, const BasicTensor<T>& g) {
        const BasicTensor<T>& av = a.value();
        BasicTensor<T> ga(g.shape());
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] = av[i] > 0 ? g[i] : (av[i] < 0 ? -g[i] : T{0});
        t.accumulate(a, ga);
    });
}

template <class T>
Var<T> tanh(const Var<T>& a) {
    BasicTensor<T> out = a.value();
    for (T& v : out.data()) v = std::tanh(v);
    BasicTensor<T> saved = out;
    return a.tape()->record("tanh", std::move(out), {a}, [a, saved = std::move(saved)](Tape<T>& t, const BasicTensor<T>& g) {
        BasicTensor<T> ga(g.shape());
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * (T{1} - saved[i] * saved[i]);
        t.accumulate(a, ga);
    });
}

// Row-wise softmax over the last axis, stabilised by subtracting the row max.
template <class T>
Var<T> softmax_rows(const Var<T>& x) {
    const BasicTensor<T>& xv = x.value();
    const std::size_t rows = xv.rows(), n = xv.cols();
    BasicTensor<T> y(xv.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        T mx = xv[r * n];
        for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, xv[r * n + j]);
        T z = 0;
        for (std::size_t j = 0; j < n; ++j) {
            y[r * n + j] = std::exp(xv[r * n + j] - mx);
            z += y[r * n + j];
        }
        for (std::size_t j = 0; j < n; ++j) y[r * n + j] /= z;
    }
    BasicTensor<T> saved = y;
    return x.tape()->record("softmax_rows", std::move(y), {x},
                            [x, saved = std::move(saved), rows, n](Tape<T>& t, const BasicTensor<T>& g) {
                                BasicTensor<T> gx(g.shape());
                                for (std::size_t r = 0; r < rows; ++r) {
                                    T dot = 0;
                                    for (std::size_t j = 0; j < n; ++j) dot += g[r * n + j] * saved[r * n + j];
                                    for (std::size_t j = 0; j < n; ++j)
                                        gx[r * n + j] = saved[r * n + j] * (g[r * n + j] - dot);
                                }
                                t.accumulate(x, gx);
                            });
}

// Normalises the last axis to zero mean / unit variance, then applies gain and bias.
template <class T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias, T eps) {
    detail::require_same_tape(x, gain, "layer_norm");
    detail::require_same_tape(x, bias, "layer_norm");
    const BasicTensor<T>& xv = x.value();
    const std::size_t d = xv.cols();
    if (d == 0) throw ShapeError("layer_norm: last axis is empty");
    if (!(eps > T{0})) throw std::invalid_argument("layer_norm: eps must be positive");
    if (gain.size() != d || bias.size() != d) {
        throw ShapeError("layer_norm: gain/bias must have " + std::to_string(d) + " entries");
    }
    const std::size_t rows = xv.rows();
    BasicTensor<T> xhat(xv.shape());
    std::vector<T> inv_std(rows);
    BasicTensor<T> y(xv.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        T mu = 0;
        for (std::size_t j = 0; j < d; ++j) mu += xv[r * d + j];
        mu /= static_cast<T>(d);
        T var = 0;
        for (std::size_t j = 0; j < d; ++j) var += (xv[r * d + j] - mu) * (xv[r * d + j] - mu);
        var /= static_cast<T>(d);
        inv_std[r] = T{1} / std::sqrt(var + eps);
        for (std::size_t j = 0; j < d; ++j) {
            xhat[r * d + j] = (xv[r * d + j] - mu) * inv_std[r];
            y[r * d + j] = gain.value()[j] * xhat[r * d + j] + bias.value()[j];
        }
    }
    return x.tape()->record(
        "layer_norm", std::move(y), {x, gain, bias},
        [x, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std), rows, d](Tape<T>& t,
                                                                                      const BasicTensor<T>& g) {
            if (x.requires_grad()) {
                BasicTensor<T> gx(g.shape());
                for (std::size_t r = 0; r < rows; ++r) {
                    T m1 = 0, m2 = 0;
                    for (std::size_t j = 0; j < d; ++j) {
                        const T dxh = g[r * d + j] * gain.value()[j];
                        m1 += dxh;
                        m2 += dxh * xhat[r * d + j];
                    }
                    m1 /= static_cast<T>(d);
                    m2 /= static_cast<T>(d);
                    for (std::size_t j = 0; j < d; ++j) {
                        const T dxh = g[r * d + j] * gain.value()[j];
                        gx[r * d + j] = inv_std[r] * (dxh - m1 - xhat[r * d + j] * m2);
                    }
                }
                t.accumulate(x, gx);
            }
            if (gain.requires_grad() || bias.requires_grad()) {
                BasicTensor<T> gg(gain.shape()), gb(bias.shape());
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < d; ++j) {
                        gg[j] += g[r * d + j] * xhat[r * d + j];
                        gb[j] += g[r * d + j];
                    }
                t.accumulate(gain, gg);
                t.accumulate(bias, gb);
            }
        });
}

template <class T>
Var<T> reshape(const Var<T>& a, Shape shape) {
    BasicTensor<T> out = a.value().reshaped(std::move(shape));
    return a.tape()->record("reshape", std::move(out), {a}, [a](Tape<T>& t, const BasicTensor<T>& g) {
        t.accumulate(a, g.reshaped(a.shape()));
    });
}

// [A, B, C] -> [B, A, C]; its own inverse.
template <class T>
BasicTensor<T> swap_leading_axes(const BasicTensor<T>& x) {
    if (x.rank() != 3) throw ShapeError("swap_leading_axes: expected rank 3, got " + shape_str(x.shape()));
    const std::size_t A = x.dim(0), B = x.dim(1), C = x.dim(2);
    BasicTensor<T> y({B, A, C});
    for (std::size_t a = 0; a < A; ++a)
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t c = 0; c < C; ++c) y[(b * A + a) * C + c] = x[(a * B + b) * C + c];
    return y;
}

template <class T>
Var<T> swap_leading(const Var<T>& a) {
    return a.tape()->record("swap_leading", swap_leading_axes(a.value()), {a},
                            [a](Tape<T>& t, const BasicTensor<T>& g) { t.accumulate(a, swap_leading_axes(g)); });
}

// Rows [begin, end) along axis 0.
template <class T>
Var<T> slice0(const Var<T>& a, std::size_t begin, std::size_t end) {
    const BasicTensor<T>& av = a.value();
    if (av.rank() == 0 || begin > end || end > av.dim(0)) {
        throw ShapeError("slice0: [" + std::to_string(begin) + ", " + std::to_string(end) + ") of " +
                         shape_str(av.shape()));
    }
    const std::size_t inner = av.dim(0) ? av.size() / av.dim(0) : 0;
    Shape shape = av.shape();
    shape[0] = end - begin;
    std::vector<T> out(av.data().begin() + begin * inner, av.data().begin() + end * inner);
    return a.tape()->record("slice0", BasicTensor<T>(std::move(shape), std::move(out)), {a},
                            [a, begin, inner](Tape<T>& t, const BasicTensor<T>& g) {
                                BasicTensor<T> ga(a.shape());
                                for (std::size_t i = 0; i < g.size(); ++i) ga[begin * inner + i] = g[i];
                                t.accumulate(a, ga);
                            });
}

// Rows of `a` (along axis 0) picked by index; repeated indices accumulate gradient.
template <class T>
Var<T> gather_rows(const Var<T>& a, const std::vector<std::size_t>& index) {
    const BasicTensor<T>& av = a.value();
    if (av.rank() == 0) throw ShapeError("gather_rows: scalar input");
    const std::size_t inner = av.dim(0) ? av.size() / av.dim(0) : 0;
    Shape shape = av.shape();
    shape[0] = index.size();
    BasicTensor<T> out(shape);
    for (std::size_t r = 0; r < index.size(); ++r) {
        if (index[r] >= av.dim(0)) throw ShapeError("gather_rows: index out of range");
        for (std::size_t i = 0; i < inner; ++i) out[r * inner + i] = av[index[r] * inner + i];
    }
    return a.tape()->record("gather_rows", std::move(out), {a}, [a, index, inner](Tape<T>& t, const BasicTensor<T>& g) {
        BasicTensor<T> ga(a.shape());
        for (std::size_t r = 0; r < index.size(); ++r)
            for (std::size_t i = 0; i < inner; ++i) ga[index[r] * inner + i] += g[r * inner + i];
        t.accumulate(a, ga);
    });
}

// x [N, gh*gw] on a patch grid -> [N, (gh*p)*(gw*p)], each patch value copied to its p x p block.
template <class T>
Var<T> upsample_nearest(const Var<T>& x, std::size_t grid_h, std::size_t grid_w, std::size_t p) {
    const BasicTensor<T>& xv = x.value();
    if (xv.rank() != 2 || xv.dim(1) != grid_h * grid_w) {
        throw ShapeError("upsample_nearest: expected [N, " + std::to_string(grid_h * grid_w) + "], got " +
                         shape_str(xv.shape()));
    }
    const std::size_t N = xv.dim(0), H = grid_h * p, W = grid_w * p;
    BasicTensor<T> y({N, H * W});
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t r = 0; r < H; ++r)
            for (std::size_t c = 0; c < W; ++c) y[(n * H + r) * W + c] = xv[n * grid_h * grid_w + (r / p) * grid_w + c / p];
    return x.tape()->record("upsample_nearest", std::move(y), {x},
                            [x, grid_h, grid_w, p, N, H, W](Tape<T>& t, const BasicTensor<T>& g) {
                                BasicTensor<T> gx(x.shape());
                                for (std::size_t n = 0; n < N; ++n)
                                    for (std::size_t r = 0; r < H; ++r)
                                        for (std::size_t c = 0; c < W; ++c)
                                            gx[n * grid_h * grid_w + (r / p) * grid_w + c / p] += g[(n * H + r) * W + c];
                                t.accumulate(x, gx);
                            });
}

// Token-major banded attention (see kernels::band_attention) as a differentiable op.
template <class T>
Var<T> band_attention(const Var<T>& query, const Var<T>& key_base, const Var<T>& key_pos, const Var<T>& value_base,
                      const Var<T>& value_pos, std::size_t band, T scale) {
    auto fwd = kernels::parallel::band_attention(query.value(), key_base.value(), key_pos.value(), value_base.value(),
                                                 value_pos.value(), band, scale);
    return query.tape()->record(
        "band_attention", std::move(fwd.out), {query, key_base, key_pos, value_base, value_pos},
        [query, key_base, key_pos, value_base, value_pos, band, scale,
         probs = std::move(fwd.probs)](Tape<T>& t, const BasicTensor<T>& g) {
            auto grads = kernels::parallel::band_attention_backward(g, query.value(), key_base.value(), key_pos.value(),
                                                                    value_base.value(), value_pos.value(), probs, band,
                                                                    scale);
            t.accumulate(query, grads.d_query);
            t.accumulate(key_base, grads.d_key_base);
            t.accumulate(key_pos, grads.d_key_pos);
            t.accumulate(value_base, grads.d_value_base);
            t.accumulate(value_pos, grads.d_value_pos);
        });
}

}  // namespace ovda::ad
