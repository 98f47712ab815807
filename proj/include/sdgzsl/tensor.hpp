#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "sdgzsl/errors.hpp"
#include "sdgzsl/rng.hpp"

namespace sdgzsl {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (auto e : s) n *= e;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << ']';
    return os.str();
}

template <class T>
class Tape;

template <class T>
struct TensorData {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;   // empty until backward reaches this node
    bool tracked = false;  // participates in autodiff
    Tape<T>* tape = nullptr;
    std::int64_t node_id = -1;
};

// Dense row-major tensor; a cheap shared handle. Ops executed while a Tape
// is active and touching at least one tracked tensor are recorded for
// reverse-mode differentiation.
template <class T>
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape) {
        return from(std::move(shape), {});
    }
    static Tensor full(Shape shape, T v) {
        Tensor t = zeros(std::move(shape));
        std::fill(t.d_->value.begin(), t.d_->value.end(), v);
        return t;
    }
    static Tensor from(Shape shape, std::vector<T> value) {
        for (auto e : shape)
            if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
        auto d = std::make_shared<TensorData<T>>();
        std::size_t n = shape_numel(shape);
        if (value.empty()) value.assign(n, T{0});
        if (value.size() != n)
            throw ShapeError("tensor data length " + std::to_string(value.size()) +
                             " does not match shape " + shape_str(shape));
        d->shape = std::move(shape);
        d->value = std::move(value);
        Tensor t;
        t.d_ = std::move(d);
        return t;
    }
    static Tensor scalar(T v) { return from({1}, {v}); }
    // Tracked leaf (a trainable parameter).
    static Tensor param(Shape shape, std::vector<T> value) {
        Tensor t = from(std::move(shape), std::move(value));
        t.d_->tracked = true;
        return t;
    }

    bool defined() const { return d_ != nullptr; }
    const Shape& shape() const { return d_->shape; }
    std::size_t numel() const { return d_->value.size(); }
    std::size_t rows() const { return d_->shape.size() == 2 ? d_->shape[0] : 1; }
    std::size_t cols() const { return d_->shape.empty() ? 1 : d_->shape.back(); }

    const std::vector<T>& val() const { return d_->value; }
    std::vector<T>& val_mut() { return d_->value; }
    T item() const {
        if (numel() != 1) throw ContractError("item(): tensor is not scalar, shape " + shape_str(shape()));
        return d_->value[0];
    }

    bool tracked() const { return d_ && d_->tracked; }
    bool has_grad() const { return d_ && !d_->grad.empty(); }
    const std::vector<T>& grad() const {
        if (!has_grad()) throw ContractError("grad(): no gradient present; call backward() first");
        return d_->grad;
    }
    void zero_grad() {
        if (d_) d_->grad.clear();
    }
    std::int64_t node_id() const { return d_->node_id; }

    // Untracked copy of the values.
    Tensor detach() const {
        return from(d_->shape, d_->value);
    }

    std::shared_ptr<TensorData<T>> data_ptr() const { return d_; }

private:
    std::shared_ptr<TensorData<T>> d_;
};

// Ordered record of executed operations. Parents are recorded before
// children, and backward() replays the records in exact reverse order.
// Construction activates the tape for the current thread (one at a time);
// destruction or reset() deactivates it.
template <class T>
class Tape {
public:
    Tape() {
        if (active_) throw ContractError("Tape: another tape is already active on this thread");
        active_ = this;
    }
    ~Tape() {
        if (active_ == this) active_ = nullptr;
    }
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape* active() { return active_; }

    void record(std::shared_ptr<TensorData<T>> out, std::function<void()> pull) {
        out->tracked = true;
        out->tape = this;
        out->node_id = static_cast<std::int64_t>(records_.size());
        records_.push_back({std::move(out), std::move(pull)});
    }

    std::size_t size() const { return records_.size(); }
    bool consumed() const { return consumed_; }

    void backward(const Tensor<T>& loss) {
        if (loss.numel() != 1)
            throw ContractError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
        auto d = loss.data_ptr();
        if (!d->tracked || d->tape != this)
            throw ContractError("backward: loss is not tracked on the active tape");
        if (consumed_)
            throw ContractError("backward: tape already consumed; reset() before calling again");
        consumed_ = true;
        d->grad.assign(1, T{1});
        for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
            if (!it->out->grad.empty()) it->pull();
        }
    }

    void reset() {
        if (active_ == this) active_ = nullptr;
        records_.clear();
        consumed_ = false;
    }

private:
    struct Record {
        std::shared_ptr<TensorData<T>> out;
        std::function<void()> pull;
    };
    std::vector<Record> records_;
    bool consumed_ = false;
    static thread_local Tape* active_;
};

template <class T>
thread_local Tape<T>* Tape<T>::active_ = nullptr;

template <class T>
void backward(const Tensor<T>& loss) {
    auto d = loss.data_ptr();
    if (!d || !d->tracked || d->tape == nullptr)
        throw ContractError("backward: loss is not on an active tape");
    d->tape->backward(loss);
}

// ---------------------------------------------------------------------------
// op plumbing
// ---------------------------------------------------------------------------

namespace detail {

template <class T>
void check_finite(const std::vector<T>& v, const char* op) {
    for (T x : v)
        if (!std::isfinite(static_cast<double>(x)))
            throw NumericError(std::string("op '") + op + "' produced a non-finite value");
}

template <class T>
std::vector<T>& ensure_grad(const std::shared_ptr<TensorData<T>>& d) {
    if (d->grad.empty()) d->grad.assign(d->value.size(), T{0});
    return d->grad;
}

template <class T>
bool any_tracked(std::initializer_list<const Tensor<T>*> ins) {
    for (auto* t : ins)
        if (t->tracked()) return true;
    return false;
}

// Finalize an op: finiteness check, then record on the active tape when any
// input is tracked. `pull` must accumulate grads into tracked inputs and
// finite-check what it wrote.
template <class T, class F>
Tensor<T> finish_op(const char* name, Tensor<T> out,
                    std::initializer_list<const Tensor<T>*> ins, F&& make_pull) {
    check_finite(out.val(), name);
    Tape<T>* tp = Tape<T>::active();
    if (tp && any_tracked<T>(ins)) {
        tp->record(out.data_ptr(), make_pull());
    }
    return out;
}

template <class T>
void require_matrix(const Tensor<T>& t, const char* op) {
    if (t.shape().size() != 2)
        throw ShapeError(std::string(op) + ": expected a rank-2 tensor, got " + shape_str(t.shape()));
}

} // namespace detail

// ---------------------------------------------------------------------------
// elementwise arithmetic
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape())
        throw ShapeError("add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    std::vector<T> v(a.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.val()[i] + b.val()[i];
    Tensor<T> out = Tensor<T>::from(a.shape(), std::move(v));
    return detail::finish_op<T>("add", out, {&a, &b}, [&] {
        auto ad = a.data_ptr(), bd = b.data_ptr(), od = out.data_ptr();
        return [ad, bd, od] {
            const auto& g = od->grad;
            if (ad->tracked) {
                auto& ga = detail::ensure_grad(ad);
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                detail::check_finite(ga, "add.backward");
            }
            if (bd->tracked) {
                auto& gb = detail::ensure_grad(bd);
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
                detail::check_finite(gb, "add.backward");
            }
        };
    });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape())
        throw ShapeError("sub: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    std::vector<T> v(a.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.val()[i] - b.val()[i];
    Tensor<T> out = Tensor<T>::from(a.shape(), std::move(v));
    return detail::finish_op<T>("sub", out, {&a, &b}, [&] {
        auto ad = a.data_ptr(), bd = b.data_ptr(), od = out.data_ptr();
        return [ad, bd, od] {
            const auto& g = od->grad;
            if (ad->tracked) {
                auto& ga = detail::ensure_grad(ad);
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                detail::check_finite(ga, "sub.backward");
            }
            if (bd->tracked) {
                auto& gb = detail::ensure_grad(bd);
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                detail::check_finite(gb, "sub.backward");
            }
        };
    });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape())
        throw ShapeError("mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    std::vector<T> v(a.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.val()[i] * b.val()[i];
    Tensor<T> out = Tensor<T>::from(a.shape(), std::move(v));
    return detail::finish_op<T>("mul", out, {&a, &b}, [&] {
        auto ad = a.data_ptr(), bd = b.data_ptr(), od = out.data_ptr();
        return [ad, bd, od] {
            const auto& g = od->grad;
            if (ad->tracked) {
                auto& ga = detail::ensure_grad(ad);
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bd->value[i];
                detail::check_finite(ga, "mul.backward");
            }
            if (bd->tracked) {
                auto& gb = detail::ensure_grad(bd);
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * ad->value[i];
                detail::check_finite(gb, "mul.backward");
            }
        };
    });
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T c) {
    std::vector<T> v(a.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.val()[i] * c;
    Tensor<T> out = Tensor<T>::from(a.shape(), std::move(v));
    return detail::finish_op<T>("scale", out, {&a}, [&] {
        auto ad = a.data_ptr();
        auto od = out.data_ptr();
        return [ad, od, c] {
            if (!ad->tracked) return;
            const auto& g = od->grad;
            auto& ga = detail::ensure_grad(ad);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
            detail::check_finite(ga, "scale.backward");
        };
    });
}

template <class T>
Tensor<T> add_const(const Tensor<T>& a, T c) {
    std::vector<T> v(a.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.val()[i] + c;
    Tensor<T> out = Tensor<T>::from(a.shape(), std::move(v));
    return detail::finish_op<T>("add_const", out, {&a}, [&] {
        auto ad = a.data_ptr();
        auto od = out.data_ptr();
        return [ad, od] {
            if (!ad->tracked) return;
            const auto& g = od->grad;
            auto& ga = detail::ensure_grad(ad);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            detail::check_finite(ga, "add_const.backward");
        };
    });
}

// ---------------------------------------------------------------------------
// matmul and broadcasting bias
// ---------------------------------------------------------------------------

namespace detail {

// C[M x N] (+)= A[M x K] * B[K x N], optionally transposing either input.
template <class T>
void gemm(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n,
          bool trans_a, bool trans_b) {
    for (std::size_t i = 0; i < m; ++i) {
        T* crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const T av = trans_a ? a[p * m + i] : a[i * k + p];
            if (av == T{0}) continue;
            if (!trans_b) {
                const T* brow = b + p * n;
                for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
            } else {
                for (std::size_t j = 0; j < n; ++j) crow[j] += av * b[j * k + p];
            }
        }
    }
}

} // namespace detail

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_matrix(a, "matmul");
    detail::require_matrix(b, "matmul");
    const std::size_t m = a.shape()[0], k = a.shape()[1];
    const std::size_t k2 = b.shape()[0], n = b.shape()[1];
    if (k != k2)
        throw ShapeError("matmul: inner extents differ: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    std::vector<T> v(m * n, T{0});
    detail::gemm(a.val().data(), b.val().data(), v.data(), m, k, n, false, false);
    Tensor<T> out = Tensor<T>::from({m, n}, std::move(v));
    return detail::finish_op<T>("matmul", out, {&a, &b}, [&] {
        auto ad = a.data_ptr(), bd = b.data_ptr(), od = out.data_ptr();
        return [ad, bd, od, m, k, n] {
            const auto& g = od->grad;
            if (ad->tracked) {
                auto& ga = detail::ensure_grad(ad);
                // dA = g * B^T
                detail::gemm(g.data(), bd->value.data(), ga.data(), m, n, k, false, true);
                detail::check_finite(ga, "matmul.backward");
            }
            if (bd->tracked) {
                auto& gb = detail::ensure_grad(bd);
                // dB = A^T * g
                detail::gemm(ad->value.data(), g.data(), gb.data(), k, m, n, true, false);
                detail::check_finite(gb, "matmul.backward");
            }
        };
    });
}

// x [n x p] + v broadcast over rows; v is [p] or [1 x p].
template <class T>
Tensor<T> add_rowvec(const Tensor<T>& x, const Tensor<T>& v) {
    detail::require_matrix(x, "add_rowvec");
    const std::size_t n = x.shape()[0], p = x.shape()[1];
    if (v.numel() != p)
        throw ShapeError("add_rowvec: vector length " + std::to_string(v.numel()) +
                         " does not match columns of " + shape_str(x.shape()));
    std::vector<T> out_v(n * p);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < p; ++j) out_v[i * p + j] = x.val()[i * p + j] + v.val()[j];
    Tensor<T> out = Tensor<T>::from({n, p}, std::move(out_v));
    return detail::finish_op<T>("add_rowvec", out, {&x, &v}, [&] {
        auto xd = x.data_ptr(), vd = v.data_ptr(), od = out.data_ptr();
        return [xd, vd, od, n, p] {
            const auto& g = od->grad;
            if (xd->tracked) {
                auto& gx = detail::ensure_grad(xd);
                for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                detail::check_finite(gx, "add_rowvec.backward");
            }
            if (vd->tracked) {
                auto& gv = detail::ensure_grad(vd);
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < p; ++j) gv[j] += g[i * p + j];
                detail::check_finite(gv, "add_rowvec.backward");
            }
        };
    });
}

// ---------------------------------------------------------------------------
// pointwise nonlinearities
// ---------------------------------------------------------------------------

namespace detail {

// Generic unary pointwise op: fwd(x) and dfx(x, y) = d out / d x.
template <class T, class Fwd, class Dfx>
Tensor<T> pointwise(const char* name, const Tensor<T>& x, Fwd fwd, Dfx dfx) {
    std::vector<T> v(x.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = fwd(x.val()[i]);
    Tensor<T> out = Tensor<T>::from(x.shape(), std::move(v));
    return finish_op<T>(name, out, {&x}, [&] {
        auto xd = x.data_ptr();
        auto od = out.data_ptr();
        std::string nm = std::string(name) + ".backward";
        return [xd, od, dfx, nm] {
            if (!xd->tracked) return;
            const auto& g = od->grad;
            auto& gx = ensure_grad(xd);
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * dfx(xd->value[i], od->value[i]);
            check_finite(gx, nm.c_str());
        };
    });
}

} // namespace detail

template <class T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope) {
    return detail::pointwise<T>(
        "leaky_relu", x, [slope](T v) { return v > T{0} ? v : slope * v; },
        [slope](T v, T) { return v > T{0} ? T{1} : slope; });
}

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
    return detail::pointwise<T>(
        "relu", x, [](T v) { return v > T{0} ? v : T{0}; },
        [](T v, T) { return v > T{0} ? T{1} : T{0}; });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    return detail::pointwise<T>(
        "sigmoid", x,
        [](T v) {
            if (v >= T{0}) return T{1} / (T{1} + std::exp(-v));
            T e = std::exp(v);
            return e / (T{1} + e);
        },
        [](T, T y) { return y * (T{1} - y); });
}

template <class T>
Tensor<T> softplus(const Tensor<T>& x) {
    return detail::pointwise<T>(
        "softplus", x,
        [](T v) { return std::max(v, T{0}) + std::log1p(std::exp(-std::abs(v))); },
        [](T v, T) {
            if (v >= T{0}) return T{1} / (T{1} + std::exp(-v));
            T e = std::exp(v);
            return e / (T{1} + e);
        });
}

template <class T>
Tensor<T> exp(const Tensor<T>& x) {
    return detail::pointwise<T>(
        "exp", x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <class T>
Tensor<T> log(const Tensor<T>& x) {
    return detail::pointwise<T>(
        "log", x, [](T v) { return std::log(v); }, [](T v, T) { return T{1} / v; });
}

template <class T>
Tensor<T> square(const Tensor<T>& x) {
    return detail::pointwise<T>(
        "square", x, [](T v) { return v * v; }, [](T v, T) { return T{2} * v; });
}

// Pass-through inside (lo, hi); zero gradient where the value got clipped.
template <class T>
Tensor<T> clamp(const Tensor<T>& x, T lo, T hi) {
    if (!(lo < hi)) throw ConfigError("clamp: lo must be < hi");
    return detail::pointwise<T>(
        "clamp", x, [lo, hi](T v) { return std::min(std::max(v, lo), hi); },
        [lo, hi](T v, T) { return (v > lo && v < hi) ? T{1} : T{0}; });
}

// ---------------------------------------------------------------------------
// dropout
// ---------------------------------------------------------------------------

// Training mode: zero each entry with probability `rate`, scale survivors by
// 1/(1-rate). Eval mode (training=false) is the identity and draws nothing;
// rate 0 likewise short-circuits. Mask entries are drawn row-major.
template <class T>
Tensor<T> dropout(const Tensor<T>& x, double rate, Rng& rng, bool training) {
    if (rate < 0.0 || rate >= 1.0)
        throw ConfigError("dropout: rate must be in [0, 1), got " + std::to_string(rate));
    if (!training || rate == 0.0) return x;
    const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
    auto mask = std::make_shared<std::vector<T>>(x.numel());
    std::vector<T> v(x.numel());
    for (std::size_t i = 0; i < v.size(); ++i) {
        (*mask)[i] = rng.uniform() >= rate ? keep_scale : T{0};
        v[i] = x.val()[i] * (*mask)[i];
    }
    Tensor<T> out = Tensor<T>::from(x.shape(), std::move(v));
    return detail::finish_op<T>("dropout", out, {&x}, [&] {
        auto xd = x.data_ptr();
        auto od = out.data_ptr();
        return [xd, od, mask] {
            if (!xd->tracked) return;
            const auto& g = od->grad;
            auto& gx = detail::ensure_grad(xd);
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (*mask)[i];
            detail::check_finite(gx, "dropout.backward");
        };
    });
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> concat_cols(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_matrix(a, "concat_cols");
    detail::require_matrix(b, "concat_cols");
    const std::size_t n = a.shape()[0], p = a.shape()[1], q = b.shape()[1];
    if (b.shape()[0] != n)
        throw ShapeError("concat_cols: row counts differ: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    std::vector<T> v(n * (p + q));
    for (std::size_t i = 0; i < n; ++i) {
        std::copy_n(a.val().data() + i * p, p, v.data() + i * (p + q));
        std::copy_n(b.val().data() + i * q, q, v.data() + i * (p + q) + p);
    }
    Tensor<T> out = Tensor<T>::from({n, p + q}, std::move(v));
    return detail::finish_op<T>("concat_cols", out, {&a, &b}, [&] {
        auto ad = a.data_ptr(), bd = b.data_ptr(), od = out.data_ptr();
        return [ad, bd, od, n, p, q] {
            const auto& g = od->grad;
            if (ad->tracked) {
                auto& ga = detail::ensure_grad(ad);
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < p; ++j) ga[i * p + j] += g[i * (p + q) + j];
                detail::check_finite(ga, "concat_cols.backward");
            }
            if (bd->tracked) {
                auto& gb = detail::ensure_grad(bd);
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < q; ++j) gb[i * q + j] += g[i * (p + q) + p + j];
                detail::check_finite(gb, "concat_cols.backward");
            }
        };
    });
}

// Columns [begin, end) of x.
template <class T>
Tensor<T> slice_cols(const Tensor<T>& x, std::size_t begin, std::size_t end) {
    detail::require_matrix(x, "slice_cols");
    const std::size_t n = x.shape()[0], p = x.shape()[1];
    if (begin >= end || end > p)
        throw ShapeError("slice_cols: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") out of bounds for " + shape_str(x.shape()));
    const std::size_t w = end - begin;
    std::vector<T> v(n * w);
    for (std::size_t i = 0; i < n; ++i)
        std::copy_n(x.val().data() + i * p + begin, w, v.data() + i * w);
    Tensor<T> out = Tensor<T>::from({n, w}, std::move(v));
    return detail::finish_op<T>("slice_cols", out, {&x}, [&] {
        auto xd = x.data_ptr();
        auto od = out.data_ptr();
        return [xd, od, n, p, begin, w] {
            if (!xd->tracked) return;
            const auto& g = od->grad;
            auto& gx = detail::ensure_grad(xd);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < w; ++j) gx[i * p + begin + j] += g[i * w + j];
            detail::check_finite(gx, "slice_cols.backward");
        };
    });
}

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
    if (shape_numel(shape) != x.numel())
        throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    Tensor<T> out = Tensor<T>::from(std::move(shape), x.val());
    return detail::finish_op<T>("reshape", out, {&x}, [&] {
        auto xd = x.data_ptr();
        auto od = out.data_ptr();
        return [xd, od] {
            if (!xd->tracked) return;
            const auto& g = od->grad;
            auto& gx = detail::ensure_grad(xd);
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
            detail::check_finite(gx, "reshape.backward");
        };
    });
}

// Rows of x selected by idx (repeats allowed); backward scatter-adds.
template <class T>
Tensor<T> gather_rows(const Tensor<T>& x, const std::vector<std::size_t>& idx) {
    detail::require_matrix(x, "gather_rows");
    const std::size_t n = x.shape()[0], p = x.shape()[1];
    for (auto i : idx)
        if (i >= n)
            throw ShapeError("gather_rows: index " + std::to_string(i) + " out of range for " +
                             shape_str(x.shape()));
    std::vector<T> v(idx.size() * p);
    for (std::size_t r = 0; r < idx.size(); ++r)
        std::copy_n(x.val().data() + idx[r] * p, p, v.data() + r * p);
    Tensor<T> out = Tensor<T>::from({idx.size(), p}, std::move(v));
    return detail::finish_op<T>("gather_rows", out, {&x}, [&] {
        auto xd = x.data_ptr();
        auto od = out.data_ptr();
        auto ix = idx;
        return [xd, od, ix, p] {
            if (!xd->tracked) return;
            const auto& g = od->grad;
            auto& gx = detail::ensure_grad(xd);
            for (std::size_t r = 0; r < ix.size(); ++r)
                for (std::size_t j = 0; j < p; ++j) gx[ix[r] * p + j] += g[r * p + j];
            detail::check_finite(gx, "gather_rows.backward");
        };
    });
}

// Each row repeated `times` consecutively: r0,r0,..,r1,r1,..
template <class T>
Tensor<T> repeat_rows(const Tensor<T>& x, std::size_t times) {
    detail::require_matrix(x, "repeat_rows");
    std::vector<std::size_t> idx;
    idx.reserve(x.shape()[0] * times);
    for (std::size_t i = 0; i < x.shape()[0]; ++i)
        for (std::size_t r = 0; r < times; ++r) idx.push_back(i);
    return gather_rows(x, idx);
}

// Whole block repeated `times`: r0..rn,r0..rn,..
template <class T>
Tensor<T> tile_rows(const Tensor<T>& x, std::size_t times) {
    detail::require_matrix(x, "tile_rows");
    std::vector<std::size_t> idx;
    idx.reserve(x.shape()[0] * times);
    for (std::size_t r = 0; r < times; ++r)
        for (std::size_t i = 0; i < x.shape()[0]; ++i) idx.push_back(i);
    return gather_rows(x, idx);
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> reduce_sum(const Tensor<T>& x) {
    T s{0};
    for (T v : x.val()) s += v;
    Tensor<T> out = Tensor<T>::scalar(s);
    return detail::finish_op<T>("reduce_sum", out, {&x}, [&] {
        auto xd = x.data_ptr();
        auto od = out.data_ptr();
        return [xd, od] {
            if (!xd->tracked) return;
            const T g = od->grad[0];
            auto& gx = detail::ensure_grad(xd);
            for (auto& v : gx) v += g;
            detail::check_finite(gx, "reduce_sum.backward");
        };
    });
}

template <class T>
Tensor<T> reduce_mean(const Tensor<T>& x) {
    return scale(reduce_sum(x), T{1} / static_cast<T>(x.numel()));
}

// axis 0: column sums -> [1 x p]; axis 1: row sums -> [n x 1].
template <class T>
Tensor<T> reduce_sum(const Tensor<T>& x, int axis) {
    detail::require_matrix(x, "reduce_sum");
    const std::size_t n = x.shape()[0], p = x.shape()[1];
    if (axis != 0 && axis != 1) throw ContractError("reduce_sum: axis must be 0 or 1");
    Shape oshape = axis == 0 ? Shape{1, p} : Shape{n, 1};
    std::vector<T> v(shape_numel(oshape), T{0});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < p; ++j) {
            if (axis == 0)
                v[j] += x.val()[i * p + j];
            else
                v[i] += x.val()[i * p + j];
        }
    Tensor<T> out = Tensor<T>::from(std::move(oshape), std::move(v));
    return detail::finish_op<T>("reduce_sum", out, {&x}, [&] {
        auto xd = x.data_ptr();
        auto od = out.data_ptr();
        return [xd, od, n, p, axis] {
            if (!xd->tracked) return;
            const auto& g = od->grad;
            auto& gx = detail::ensure_grad(xd);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < p; ++j) gx[i * p + j] += axis == 0 ? g[j] : g[i];
            detail::check_finite(gx, "reduce_sum.backward");
        };
    });
}

template <class T>
Tensor<T> reduce_mean(const Tensor<T>& x, int axis) {
    detail::require_matrix(x, "reduce_mean");
    const T denom = static_cast<T>(axis == 0 ? x.shape()[0] : x.shape()[1]);
    return scale(reduce_sum(x, axis), T{1} / denom);
}

// out[i] = x[i, idx[i]], shape [n x 1].
template <class T>
Tensor<T> pick_per_row(const Tensor<T>& x, const std::vector<std::size_t>& idx) {
    detail::require_matrix(x, "pick_per_row");
    const std::size_t n = x.shape()[0], p = x.shape()[1];
    if (idx.size() != n)
        throw ShapeError("pick_per_row: need one index per row of " + shape_str(x.shape()));
    std::vector<T> v(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (idx[i] >= p)
            throw ShapeError("pick_per_row: column " + std::to_string(idx[i]) + " out of range");
        v[i] = x.val()[i * p + idx[i]];
    }
    Tensor<T> out = Tensor<T>::from({n, 1}, std::move(v));
    return detail::finish_op<T>("pick_per_row", out, {&x}, [&] {
        auto xd = x.data_ptr();
        auto od = out.data_ptr();
        auto ix = idx;
        return [xd, od, ix, p] {
            if (!xd->tracked) return;
            const auto& g = od->grad;
            auto& gx = detail::ensure_grad(xd);
            for (std::size_t i = 0; i < ix.size(); ++i) gx[i * p + ix[i]] += g[i];
            detail::check_finite(gx, "pick_per_row.backward");
        };
    });
}

// Row-wise log-softmax with the usual max shift.
template <class T>
Tensor<T> log_softmax_rows(const Tensor<T>& x) {
    detail::require_matrix(x, "log_softmax_rows");
    const std::size_t n = x.shape()[0], p = x.shape()[1];
    std::vector<T> v(n * p);
    for (std::size_t i = 0; i < n; ++i) {
        const T* row = x.val().data() + i * p;
        T mx = row[0];
        for (std::size_t j = 1; j < p; ++j) mx = std::max(mx, row[j]);
        T lse{0};
        for (std::size_t j = 0; j < p; ++j) lse += std::exp(row[j] - mx);
        lse = mx + std::log(lse);
        for (std::size_t j = 0; j < p; ++j) v[i * p + j] = row[j] - lse;
    }
    Tensor<T> out = Tensor<T>::from({n, p}, std::move(v));
    return detail::finish_op<T>("log_softmax_rows", out, {&x}, [&] {
        auto xd = x.data_ptr();
        auto od = out.data_ptr();
        return [xd, od, n, p] {
            if (!xd->tracked) return;
            const auto& g = od->grad;
            auto& gx = detail::ensure_grad(xd);
            for (std::size_t i = 0; i < n; ++i) {
                T gsum{0};
                for (std::size_t j = 0; j < p; ++j) gsum += g[i * p + j];
                for (std::size_t j = 0; j < p; ++j)
                    gx[i * p + j] += g[i * p + j] - std::exp(od->value[i * p + j]) * gsum;
            }
            detail::check_finite(gx, "log_softmax_rows.backward");
        };
    });
}

} // namespace sdgzsl
