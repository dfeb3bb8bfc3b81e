// Licensed under the Apache License, Version 2.0 (the "License"); you
// may not use this file except in compliance with the License.  You
// may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or
// implied.  See the License for the specific language governing
// permissions and limitations under the License.

#ifndef PARNET_TAPE_HPP
#define PARNET_TAPE_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "parnet/errors.hpp"
#include "parnet/tensor.hpp"

namespace parnet {

inline constexpr double kPi = 3.14159265358979323846;

/// Wrap an angle into (-pi, pi]. Angular differences are reduced through
/// this before being squared, so +pi and -pi are the same point.
inline double wrap_to_pi(double a) {
    const double two_pi = 2.0 * kPi;
    a = std::fmod(a, two_pi);
    if (a <= -kPi) a += two_pi;
    if (a > kPi) a -= two_pi;
    return a;
}

template <typename S>
class Tape;

/// Handle to one node of a tape. Cheap to copy; valid until Tape::clear().
template <typename S>
struct Var {
    Tape<S>* tape = nullptr;
    std::size_t id = 0;

    const Tensor<S>& value() const { return tape->value(id); }
    const Tensor<S>& grad() const { return tape->grad(id); }
    const std::vector<std::size_t>& shape() const { return value().shape(); }
};

/// Reverse-mode tape. Nodes are appended in evaluation order; backward()
/// walks them in reverse, so the recording order is its own topological
/// order. One tape holds one compute graph; clear() recycles the storage.
template <typename S>
class Tape {
  public:
    /// Backward callback: receives the tape and the id of the node whose
    /// output gradient is ready; accumulates into its parents' gradients.
    using Backward = std::function<void(Tape&, std::size_t)>;

    struct Node {
        Tensor<S> value;
        Tensor<S> grad;
        bool requires_grad = false;
        Backward backward;
    };

    /// Input data; never receives gradient.
    Var<S> constant(Tensor<S> v) { return op(std::move(v), false, nullptr); }

    /// Differentiable input (a parameter binding).
    Var<S> leaf(Tensor<S> v) { return op(std::move(v), true, nullptr); }

    Var<S> op(Tensor<S> value, bool requires_grad, Backward bw) {
        Node n;
        n.grad = Tensor<S>::zeros(value.shape());
        n.value = std::move(value);
        n.requires_grad = requires_grad;
        if (requires_grad) n.backward = std::move(bw);
        nodes_.push_back(std::move(n));
        return Var<S>{this, nodes_.size() - 1};
    }

    Tensor<S>& value(std::size_t id) { return nodes_[id].value; }
    const Tensor<S>& value(std::size_t id) const { return nodes_[id].value; }
    Tensor<S>& grad(std::size_t id) { return nodes_[id].grad; }
    const Tensor<S>& grad(std::size_t id) const { return nodes_[id].grad; }
    bool wants_grad(std::size_t id) const { return nodes_[id].requires_grad; }

    std::size_t size() const { return nodes_.size(); }

    /// Seed d(root)/d(root) = 1 and propagate to every leaf.
    void backward(Var<S> root) {
        if (value(root.id).size() != 1) {
            throw DimensionError("backward root must be scalar, got " +
                                 value(root.id).shape_string());
        }
        grad(root.id)[0] = S(1);
        for (std::size_t i = root.id + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (n.requires_grad && n.backward) n.backward(*this, i);
        }
    }

    void clear() { nodes_.clear(); }

  private:
    std::vector<Node> nodes_;
};

namespace detail {

// Plain matrix kernels shared by forward and backward passes.

template <typename S>
Tensor<S> mm(const Tensor<S>& a, const Tensor<S>& b) {
    std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    Tensor<S> c({m, n});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            S av = a(i, p);
            for (std::size_t j = 0; j < n; ++j) c(i, j) += av * b(p, j);
        }
    return c;
}

template <typename S>
Tensor<S> mm_nt(const Tensor<S>& a, const Tensor<S>& b) {  // a * b^T
    std::size_t m = a.rows(), k = a.cols(), n = b.rows();
    Tensor<S> c({m, n});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            S s = S(0);
            for (std::size_t p = 0; p < k; ++p) s += a(i, p) * b(j, p);
            c(i, j) = s;
        }
    return c;
}

template <typename S>
Tensor<S> mm_tn(const Tensor<S>& a, const Tensor<S>& b) {  // a^T * b
    std::size_t k = a.rows(), m = a.cols(), n = b.cols();
    Tensor<S> c({m, n});
    for (std::size_t p = 0; p < k; ++p)
        for (std::size_t i = 0; i < m; ++i) {
            S av = a(p, i);
            for (std::size_t j = 0; j < n; ++j) c(i, j) += av * b(p, j);
        }
    return c;
}

template <typename S>
void accumulate(Tensor<S>& dst, const Tensor<S>& src) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

template <typename S>
void require_same_shape(const char* op, const Tensor<S>& a, const Tensor<S>& b) {
    if (!a.same_shape(b)) {
        throw DimensionError(std::string(op) + ": shape mismatch " + a.shape_string() +
                             " vs " + b.shape_string());
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and linear algebra
// ---------------------------------------------------------------------------

template <typename S>
Var<S> matmul(Var<S> a, Var<S> b) {
    Tape<S>& t = *a.tape;
    const Tensor<S>&av = a.value(), &bv = b.value();
    if (av.rank() != 2 || bv.rank() != 2 || av.cols() != bv.rows()) {
        throw DimensionError("matmul: incompatible shapes " + av.shape_string() + " and " +
                             bv.shape_string());
    }
    bool rg = t.wants_grad(a.id) || t.wants_grad(b.id);
    std::size_t aid = a.id, bid = b.id;
    return t.op(detail::mm(av, bv), rg, [aid, bid](Tape<S>& tp, std::size_t self) {
        const Tensor<S>& g = tp.grad(self);
        if (tp.wants_grad(aid)) detail::accumulate(tp.grad(aid), detail::mm_nt(g, tp.value(bid)));
        if (tp.wants_grad(bid)) detail::accumulate(tp.grad(bid), detail::mm_tn(tp.value(aid), g));
    });
}

/// a * b^T for row-major feature matrices.
template <typename S>
Var<S> matmul_nt(Var<S> a, Var<S> b) {
    Tape<S>& t = *a.tape;
    const Tensor<S>&av = a.value(), &bv = b.value();
    if (av.rank() != 2 || bv.rank() != 2 || av.cols() != bv.cols()) {
        throw DimensionError("matmul_nt: incompatible shapes " + av.shape_string() + " and " +
                             bv.shape_string());
    }
    bool rg = t.wants_grad(a.id) || t.wants_grad(b.id);
    std::size_t aid = a.id, bid = b.id;
    return t.op(detail::mm_nt(av, bv), rg, [aid, bid](Tape<S>& tp, std::size_t self) {
        const Tensor<S>& g = tp.grad(self);
        if (tp.wants_grad(aid)) detail::accumulate(tp.grad(aid), detail::mm(g, tp.value(bid)));
        if (tp.wants_grad(bid)) detail::accumulate(tp.grad(bid), detail::mm_tn(g, tp.value(aid)));
    });
}

template <typename S>
Var<S> add(Var<S> a, Var<S> b) {
    Tape<S>& t = *a.tape;
    detail::require_same_shape("add", a.value(), b.value());
    Tensor<S> out = a.value();
    detail::accumulate(out, b.value());
    bool rg = t.wants_grad(a.id) || t.wants_grad(b.id);
    std::size_t aid = a.id, bid = b.id;
    return t.op(std::move(out), rg, [aid, bid](Tape<S>& tp, std::size_t self) {
        const Tensor<S>& g = tp.grad(self);
        if (tp.wants_grad(aid)) detail::accumulate(tp.grad(aid), g);
        if (tp.wants_grad(bid)) detail::accumulate(tp.grad(bid), g);
    });
}

template <typename S>
Var<S> mul(Var<S> a, Var<S> b) {
    Tape<S>& t = *a.tape;
    detail::require_same_shape("mul", a.value(), b.value());
    Tensor<S> out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
    bool rg = t.wants_grad(a.id) || t.wants_grad(b.id);
    std::size_t aid = a.id, bid = b.id;
    return t.op(std::move(out), rg, [aid, bid](Tape<S>& tp, std::size_t self) {
        const Tensor<S>& g = tp.grad(self);
        if (tp.wants_grad(aid)) {
            Tensor<S>& ga = tp.grad(aid);
            const Tensor<S>& bv = tp.value(bid);
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * bv[i];
        }
        if (tp.wants_grad(bid)) {
            Tensor<S>& gb = tp.grad(bid);
            const Tensor<S>& av = tp.value(aid);
            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[i] * av[i];
        }
    });
}

/// y = alpha * x + beta, elementwise with scalar coefficients.
template <typename S>
Var<S> affine(Var<S> x, S alpha, S beta) {
    Tape<S>& t = *x.tape;
    Tensor<S> out = x.value();
    for (auto& v : out.data()) v = alpha * v + beta;
    std::size_t xid = x.id;
    return t.op(std::move(out), t.wants_grad(xid), [xid, alpha](Tape<S>& tp, std::size_t self) {
        const Tensor<S>& g = tp.grad(self);
        Tensor<S>& gx = tp.grad(xid);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += alpha * g[i];
    });
}

/// y[i][j] = x[i][j] + b[j]; bias may be rank-1 [n] or [1 x n].
template <typename S>
Var<S> add_bias(Var<S> x, Var<S> b) {
    Tape<S>& t = *x.tape;
    const Tensor<S>&xv = x.value(), &bv = b.value();
    std::size_t n = xv.cols();
    if (bv.size() != n) {
        throw DimensionError("add_bias: bias " + bv.shape_string() + " does not match columns of " +
                             xv.shape_string());
    }
    Tensor<S> out = xv;
    for (std::size_t i = 0; i < xv.rows(); ++i)
        for (std::size_t j = 0; j < n; ++j) out(i, j) += bv[j];
    bool rg = t.wants_grad(x.id) || t.wants_grad(b.id);
    std::size_t xid = x.id, bid = b.id;
    return t.op(std::move(out), rg, [xid, bid](Tape<S>& tp, std::size_t self) {
        const Tensor<S>& g = tp.grad(self);
        if (tp.wants_grad(xid)) detail::accumulate(tp.grad(xid), g);
        if (tp.wants_grad(bid)) {
            Tensor<S>& gb = tp.grad(bid);
            std::size_t rows = g.rows(), cols = g.cols();
            for (std::size_t i = 0; i < rows; ++i)
                for (std::size_t j = 0; j < cols; ++j) gb[j] += g(i, j);
        }
    });
}

/// y = x W (+ bias per row). Realizes the learned projections.
template <typename S>
Var<S> linear(Var<S> x, Var<S> W) {
    return matmul(x, W);
}

template <typename S>
Var<S> linear(Var<S> x, Var<S> W, Var<S> bias) {
    return add_bias(matmul(x, W), bias);
}

template <typename S>
Var<S> sigmoid(Var<S> x) {
    Tape<S>& t = *x.tape;
    Tensor<S> out = x.value();
    for (auto& v : out.data()) {
        double d = static_cast<double>(v);
        if (d >= 0.0) {
            v = static_cast<S>(1.0 / (1.0 + std::exp(-d)));
        } else {
            double e = std::exp(d);
            v = static_cast<S>(e / (1.0 + e));
        }
    }
    std::size_t xid = x.id;
    return t.op(std::move(out), t.wants_grad(xid), [xid](Tape<S>& tp, std::size_t self) {
        const Tensor<S>&g = tp.grad(self), &y = tp.value(self);
        Tensor<S>& gx = tp.grad(xid);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * y[i] * (S(1) - y[i]);
    });
}

template <typename S>
Var<S> tanh_op(Var<S> x) {
    Tape<S>& t = *x.tape;
    Tensor<S> out = x.value();
    for (auto& v : out.data()) v = static_cast<S>(std::tanh(static_cast<double>(v)));
    std::size_t xid = x.id;
    return t.op(std::move(out), t.wants_grad(xid), [xid](Tape<S>& tp, std::size_t self) {
        const Tensor<S>&g = tp.grad(self), &y = tp.value(self);
        Tensor<S>& gx = tp.grad(xid);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * (S(1) - y[i] * y[i]);
    });
}

// ---------------------------------------------------------------------------
// Row-wise normalizations
// ---------------------------------------------------------------------------

/// Row softmax, stabilized by per-row max subtraction. `valid`, when
/// non-empty, masks columns out of every row (weight exactly 0, the rest
/// renormalized); a fully masked row is an error.
template <typename S>
Var<S> softmax_rows(Var<S> x, const std::vector<std::uint8_t>& valid = {}) {
    Tape<S>& t = *x.tape;
    const Tensor<S>& xv = x.value();
    std::size_t rows = xv.rows(), cols = xv.cols();
    if (cols == 0) throw DimensionError("softmax_rows: empty rows in " + xv.shape_string());
    if (!valid.empty() && valid.size() != cols) {
        throw DimensionError("softmax_rows: mask length " + std::to_string(valid.size()) +
                             " does not match " + xv.shape_string());
    }
    auto live = [&](std::size_t j) { return valid.empty() || valid[j] != 0; };
    Tensor<S> out({rows, cols});
    for (std::size_t i = 0; i < rows; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < cols; ++j)
            if (live(j)) mx = std::max(mx, static_cast<double>(xv(i, j)));
        if (!std::isfinite(mx)) throw DataError("softmax_rows: fully masked row");
        double sum = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
            if (!live(j)) continue;
            double e = std::exp(static_cast<double>(xv(i, j)) - mx);
            out(i, j) = static_cast<S>(e);
            sum += e;
        }
        for (std::size_t j = 0; j < cols; ++j)
            if (live(j)) out(i, j) = static_cast<S>(static_cast<double>(out(i, j)) / sum);
    }
    std::size_t xid = x.id;
    return t.op(std::move(out), t.wants_grad(xid), [xid](Tape<S>& tp, std::size_t self) {
        const Tensor<S>&g = tp.grad(self), &y = tp.value(self);
        Tensor<S>& gx = tp.grad(xid);
        std::size_t rows = y.rows(), cols = y.cols();
        for (std::size_t i = 0; i < rows; ++i) {
            S dot = S(0);
            for (std::size_t j = 0; j < cols; ++j) dot += g(i, j) * y(i, j);
            for (std::size_t j = 0; j < cols; ++j) gx(i, j) += y(i, j) * (g(i, j) - dot);
        }
    });
}

/// Column softmax (softmax over rows for each fixed column).
template <typename S>
Var<S> softmax_cols(Var<S> x) {
    Tape<S>& t = *x.tape;
    const Tensor<S>& xv = x.value();
    std::size_t rows = xv.rows(), cols = xv.cols();
    if (rows == 0) throw DimensionError("softmax_cols: empty columns in " + xv.shape_string());
    Tensor<S> out({rows, cols});
    for (std::size_t j = 0; j < cols; ++j) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < rows; ++i) mx = std::max(mx, static_cast<double>(xv(i, j)));
        double sum = 0.0;
        for (std::size_t i = 0; i < rows; ++i) {
            double e = std::exp(static_cast<double>(xv(i, j)) - mx);
            out(i, j) = static_cast<S>(e);
            sum += e;
        }
        for (std::size_t i = 0; i < rows; ++i)
            out(i, j) = static_cast<S>(static_cast<double>(out(i, j)) / sum);
    }
    std::size_t xid = x.id;
    return t.op(std::move(out), t.wants_grad(xid), [xid](Tape<S>& tp, std::size_t self) {
        const Tensor<S>&g = tp.grad(self), &y = tp.value(self);
        Tensor<S>& gx = tp.grad(xid);
        std::size_t rows = y.rows(), cols = y.cols();
        for (std::size_t j = 0; j < cols; ++j) {
            S dot = S(0);
            for (std::size_t i = 0; i < rows; ++i) dot += g(i, j) * y(i, j);
            for (std::size_t i = 0; i < rows; ++i) gx(i, j) += y(i, j) * (g(i, j) - dot);
        }
    });
}

/// y[i][j] = x[i][j] / sum_j' x[i][j']. Caller guarantees positive row sums.
template <typename S>
Var<S> normalize_rows(Var<S> x) {
    Tape<S>& t = *x.tape;
    const Tensor<S>& xv = x.value();
    std::size_t rows = xv.rows(), cols = xv.cols();
    Tensor<S> sums({rows});
    Tensor<S> out({rows, cols});
    for (std::size_t i = 0; i < rows; ++i) {
        S s = S(0);
        for (std::size_t j = 0; j < cols; ++j) s += xv(i, j);
        sums[i] = s;
        for (std::size_t j = 0; j < cols; ++j) out(i, j) = xv(i, j) / s;
    }
    std::size_t xid = x.id;
    return t.op(std::move(out), t.wants_grad(xid),
                [xid, sums](Tape<S>& tp, std::size_t self) {
                    const Tensor<S>&g = tp.grad(self), &y = tp.value(self);
                    Tensor<S>& gx = tp.grad(xid);
                    std::size_t rows = y.rows(), cols = y.cols();
                    for (std::size_t i = 0; i < rows; ++i) {
                        S dot = S(0);
                        for (std::size_t j = 0; j < cols; ++j) dot += g(i, j) * y(i, j);
                        for (std::size_t j = 0; j < cols; ++j)
                            gx(i, j) += (g(i, j) - dot) / sums[i];
                    }
                });
}

/// exp(x - rowmax(x)) with the shift treated as constant. Composites that
/// renormalize per row afterwards (the spatial-semantic fusion) get exact
/// gradients; do not differentiate this op in isolation.
template <typename S>
Var<S> exp_rows_shifted(Var<S> x) {
    Tape<S>& t = *x.tape;
    const Tensor<S>& xv = x.value();
    std::size_t rows = xv.rows(), cols = xv.cols();
    Tensor<S> out({rows, cols});
    for (std::size_t i = 0; i < rows; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < cols; ++j) mx = std::max(mx, static_cast<double>(xv(i, j)));
        for (std::size_t j = 0; j < cols; ++j)
            out(i, j) = static_cast<S>(std::exp(static_cast<double>(xv(i, j)) - mx));
    }
    std::size_t xid = x.id;
    return t.op(std::move(out), t.wants_grad(xid), [xid](Tape<S>& tp, std::size_t self) {
        const Tensor<S>&g = tp.grad(self), &y = tp.value(self);
        Tensor<S>& gx = tp.grad(xid);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * y[i];
    });
}

// ---------------------------------------------------------------------------
// Shape plumbing
// ---------------------------------------------------------------------------

template <typename S>
Var<S> concat_cols(const std::vector<Var<S>>& parts) {
    if (parts.empty()) throw DimensionError("concat_cols: no inputs");
    Tape<S>& t = *parts[0].tape;
    std::size_t rows = parts[0].value().rows();
    std::size_t total = 0;
    bool rg = false;
    for (const auto& p : parts) {
        if (p.value().rows() != rows) {
            throw DimensionError("concat_cols: row mismatch " + p.value().shape_string());
        }
        total += p.value().cols();
        rg = rg || t.wants_grad(p.id);
    }
    Tensor<S> out({rows, total});
    std::vector<std::size_t> ids;
    std::vector<std::size_t> offsets;
    std::size_t off = 0;
    for (const auto& p : parts) {
        const Tensor<S>& pv = p.value();
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < pv.cols(); ++j) out(i, off + j) = pv(i, j);
        ids.push_back(p.id);
        offsets.push_back(off);
        off += pv.cols();
    }
    return t.op(std::move(out), rg, [ids, offsets](Tape<S>& tp, std::size_t self) {
        const Tensor<S>& g = tp.grad(self);
        for (std::size_t k = 0; k < ids.size(); ++k) {
            if (!tp.wants_grad(ids[k])) continue;
            Tensor<S>& gp = tp.grad(ids[k]);
            for (std::size_t i = 0; i < gp.rows(); ++i)
                for (std::size_t j = 0; j < gp.cols(); ++j) gp(i, j) += g(i, offsets[k] + j);
        }
    });
}

/// Stack row vectors [1 x n] into a [count x n] matrix.
template <typename S>
Var<S> stack_rows(const std::vector<Var<S>>& rows) {
    if (rows.empty()) throw DimensionError("stack_rows: no inputs");
    Tape<S>& t = *rows[0].tape;
    std::size_t n = rows[0].value().cols();
    Tensor<S> out({rows.size(), n});
    std::vector<std::size_t> ids;
    bool rg = false;
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const Tensor<S>& rv = rows[r].value();
        if (rv.rows() != 1 || rv.cols() != n) {
            throw DimensionError("stack_rows: expected [1x" + std::to_string(n) + "], got " +
                                 rv.shape_string());
        }
        for (std::size_t j = 0; j < n; ++j) out(r, j) = rv(0, j);
        ids.push_back(rows[r].id);
        rg = rg || t.wants_grad(rows[r].id);
    }
    return t.op(std::move(out), rg, [ids](Tape<S>& tp, std::size_t self) {
        const Tensor<S>& g = tp.grad(self);
        for (std::size_t r = 0; r < ids.size(); ++r) {
            if (!tp.wants_grad(ids[r])) continue;
            Tensor<S>& gr = tp.grad(ids[r]);
            for (std::size_t j = 0; j < gr.cols(); ++j) gr(0, j) += g(r, j);
        }
    });
}

/// Same data, new extents.
template <typename S>
Var<S> reshape(Var<S> x, std::vector<std::size_t> shape) {
    Tape<S>& t = *x.tape;
    Tensor<S> out = x.value().reshaped(shape);
    std::size_t xid = x.id;
    return t.op(std::move(out), t.wants_grad(xid), [xid](Tape<S>& tp, std::size_t self) {
        const Tensor<S>& g = tp.grad(self);
        Tensor<S>& gx = tp.grad(xid);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
    });
}

template <typename S>
Var<S> slice_row(Var<S> x, std::size_t r) {
    Tape<S>& t = *x.tape;
    const Tensor<S>& xv = x.value();
    if (r >= xv.rows()) {
        throw DimensionError("slice_row: row " + std::to_string(r) + " out of " +
                             xv.shape_string());
    }
    Tensor<S> out({1, xv.cols()});
    for (std::size_t j = 0; j < xv.cols(); ++j) out(0, j) = xv(r, j);
    std::size_t xid = x.id;
    return t.op(std::move(out), t.wants_grad(xid), [xid, r](Tape<S>& tp, std::size_t self) {
        const Tensor<S>& g = tp.grad(self);
        Tensor<S>& gx = tp.grad(xid);
        for (std::size_t j = 0; j < g.cols(); ++j) gx(r, j) += g(0, j);
    });
}

/// Embedding lookup: out row j = table[ids[j]]. Duplicate ids accumulate
/// gradient.
template <typename S>
Var<S> gather_rows(Var<S> table, const std::vector<std::size_t>& ids) {
    Tape<S>& t = *table.tape;
    const Tensor<S>& tv = table.value();
    std::size_t vocab = tv.rows(), d = tv.cols();
    Tensor<S> out({ids.size(), d});
    for (std::size_t r = 0; r < ids.size(); ++r) {
        if (ids[r] >= vocab) {
            throw DataError("token id " + std::to_string(ids[r]) + " out of range (vocab " +
                            std::to_string(vocab) + ")");
        }
        for (std::size_t j = 0; j < d; ++j) out(r, j) = tv(ids[r], j);
    }
    std::size_t tid = table.id;
    return t.op(std::move(out), t.wants_grad(tid), [tid, ids](Tape<S>& tp, std::size_t self) {
        const Tensor<S>& g = tp.grad(self);
        Tensor<S>& gt = tp.grad(tid);
        for (std::size_t r = 0; r < ids.size(); ++r)
            for (std::size_t j = 0; j < g.cols(); ++j) gt(ids[r], j) += g(r, j);
    });
}

/// Assemble [rows x cols] from scalar nodes in row-major order.
template <typename S>
Var<S> pack_scalars(const std::vector<Var<S>>& scalars, std::size_t rows, std::size_t cols) {
    if (scalars.size() != rows * cols) {
        throw DimensionError("pack_scalars: " + std::to_string(scalars.size()) +
                             " scalars for a " + std::to_string(rows) + "x" +
                             std::to_string(cols) + " matrix");
    }
    Tape<S>& t = *scalars[0].tape;
    Tensor<S> out({rows, cols});
    std::vector<std::size_t> ids;
    bool rg = false;
    for (std::size_t i = 0; i < scalars.size(); ++i) {
        out[i] = scalars[i].value()[0];
        ids.push_back(scalars[i].id);
        rg = rg || t.wants_grad(scalars[i].id);
    }
    return t.op(std::move(out), rg, [ids](Tape<S>& tp, std::size_t self) {
        const Tensor<S>& g = tp.grad(self);
        for (std::size_t i = 0; i < ids.size(); ++i)
            if (tp.wants_grad(ids[i])) tp.grad(ids[i])[0] += g[i];
    });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <typename S>
Var<S> row_sums(Var<S> x) {
    Tape<S>& t = *x.tape;
    const Tensor<S>& xv = x.value();
    Tensor<S> out({xv.rows(), 1});
    for (std::size_t i = 0; i < xv.rows(); ++i) {
        S s = S(0);
        for (std::size_t j = 0; j < xv.cols(); ++j) s += xv(i, j);
        out(i, 0) = s;
    }
    std::size_t xid = x.id;
    return t.op(std::move(out), t.wants_grad(xid), [xid](Tape<S>& tp, std::size_t self) {
        const Tensor<S>& g = tp.grad(self);
        Tensor<S>& gx = tp.grad(xid);
        for (std::size_t i = 0; i < gx.rows(); ++i)
            for (std::size_t j = 0; j < gx.cols(); ++j) gx(i, j) += g(i, 0);
    });
}

/// y[i][j] = x[i][j] * s[i][0].
template <typename S>
Var<S> scale_rows(Var<S> x, Var<S> s) {
    Tape<S>& t = *x.tape;
    const Tensor<S>&xv = x.value(), &sv = s.value();
    if (sv.rows() != xv.rows() || sv.cols() != 1) {
        throw DimensionError("scale_rows: scale " + sv.shape_string() + " for " +
                             xv.shape_string());
    }
    Tensor<S> out = xv;
    for (std::size_t i = 0; i < xv.rows(); ++i)
        for (std::size_t j = 0; j < xv.cols(); ++j) out(i, j) *= sv(i, 0);
    bool rg = t.wants_grad(x.id) || t.wants_grad(s.id);
    std::size_t xid = x.id, sid = s.id;
    return t.op(std::move(out), rg, [xid, sid](Tape<S>& tp, std::size_t self) {
        const Tensor<S>& g = tp.grad(self);
        const Tensor<S>&xv = tp.value(xid), &sv = tp.value(sid);
        if (tp.wants_grad(xid)) {
            Tensor<S>& gx = tp.grad(xid);
            for (std::size_t i = 0; i < gx.rows(); ++i)
                for (std::size_t j = 0; j < gx.cols(); ++j) gx(i, j) += g(i, j) * sv(i, 0);
        }
        if (tp.wants_grad(sid)) {
            Tensor<S>& gs = tp.grad(sid);
            for (std::size_t i = 0; i < xv.rows(); ++i) {
                S dot = S(0);
                for (std::size_t j = 0; j < xv.cols(); ++j) dot += g(i, j) * xv(i, j);
                gs(i, 0) += dot;
            }
        }
    });
}

template <typename S>
Var<S> mean_all(Var<S> x) {
    Tape<S>& t = *x.tape;
    const Tensor<S>& xv = x.value();
    if (xv.size() == 0) throw DimensionError("mean_all: empty tensor");
    S s = S(0);
    for (std::size_t i = 0; i < xv.size(); ++i) s += xv[i];
    Tensor<S> out({1, 1});
    out[0] = s / static_cast<S>(xv.size());
    std::size_t xid = x.id;
    return t.op(std::move(out), t.wants_grad(xid), [xid](Tape<S>& tp, std::size_t self) {
        const S g = tp.grad(self)[0];
        Tensor<S>& gx = tp.grad(xid);
        const S w = g / static_cast<S>(gx.size());
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += w;
    });
}

template <typename S>
Var<S> sum_squares(Var<S> x) {
    Tape<S>& t = *x.tape;
    const Tensor<S>& xv = x.value();
    S s = S(0);
    for (std::size_t i = 0; i < xv.size(); ++i) s += xv[i] * xv[i];
    Tensor<S> out({1, 1});
    out[0] = s;
    std::size_t xid = x.id;
    return t.op(std::move(out), t.wants_grad(xid), [xid](Tape<S>& tp, std::size_t self) {
        const S g = tp.grad(self)[0];
        const Tensor<S>& xv = tp.value(xid);
        Tensor<S>& gx = tp.grad(xid);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += S(2) * xv[i] * g;
    });
}

/// sum(x .* coeff) with constant coefficients; a generic scalar readout for
/// gradient tests.
template <typename S>
Var<S> weighted_sum(Var<S> x, Tensor<S> coeff) {
    Tape<S>& t = *x.tape;
    detail::require_same_shape("weighted_sum", x.value(), coeff);
    S s = S(0);
    for (std::size_t i = 0; i < coeff.size(); ++i) s += x.value()[i] * coeff[i];
    Tensor<S> out({1, 1});
    out[0] = s;
    std::size_t xid = x.id;
    return t.op(std::move(out), t.wants_grad(xid),
                [xid, coeff](Tape<S>& tp, std::size_t self) {
                    const S g = tp.grad(self)[0];
                    Tensor<S>& gx = tp.grad(xid);
                    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += coeff[i] * g;
                });
}

// ---------------------------------------------------------------------------
// Similarity
// ---------------------------------------------------------------------------

/// Length threshold below which a vector's cosine is defined as 0.
inline constexpr double kNormEpsilon = 1e-12;

/// Plain cosine of two equal-length vectors with the near-zero rule.
template <typename S>
S cosine(const std::vector<S>& u, const std::vector<S>& v) {
    if (u.size() != v.size()) {
        throw DimensionError("cosine: length mismatch " + std::to_string(u.size()) + " vs " +
                             std::to_string(v.size()));
    }
    double uu = 0, vv = 0, uv = 0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        uu += static_cast<double>(u[i]) * u[i];
        vv += static_cast<double>(v[i]) * v[i];
        uv += static_cast<double>(u[i]) * v[i];
    }
    double nu = std::sqrt(uu), nv = std::sqrt(vv);
    if (nu < kNormEpsilon || nv < kNormEpsilon) return S(0);
    return static_cast<S>(uv / (nu * nv));
}

/// u[i][j] = cosine(a row i, b row j). Near-zero rows yield 0 with zero
/// gradient (the degenerate-init rule).
template <typename S>
Var<S> cosine_matrix(Var<S> a, Var<S> b) {
    Tape<S>& t = *a.tape;
    const Tensor<S>&av = a.value(), &bv = b.value();
    if (av.cols() != bv.cols()) {
        throw DimensionError("cosine_matrix: feature dims disagree: " + av.shape_string() +
                             " vs " + bv.shape_string());
    }
    std::size_t n = av.rows(), m = bv.rows(), d = av.cols();
    Tensor<S> na({n}), nb({m});
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0;
        for (std::size_t k = 0; k < d; ++k) s += static_cast<double>(av(i, k)) * av(i, k);
        na[i] = static_cast<S>(std::sqrt(s));
    }
    for (std::size_t j = 0; j < m; ++j) {
        double s = 0;
        for (std::size_t k = 0; k < d; ++k) s += static_cast<double>(bv(j, k)) * bv(j, k);
        nb[j] = static_cast<S>(std::sqrt(s));
    }
    Tensor<S> out({n, m});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) {
            if (static_cast<double>(na[i]) < kNormEpsilon ||
                static_cast<double>(nb[j]) < kNormEpsilon) {
                out(i, j) = S(0);
                continue;
            }
            S dot = S(0);
            for (std::size_t k = 0; k < d; ++k) dot += av(i, k) * bv(j, k);
            out(i, j) = dot / (na[i] * nb[j]);
        }
    bool rg = t.wants_grad(a.id) || t.wants_grad(b.id);
    std::size_t aid = a.id, bid = b.id;
    return t.op(std::move(out), rg, [aid, bid, na, nb](Tape<S>& tp, std::size_t self) {
        const Tensor<S>&g = tp.grad(self), &u = tp.value(self);
        const Tensor<S>&av = tp.value(aid), &bv = tp.value(bid);
        std::size_t n = av.rows(), m = bv.rows(), d = av.cols();
        bool ga_on = tp.wants_grad(aid), gb_on = tp.wants_grad(bid);
        for (std::size_t i = 0; i < n; ++i) {
            if (static_cast<double>(na[i]) < kNormEpsilon) continue;
            for (std::size_t j = 0; j < m; ++j) {
                if (static_cast<double>(nb[j]) < kNormEpsilon) continue;
                S gij = g(i, j);
                if (gij == S(0)) continue;
                S inv = S(1) / (na[i] * nb[j]);
                if (ga_on) {
                    Tensor<S>& ga = tp.grad(aid);
                    S ca = u(i, j) / (na[i] * na[i]);
                    for (std::size_t k = 0; k < d; ++k)
                        ga(i, k) += gij * (bv(j, k) * inv - ca * av(i, k));
                }
                if (gb_on) {
                    Tensor<S>& gb = tp.grad(bid);
                    S cb = u(i, j) / (nb[j] * nb[j]);
                    for (std::size_t k = 0; k < d; ++k)
                        gb(j, k) += gij * (av(i, k) * inv - cb * bv(j, k));
                }
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Spatial kernel bank
// ---------------------------------------------------------------------------

/// Gaussian kernel responses over pairwise polar coordinates.
/// rho, theta are constant [N x N] fields; the four parameters are rank-1
/// [d_p] vectors. Output is [(N*N) x d_p]; entry ((i*N+j), m) is
///   exp(-(rho_ij - rho0_m)^2 / (2 sr_m^2)) * exp(-wrap(theta_ij - theta0_m)^2 / (2 st_m^2))
/// with sigmas clamped from below at sigma_min (gradient gated off inside
/// the clamp).
template <typename S>
Var<S> kernel_response(const Tensor<S>& rho, const Tensor<S>& theta, Var<S> rho0,
                       Var<S> sigma_rho, Var<S> theta0, Var<S> sigma_theta, double sigma_min) {
    Tape<S>& t = *rho0.tape;
    std::size_t n = rho.rows();
    std::size_t dp = rho0.value().size();
    if (sigma_rho.value().size() != dp || theta0.value().size() != dp ||
        sigma_theta.value().size() != dp) {
        throw DimensionError("kernel_response: parameter vectors disagree on kernel count");
    }
    const Tensor<S>&r0 = rho0.value(), &sr = sigma_rho.value(), &t0 = theta0.value(),
                   &st = sigma_theta.value();
    std::size_t pairs = n * n;
    Tensor<S> out({pairs, dp});
    for (std::size_t p = 0; p < pairs; ++p) {
        double rp = static_cast<double>(rho[p]);
        double tp_ = static_cast<double>(theta[p]);
        for (std::size_t m = 0; m < dp; ++m) {
            double srm = std::max(static_cast<double>(sr[m]), sigma_min);
            double stm = std::max(static_cast<double>(st[m]), sigma_min);
            double dr = rp - static_cast<double>(r0[m]);
            double w = wrap_to_pi(tp_ - static_cast<double>(t0[m]));
            out(p, m) = static_cast<S>(
                std::exp(-dr * dr / (2.0 * srm * srm) - w * w / (2.0 * stm * stm)));
        }
    }
    bool rg = t.wants_grad(rho0.id) || t.wants_grad(sigma_rho.id) || t.wants_grad(theta0.id) ||
              t.wants_grad(sigma_theta.id);
    std::size_t ir0 = rho0.id, isr = sigma_rho.id, it0 = theta0.id, ist = sigma_theta.id;
    return t.op(std::move(out), rg,
                [ir0, isr, it0, ist, rho, theta, sigma_min](Tape<S>& tp, std::size_t self) {
                    const Tensor<S>&g = tp.grad(self), &y = tp.value(self);
                    const Tensor<S>&r0 = tp.value(ir0), &sr = tp.value(isr),
                                   &t0 = tp.value(it0), &st = tp.value(ist);
                    Tensor<S>&gr0 = tp.grad(ir0), &gsr = tp.grad(isr), &gt0 = tp.grad(it0),
                             &gst = tp.grad(ist);
                    std::size_t pairs = y.rows(), dp = y.cols();
                    for (std::size_t p = 0; p < pairs; ++p) {
                        double rp = static_cast<double>(rho[p]);
                        double th = static_cast<double>(theta[p]);
                        for (std::size_t m = 0; m < dp; ++m) {
                            S gy = g(p, m) * y(p, m);
                            if (gy == S(0)) continue;
                            double srm = std::max(static_cast<double>(sr[m]), sigma_min);
                            double stm = std::max(static_cast<double>(st[m]), sigma_min);
                            double dr = rp - static_cast<double>(r0[m]);
                            double w = wrap_to_pi(th - static_cast<double>(t0[m]));
                            gr0[m] += gy * static_cast<S>(dr / (srm * srm));
                            gt0[m] += gy * static_cast<S>(w / (stm * stm));
                            if (static_cast<double>(sr[m]) > sigma_min)
                                gsr[m] += gy * static_cast<S>(dr * dr / (srm * srm * srm));
                            if (static_cast<double>(st[m]) > sigma_min)
                                gst[m] += gy * static_cast<S>(w * w / (stm * stm * stm));
                        }
                    }
                });
}

// ---------------------------------------------------------------------------
// Ranking loss
// ---------------------------------------------------------------------------

/// Bidirectional hinge loss over a square score matrix whose diagonal holds
/// the positive pairs. Only the hardest negative per row/column enters; ties
/// resolve to the lowest index; the hinge subgradient at the kink is 0.
/// Result is the mean over positives of the two hinge terms.
template <typename S>
Var<S> triplet_loss_hard(Var<S> scores, double margin) {
    Tape<S>& t = *scores.tape;
    const Tensor<S>& sv = scores.value();
    if (sv.rank() != 2 || sv.rows() != sv.cols()) {
        throw DimensionError("triplet_loss_hard: score matrix must be square, got " +
                             sv.shape_string());
    }
    std::size_t b = sv.rows();
    if (b < 2) {
        throw DimensionError("triplet_loss_hard: batch of " + std::to_string(b) +
                             " has no negatives");
    }
    struct Active {
        std::size_t row, col;  // negative entry receiving +1/B
        std::size_t diag;      // positive entry receiving -1/B
    };
    std::vector<Active> active;
    double total = 0.0;
    for (std::size_t a = 0; a < b; ++a) {
        // hardest caption negative in row a
        std::size_t jt = a == 0 ? 1 : 0;
        for (std::size_t j = 0; j < b; ++j)
            if (j != a && sv(a, j) > sv(a, jt)) jt = j;
        double h1 = margin - static_cast<double>(sv(a, a)) + static_cast<double>(sv(a, jt));
        if (h1 > 0.0) {
            total += h1;
            active.push_back({a, jt, a});
        }
        // hardest image negative in column a
        std::size_t it = a == 0 ? 1 : 0;
        for (std::size_t i = 0; i < b; ++i)
            if (i != a && sv(i, a) > sv(it, a)) it = i;
        double h2 = margin - static_cast<double>(sv(a, a)) + static_cast<double>(sv(it, a));
        if (h2 > 0.0) {
            total += h2;
            active.push_back({it, a, a});
        }
    }
    Tensor<S> out({1, 1});
    out[0] = static_cast<S>(total / static_cast<double>(b));
    std::size_t sid = scores.id;
    return t.op(std::move(out), t.wants_grad(sid),
                [sid, active, b](Tape<S>& tp, std::size_t self) {
                    const S g = tp.grad(self)[0];
                    Tensor<S>& gs = tp.grad(sid);
                    const S w = g / static_cast<S>(b);
                    for (const auto& a : active) {
                        gs(a.row, a.col) += w;
                        gs(a.diag, a.diag) -= w;
                    }
                });
}

}  // namespace parnet

#endif  // PARNET_TAPE_HPP
