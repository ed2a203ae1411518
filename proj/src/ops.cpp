#include "fka/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace fka {

namespace {

template <typename T>
using NodePtr = std::shared_ptr<TensorNode<T>>;

/// Wraps forward data into a tensor and attaches the backward rule when any
/// input participates in the tape.
template <typename T, typename Fn>
BasicTensor<T> record(const char* name, Shape shape, std::vector<T> data, std::vector<NodePtr<T>> inputs, Fn&& fn) {
    BasicTensor<T> out(std::move(shape), std::move(data));
    if (!GradMode::enabled()) return out;
    bool any = false;
    for (const auto& in : inputs) any = any || (in && in->requires_grad);
    if (!any) return out;
    auto& node = *out.node();
    node.requires_grad = true;
    node.op = name;
    node.inputs = std::move(inputs);
    node.backward = std::forward<Fn>(fn);
    return out;
}

/// Grad buffer of an input, or nullptr when it does not need one.
template <typename T>
std::vector<T>* grad_buf(const NodePtr<T>& n) {
    if (!n || !n->requires_grad) return nullptr;
    n->ensure_grad();
    return &n->grad;
}

void require_rank(const Shape& s, std::size_t r, const char* op) {
    if (s.size() != r) {
        throw DimensionError(std::string(op) + ": expected rank " + std::to_string(r) + ", got " + shape_str(s));
    }
}

template <typename T>
void require_finite(const BasicTensor<T>& x, const char* op) {
    for (T v : x.data()) {
        if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite input");
    }
}

// Broadcast classification for binary elementwise ops.
enum class Bcast { Same, ScalarA, ScalarB, RowA, RowB };

template <typename T>
Bcast classify(const BasicTensor<T>& a, const BasicTensor<T>& b, const char* op) {
    if (a.shape() == b.shape()) return Bcast::Same;
    if (b.numel() == 1) return Bcast::ScalarB;
    if (a.numel() == 1) return Bcast::ScalarA;
    if (b.rank() == 1 && a.rank() >= 1 && a.shape().back() == b.numel()) return Bcast::RowB;
    if (a.rank() == 1 && b.rank() >= 1 && b.shape().back() == a.numel()) return Bcast::RowA;
    throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(a.shape()) + " with " +
                         shape_str(b.shape()));
}

inline std::size_t bidx(Bcast k, bool is_a, std::size_t i, std::size_t row) {
    switch (k) {
        case Bcast::Same: return i;
        case Bcast::ScalarA: return is_a ? 0 : i;
        case Bcast::ScalarB: return is_a ? i : 0;
        case Bcast::RowA: return is_a ? i % row : i;
        case Bcast::RowB: return is_a ? i : i % row;
    }
    return i;
}

/// Generic binary op. `f(a,b)` gives the value; `da(a,b,out)` and
/// `db(a,b,out)` give local partials.
template <typename T, typename F, typename DA, typename DB>
BasicTensor<T> binary(const char* name, const BasicTensor<T>& a, const BasicTensor<T>& b, F f, DA da, DB db) {
    const Bcast kind = classify(a, b, name);
    const bool a_big = kind == Bcast::Same || kind == Bcast::ScalarB || kind == Bcast::RowB;
    const Shape out_shape = a_big ? a.shape() : b.shape();
    const std::size_t n = shape_numel(out_shape);
    const std::size_t row = out_shape.empty() ? 1 : out_shape.back();
    std::vector<T> out(n);
    auto ad = a.data();
    auto bd = b.data();
    for (std::size_t i = 0; i < n; ++i) out[i] = f(ad[bidx(kind, true, i, row)], bd[bidx(kind, false, i, row)]);
    return record(name, out_shape, std::move(out), {a.node(), b.node()},
                  [kind, n, row, da, db](TensorNode<T>& self) {
                      const auto& an = self.inputs[0];
                      const auto& bn = self.inputs[1];
                      auto* ga = grad_buf(an);
                      auto* gb = grad_buf(bn);
                      for (std::size_t i = 0; i < n; ++i) {
                          const std::size_t ia = bidx(kind, true, i, row);
                          const std::size_t ib = bidx(kind, false, i, row);
                          const T av = an->data[ia];
                          const T bv = bn->data[ib];
                          const T g = self.grad[i];
                          if (ga) (*ga)[ia] += g * da(av, bv, self.data[i]);
                          if (gb) (*gb)[ib] += g * db(av, bv, self.data[i]);
                      }
                  });
}

/// Generic unary op; `d(x, y)` is dy/dx given input and output.
template <typename T, typename F, typename D>
BasicTensor<T> unary(const char* name, const BasicTensor<T>& a, F f, D d) {
    std::vector<T> out(a.numel());
    auto ad = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(ad[i]);
    return record(name, a.shape(), std::move(out), {a.node()}, [d](TensorNode<T>& self) {
        auto* g = grad_buf(self.inputs[0]);
        const auto& x = self.inputs[0]->data;
        for (std::size_t i = 0; i < self.data.size(); ++i) (*g)[i] += self.grad[i] * d(x[i], self.data[i]);
    });
}

/// Splits `shape` around `axis` into (outer, extent, inner).
std::tuple<std::size_t, std::size_t, std::size_t> axis_split(const Shape& shape, int axis, const char* op) {
    const int r = static_cast<int>(shape.size());
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) throw DimensionError(std::string(op) + ": bad axis for " + shape_str(shape));
    std::size_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= shape[i];
    for (int i = axis + 1; i < r; ++i) inner *= shape[i];
    return {outer, shape[axis], inner};
}

} // namespace

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    return binary<T>(
        "add", a, b, [](T x, T y) { return x + y; }, [](T, T, T) { return T(1); }, [](T, T, T) { return T(1); });
}

template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    return binary<T>(
        "sub", a, b, [](T x, T y) { return x - y; }, [](T, T, T) { return T(1); }, [](T, T, T) { return T(-1); });
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    return binary<T>(
        "mul", a, b, [](T x, T y) { return x * y; }, [](T, T y, T) { return y; }, [](T x, T, T) { return x; });
}

template <typename T>
BasicTensor<T> div(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    return binary<T>(
        "div", a, b, [](T x, T y) { return x / y; }, [](T, T y, T) { return T(1) / y; },
        [](T x, T y, T) { return -x / (y * y); });
}

// Ties route the gradient to the first operand.
template <typename T>
BasicTensor<T> maximum(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    return binary<T>(
        "maximum", a, b, [](T x, T y) { return x >= y ? x : y; }, [](T x, T y, T) { return x >= y ? T(1) : T(0); },
        [](T x, T y, T) { return x >= y ? T(0) : T(1); });
}

template <typename T>
BasicTensor<T> minimum(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    return binary<T>(
        "minimum", a, b, [](T x, T y) { return x <= y ? x : y; }, [](T x, T y, T) { return x <= y ? T(1) : T(0); },
        [](T x, T y, T) { return x <= y ? T(0) : T(1); });
}

template <typename T>
BasicTensor<T> add_scalar(const BasicTensor<T>& a, T s) {
    return unary<T>("add_scalar", a, [s](T x) { return x + s; }, [](T, T) { return T(1); });
}

template <typename T>
BasicTensor<T> mul_scalar(const BasicTensor<T>& a, T s) {
    return unary<T>("mul_scalar", a, [s](T x) { return x * s; }, [s](T, T) { return s; });
}

template <typename T>
BasicTensor<T> pow_scalar(const BasicTensor<T>& a, T p) {
    return unary<T>(
        "pow_scalar", a, [p](T x) { return std::pow(x, p); },
        [p](T x, T) { return p == T(0) ? T(0) : p * std::pow(x, p - T(1)); });
}

template <typename T>
BasicTensor<T> exp(const BasicTensor<T>& a) {
    return unary<T>("exp", a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
BasicTensor<T> log(const BasicTensor<T>& a) {
    return unary<T>("log", a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <typename T>
BasicTensor<T> abs(const BasicTensor<T>& a) {
    return unary<T>(
        "abs", a, [](T x) { return std::abs(x); },
        [](T x, T) { return x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0)); });
}

template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& a) {
    return unary<T>(
        "sigmoid", a,
        [](T x) {
            if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
            const T e = std::exp(x);
            return e / (T(1) + e);
        },
        [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& a) {
    return unary<T>(
        "relu", a, [](T x) { return x > T(0) ? x : T(0); }, [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
BasicTensor<T> gelu(const BasicTensor<T>& a) {
    constexpr T c = T(0.7978845608028654);  // sqrt(2/pi)
    constexpr T k = T(0.044715);
    return unary<T>(
        "gelu", a, [](T x) { return T(0.5) * x * (T(1) + std::tanh(c * (x + k * x * x * x))); },
        [](T x, T) {
            const T t = std::tanh(c * (x + k * x * x * x));
            return T(0.5) * (T(1) + t) + T(0.5) * x * (T(1) - t * t) * c * (T(1) + T(3) * k * x * x);
        });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& a) {
    T s = T(0);
    for (T v : a.data()) s += v;
    return record("sum", Shape{1}, std::vector<T>{s}, {a.node()}, [](TensorNode<T>& self) {
        auto* g = grad_buf(self.inputs[0]);
        for (auto& v : *g) v += self.grad[0];
    });
}

template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& a) {
    if (a.numel() == 0) throw UsageError("mean of an empty tensor");
    T s = T(0);
    for (T v : a.data()) s += v;
    const T n = static_cast<T>(a.numel());
    return record("mean", Shape{1}, std::vector<T>{s / n}, {a.node()}, [n](TensorNode<T>& self) {
        auto* g = grad_buf(self.inputs[0]);
        const T gv = self.grad[0] / n;
        for (auto& v : *g) v += gv;
    });
}

// ---------------------------------------------------------------------------
// Structure

template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& a, Shape shape) {
    if (shape_numel(shape) != a.numel()) {
        throw DimensionError("reshape: " + shape_str(a.shape()) + " to " + shape_str(shape));
    }
    std::vector<T> out(a.data().begin(), a.data().end());
    return record("reshape", std::move(shape), std::move(out), {a.node()}, [](TensorNode<T>& self) {
        auto* g = grad_buf(self.inputs[0]);
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    });
}

template <typename T>
BasicTensor<T> transpose(const BasicTensor<T>& a) {
    require_rank(a.shape(), 2, "transpose");
    const std::size_t r = a.dim(0), c = a.dim(1);
    std::vector<T> out(r * c);
    auto ad = a.data();
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = ad[i * c + j];
    return record("transpose", Shape{c, r}, std::move(out), {a.node()}, [r, c](TensorNode<T>& self) {
        auto* g = grad_buf(self.inputs[0]);
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) (*g)[i * c + j] += self.grad[j * r + i];
    });
}

template <typename T>
BasicTensor<T> slice_rows(const BasicTensor<T>& a, std::size_t begin, std::size_t end) {
    require_rank(a.shape(), 2, "slice_rows");
    if (begin > end || end > a.dim(0)) {
        throw DimensionError("slice_rows: [" + std::to_string(begin) + "," + std::to_string(end) + ") of " +
                             shape_str(a.shape()));
    }
    const std::size_t c = a.dim(1);
    std::vector<T> out(a.data().begin() + begin * c, a.data().begin() + end * c);
    return record("slice_rows", Shape{end - begin, c}, std::move(out), {a.node()}, [begin, c](TensorNode<T>& self) {
        auto* g = grad_buf(self.inputs[0]);
        for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[begin * c + i] += self.grad[i];
    });
}

template <typename T>
BasicTensor<T> slice_cols(const BasicTensor<T>& a, std::size_t begin, std::size_t end) {
    require_rank(a.shape(), 2, "slice_cols");
    if (begin > end || end > a.dim(1)) {
        throw DimensionError("slice_cols: [" + std::to_string(begin) + "," + std::to_string(end) + ") of " +
                             shape_str(a.shape()));
    }
    const std::size_t r = a.dim(0), c = a.dim(1), w = end - begin;
    std::vector<T> out(r * w);
    auto ad = a.data();
    for (std::size_t i = 0; i < r; ++i)
        std::copy_n(ad.begin() + i * c + begin, w, out.begin() + i * w);
    return record("slice_cols", Shape{r, w}, std::move(out), {a.node()}, [r, c, w, begin](TensorNode<T>& self) {
        auto* g = grad_buf(self.inputs[0]);
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < w; ++j) (*g)[i * c + begin + j] += self.grad[i * w + j];
    });
}

template <typename T>
BasicTensor<T> concat_rows(const std::vector<BasicTensor<T>>& parts) {
    if (parts.empty()) throw UsageError("concat_rows of nothing");
    const std::size_t c = parts[0].dim(1);
    std::size_t rows = 0;
    std::vector<NodePtr<T>> inputs;
    for (const auto& p : parts) {
        require_rank(p.shape(), 2, "concat_rows");
        if (p.dim(1) != c) {
            throw DimensionError("concat_rows: width " + shape_str(p.shape()) + " vs " + std::to_string(c));
        }
        rows += p.dim(0);
        inputs.push_back(p.node());
    }
    std::vector<T> out;
    out.reserve(rows * c);
    for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
    return record("concat_rows", Shape{rows, c}, std::move(out), std::move(inputs), [](TensorNode<T>& self) {
        std::size_t off = 0;
        for (const auto& in : self.inputs) {
            if (auto* g = grad_buf(in)) {
                for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[off + i];
            }
            off += in->data.size();
        }
    });
}

template <typename T>
BasicTensor<T> concat_cols(const std::vector<BasicTensor<T>>& parts) {
    if (parts.empty()) throw UsageError("concat_cols of nothing");
    const std::size_t r = parts[0].dim(0);
    std::size_t cols = 0;
    std::vector<NodePtr<T>> inputs;
    for (const auto& p : parts) {
        require_rank(p.shape(), 2, "concat_cols");
        if (p.dim(0) != r) {
            throw DimensionError("concat_cols: height " + shape_str(p.shape()) + " vs " + std::to_string(r));
        }
        cols += p.dim(1);
        inputs.push_back(p.node());
    }
    std::vector<T> out(r * cols);
    std::size_t off = 0;
    for (const auto& p : parts) {
        const std::size_t w = p.dim(1);
        auto pd = p.data();
        for (std::size_t i = 0; i < r; ++i) std::copy_n(pd.begin() + i * w, w, out.begin() + i * cols + off);
        off += w;
    }
    return record("concat_cols", Shape{r, cols}, std::move(out), std::move(inputs), [r, cols](TensorNode<T>& self) {
        std::size_t off = 0;
        for (const auto& in : self.inputs) {
            const std::size_t w = in->shape[1];
            if (auto* g = grad_buf(in)) {
                for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < w; ++j) (*g)[i * w + j] += self.grad[i * cols + off + j];
            }
            off += w;
        }
    });
}

template <typename T>
BasicTensor<T> embedding(const BasicTensor<T>& table, std::span<const int> ids) {
    require_rank(table.shape(), 2, "embedding");
    const std::size_t v = table.dim(0), c = table.dim(1);
    std::vector<int> rows(ids.begin(), ids.end());
    std::vector<T> out(rows.size() * c);
    auto td = table.data();
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] < 0 || static_cast<std::size_t>(rows[i]) >= v) {
            throw InputError("embedding: id " + std::to_string(rows[i]) + " outside vocabulary of " +
                             std::to_string(v));
        }
        std::copy_n(td.begin() + rows[i] * c, c, out.begin() + i * c);
    }
    return record("embedding", Shape{rows.size(), c}, std::move(out), {table.node()},
                  [rows, c](TensorNode<T>& self) {
                      auto* g = grad_buf(self.inputs[0]);
                      for (std::size_t i = 0; i < rows.size(); ++i)
                          for (std::size_t j = 0; j < c; ++j) (*g)[rows[i] * c + j] += self.grad[i * c + j];
                  });
}

template <typename T>
BasicTensor<T> pick(const BasicTensor<T>& x, std::span<const int> idx) {
    require_rank(x.shape(), 2, "pick");
    const std::size_t r = x.dim(0), c = x.dim(1);
    if (idx.size() != r) throw DimensionError("pick: " + std::to_string(idx.size()) + " indices for " + shape_str(x.shape()));
    std::vector<int> cols(idx.begin(), idx.end());
    std::vector<T> out(r);
    for (std::size_t i = 0; i < r; ++i) {
        if (cols[i] < 0 || static_cast<std::size_t>(cols[i]) >= c) {
            throw InputError("pick: index " + std::to_string(cols[i]) + " outside " + std::to_string(c));
        }
        out[i] = x.data()[i * c + cols[i]];
    }
    return record("pick", Shape{r}, std::move(out), {x.node()}, [cols, c](TensorNode<T>& self) {
        auto* g = grad_buf(self.inputs[0]);
        for (std::size_t i = 0; i < cols.size(); ++i) (*g)[i * c + cols[i]] += self.grad[i];
    });
}

// ---------------------------------------------------------------------------
// Linear algebra

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw DimensionError("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<T> out(m * n, T(0));
    const T* ad = a.data().data();
    const T* bd = b.data().data();
    for (std::size_t i = 0; i < m; ++i) {
        T* orow = out.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const T av = ad[i * k + p];
            const T* brow = bd + p * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    return record("matmul", Shape{m, n}, std::move(out), {a.node(), b.node()}, [m, k, n](TensorNode<T>& self) {
        const auto& an = self.inputs[0];
        const auto& bn = self.inputs[1];
        const T* g = self.grad.data();
        if (auto* ga = grad_buf(an)) {
            // dA = dC · Bᵀ
            const T* bd = bn->data.data();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    T acc = T(0);
                    const T* brow = bd + p * n;
                    const T* grow = g + i * n;
                    for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                    (*ga)[i * k + p] += acc;
                }
        }
        if (auto* gb = grad_buf(bn)) {
            // dB = Aᵀ · dC
            const T* ad = an->data.data();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    const T av = ad[i * k + p];
                    T* gbrow = gb->data() + p * n;
                    const T* grow = g + i * n;
                    for (std::size_t j = 0; j < n; ++j) gbrow[j] += av * grow[j];
                }
        }
    });
}

template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& b) {
    auto y = matmul(x, w);
    return b.defined() ? add(y, b) : y;
}

// ---------------------------------------------------------------------------
// Normalization

template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& x, int axis) {
    require_finite(x, "softmax");
    auto [outer, extent, inner] = axis_split(x.shape(), axis, "softmax");
    std::vector<T> out(x.numel());
    auto xd = x.data();
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * extent * inner + in;
            T mx = -std::numeric_limits<T>::infinity();
            for (std::size_t e = 0; e < extent; ++e) mx = std::max(mx, xd[base + e * inner]);
            T s = T(0);
            for (std::size_t e = 0; e < extent; ++e) {
                const T v = std::exp(xd[base + e * inner] - mx);
                out[base + e * inner] = v;
                s += v;
            }
            for (std::size_t e = 0; e < extent; ++e) out[base + e * inner] /= s;
        }
    return record("softmax", x.shape(), std::move(out), {x.node()},
                  [outer = outer, extent = extent, inner = inner](TensorNode<T>& self) {
                      auto* g = grad_buf(self.inputs[0]);
                      const auto& y = self.data;
                      for (std::size_t o = 0; o < outer; ++o)
                          for (std::size_t in = 0; in < inner; ++in) {
                              const std::size_t base = o * extent * inner + in;
                              T dot = T(0);
                              for (std::size_t e = 0; e < extent; ++e)
                                  dot += self.grad[base + e * inner] * y[base + e * inner];
                              for (std::size_t e = 0; e < extent; ++e) {
                                  const std::size_t i = base + e * inner;
                                  (*g)[i] += y[i] * (self.grad[i] - dot);
                              }
                          }
                  });
}

template <typename T>
BasicTensor<T> log_softmax(const BasicTensor<T>& x, int axis) {
    require_finite(x, "log_softmax");
    auto [outer, extent, inner] = axis_split(x.shape(), axis, "log_softmax");
    std::vector<T> out(x.numel());
    auto xd = x.data();
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * extent * inner + in;
            T mx = -std::numeric_limits<T>::infinity();
            for (std::size_t e = 0; e < extent; ++e) mx = std::max(mx, xd[base + e * inner]);
            T s = T(0);
            for (std::size_t e = 0; e < extent; ++e) s += std::exp(xd[base + e * inner] - mx);
            const T lse = mx + std::log(s);
            for (std::size_t e = 0; e < extent; ++e) out[base + e * inner] = xd[base + e * inner] - lse;
        }
    return record("log_softmax", x.shape(), std::move(out), {x.node()},
                  [outer = outer, extent = extent, inner = inner](TensorNode<T>& self) {
                      auto* g = grad_buf(self.inputs[0]);
                      const auto& y = self.data;
                      for (std::size_t o = 0; o < outer; ++o)
                          for (std::size_t in = 0; in < inner; ++in) {
                              const std::size_t base = o * extent * inner + in;
                              T gs = T(0);
                              for (std::size_t e = 0; e < extent; ++e) gs += self.grad[base + e * inner];
                              for (std::size_t e = 0; e < extent; ++e) {
                                  const std::size_t i = base + e * inner;
                                  (*g)[i] += self.grad[i] - std::exp(y[i]) * gs;
                              }
                          }
                  });
}

template <typename T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gamma, const BasicTensor<T>& beta, T eps) {
    require_rank(x.shape(), 2, "layer_norm");
    const std::size_t r = x.dim(0), c = x.dim(1);
    if (gamma.defined() && gamma.numel() != c) throw DimensionError("layer_norm: gamma " + shape_str(gamma.shape()));
    if (beta.defined() && beta.numel() != c) throw DimensionError("layer_norm: beta " + shape_str(beta.shape()));
    std::vector<T> xhat(r * c), out(r * c), inv_std(r);
    auto xd = x.data();
    for (std::size_t i = 0; i < r; ++i) {
        T mu = T(0);
        for (std::size_t j = 0; j < c; ++j) mu += xd[i * c + j];
        mu /= static_cast<T>(c);
        T var = T(0);
        for (std::size_t j = 0; j < c; ++j) {
            const T d = xd[i * c + j] - mu;
            var += d * d;
        }
        var /= static_cast<T>(c);
        inv_std[i] = T(1) / std::sqrt(var + eps);
        for (std::size_t j = 0; j < c; ++j) {
            const T h = (xd[i * c + j] - mu) * inv_std[i];
            xhat[i * c + j] = h;
            const T gm = gamma.defined() ? gamma[j] : T(1);
            const T bt = beta.defined() ? beta[j] : T(0);
            out[i * c + j] = h * gm + bt;
        }
    }
    std::vector<NodePtr<T>> inputs{x.node()};
    inputs.push_back(gamma.defined() ? gamma.node() : nullptr);
    inputs.push_back(beta.defined() ? beta.node() : nullptr);
    return record("layer_norm", x.shape(), std::move(out), std::move(inputs),
                  [r, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](TensorNode<T>& self) {
                      const auto& gn = self.inputs[1];
                      auto* gx = grad_buf(self.inputs[0]);
                      auto* gg = grad_buf(gn);
                      auto* gb = grad_buf(self.inputs[2]);
                      std::vector<T> dxhat(c);
                      for (std::size_t i = 0; i < r; ++i) {
                          T m1 = T(0), m2 = T(0);
                          for (std::size_t j = 0; j < c; ++j) {
                              const T dy = self.grad[i * c + j];
                              const T h = xhat[i * c + j];
                              if (gg) (*gg)[j] += dy * h;
                              if (gb) (*gb)[j] += dy;
                              dxhat[j] = dy * (gn ? gn->data[j] : T(1));
                              m1 += dxhat[j];
                              m2 += dxhat[j] * h;
                          }
                          if (!gx) continue;
                          m1 /= static_cast<T>(c);
                          m2 /= static_cast<T>(c);
                          for (std::size_t j = 0; j < c; ++j)
                              (*gx)[i * c + j] += inv_std[i] * (dxhat[j] - m1 - xhat[i * c + j] * m2);
                      }
                  });
}

template <typename T>
BasicTensor<T> l2_normalize_rows(const BasicTensor<T>& x, T eps) {
    require_rank(x.shape(), 2, "l2_normalize_rows");
    const std::size_t r = x.dim(0), c = x.dim(1);
    std::vector<T> out(r * c), norms(r);
    auto xd = x.data();
    for (std::size_t i = 0; i < r; ++i) {
        T s = T(0);
        for (std::size_t j = 0; j < c; ++j) s += xd[i * c + j] * xd[i * c + j];
        norms[i] = std::sqrt(s + eps);
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] = xd[i * c + j] / norms[i];
    }
    return record("l2_normalize_rows", x.shape(), std::move(out), {x.node()},
                  [r, c, norms = std::move(norms)](TensorNode<T>& self) {
                      auto* g = grad_buf(self.inputs[0]);
                      const auto& y = self.data;
                      for (std::size_t i = 0; i < r; ++i) {
                          T dot = T(0);
                          for (std::size_t j = 0; j < c; ++j) dot += y[i * c + j] * self.grad[i * c + j];
                          for (std::size_t j = 0; j < c; ++j)
                              (*g)[i * c + j] += (self.grad[i * c + j] - y[i * c + j] * dot) / norms[i];
                      }
                  });
}

// ---------------------------------------------------------------------------
// Attention

template <typename T>
BasicTensor<T> attention(const BasicTensor<T>& q, const BasicTensor<T>& k, const BasicTensor<T>& v,
                         const BasicTensor<T>& mask) {
    require_rank(q.shape(), 2, "attention(Q)");
    require_rank(k.shape(), 2, "attention(K)");
    require_rank(v.shape(), 2, "attention(V)");
    if (q.dim(1) != k.dim(1)) {
        throw DimensionError("attention: query " + shape_str(q.shape()) + " vs key " + shape_str(k.shape()));
    }
    if (k.dim(0) != v.dim(0)) {
        throw DimensionError("attention: key " + shape_str(k.shape()) + " vs value " + shape_str(v.shape()));
    }
    if (k.dim(0) == 0) throw InputError("attention over an empty key set");
    const T scale = T(1) / std::sqrt(static_cast<T>(q.dim(1)));
    auto scores = mul_scalar(matmul(q, transpose(k)), scale);
    if (mask.defined()) scores = add(scores, mask);
    return matmul(softmax(scores, 1), v);
}

template <typename T>
BasicTensor<T> multi_head_attention(const BasicTensor<T>& q, const BasicTensor<T>& k, const BasicTensor<T>& v,
                                    std::size_t heads, const BasicTensor<T>& w_out, const BasicTensor<T>& b_out,
                                    const BasicTensor<T>& mask) {
    require_rank(q.shape(), 2, "multi_head_attention(Q)");
    const std::size_t d = q.dim(1);
    if (heads == 0 || d % heads != 0) {
        throw ConfigError("multi_head_attention: dim " + std::to_string(d) + " not divisible by " +
                          std::to_string(heads) + " heads");
    }
    if (k.dim(1) != d || v.dim(1) != d) {
        throw DimensionError("multi_head_attention: feature dims " + shape_str(q.shape()) + ", " +
                             shape_str(k.shape()) + ", " + shape_str(v.shape()));
    }
    const std::size_t hd = d / heads;
    std::vector<BasicTensor<T>> outs;
    outs.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t b = h * hd, e = b + hd;
        outs.push_back(attention(slice_cols(q, b, e), slice_cols(k, b, e), slice_cols(v, b, e), mask));
    }
    auto merged = heads == 1 ? outs[0] : concat_cols(outs);
    return linear(merged, w_out, b_out);
}

// ---------------------------------------------------------------------------
// Convolution

template <typename T>
BasicTensor<T> transposed_conv2d(const BasicTensor<T>& x, const BasicTensor<T>& kernel, const BasicTensor<T>& bias,
                                 std::size_t stride) {
    require_rank(x.shape(), 3, "transposed_conv2d(x)");
    require_rank(kernel.shape(), 4, "transposed_conv2d(kernel)");
    if (stride < 1) throw ConfigError("transposed_conv2d: stride must be >= 1");
    const std::size_t h = x.dim(0), w = x.dim(1), ci = x.dim(2);
    const std::size_t ks = kernel.dim(0), co = kernel.dim(3);
    if (kernel.dim(1) != ks || kernel.dim(2) != ci) {
        throw DimensionError("transposed_conv2d: input " + shape_str(x.shape()) + " vs kernel " +
                             shape_str(kernel.shape()));
    }
    if (bias.defined() && bias.numel() != co) throw DimensionError("transposed_conv2d: bias " + shape_str(bias.shape()));
    const std::size_t oh = (h - 1) * stride + ks, ow = (w - 1) * stride + ks;
    std::vector<T> out(oh * ow * co, T(0));
    auto xd = x.data();
    auto kd = kernel.data();
    for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j)
            for (std::size_t ki = 0; ki < ks; ++ki)
                for (std::size_t kj = 0; kj < ks; ++kj) {
                    T* orow = out.data() + ((i * stride + ki) * ow + (j * stride + kj)) * co;
                    for (std::size_t c = 0; c < ci; ++c) {
                        const T xv = xd[(i * w + j) * ci + c];
                        const T* krow = kd.data() + ((ki * ks + kj) * ci + c) * co;
                        for (std::size_t o = 0; o < co; ++o) orow[o] += xv * krow[o];
                    }
                }
    if (bias.defined())
        for (std::size_t p = 0; p < oh * ow; ++p)
            for (std::size_t o = 0; o < co; ++o) out[p * co + o] += bias[o];
    std::vector<NodePtr<T>> inputs{x.node(), kernel.node(), bias.defined() ? bias.node() : nullptr};
    return record("transposed_conv2d", Shape{oh, ow, co}, std::move(out), std::move(inputs),
                  [h, w, ci, ks, co, ow, oh, stride](TensorNode<T>& self) {
                      const auto& xn = self.inputs[0];
                      const auto& kn = self.inputs[1];
                      auto* gx = grad_buf(xn);
                      auto* gk = grad_buf(kn);
                      auto* gb = grad_buf(self.inputs[2]);
                      for (std::size_t i = 0; i < h; ++i)
                          for (std::size_t j = 0; j < w; ++j)
                              for (std::size_t ki = 0; ki < ks; ++ki)
                                  for (std::size_t kj = 0; kj < ks; ++kj) {
                                      const T* grow =
                                          self.grad.data() + ((i * stride + ki) * ow + (j * stride + kj)) * co;
                                      for (std::size_t c = 0; c < ci; ++c) {
                                          const std::size_t xi = (i * w + j) * ci + c;
                                          const std::size_t kb = ((ki * ks + kj) * ci + c) * co;
                                          if (gx) {
                                              T acc = T(0);
                                              for (std::size_t o = 0; o < co; ++o) acc += grow[o] * kn->data[kb + o];
                                              (*gx)[xi] += acc;
                                          }
                                          if (gk) {
                                              const T xv = xn->data[xi];
                                              for (std::size_t o = 0; o < co; ++o) (*gk)[kb + o] += xv * grow[o];
                                          }
                                      }
                                  }
                      if (gb)
                          for (std::size_t p = 0; p < oh * ow; ++p)
                              for (std::size_t o = 0; o < co; ++o) (*gb)[o] += self.grad[p * co + o];
                  });
}

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& kernel, const BasicTensor<T>& bias,
                      std::size_t stride) {
    require_rank(x.shape(), 3, "conv2d(x)");
    require_rank(kernel.shape(), 4, "conv2d(kernel)");
    if (stride < 1) throw ConfigError("conv2d: stride must be >= 1");
    const std::size_t h = x.dim(0), w = x.dim(1), ci = x.dim(2);
    const std::size_t ks = kernel.dim(0), co = kernel.dim(3);
    if (kernel.dim(1) != ks || kernel.dim(2) != ci || h < ks || w < ks) {
        throw DimensionError("conv2d: input " + shape_str(x.shape()) + " vs kernel " + shape_str(kernel.shape()));
    }
    if (bias.defined() && bias.numel() != co) throw DimensionError("conv2d: bias " + shape_str(bias.shape()));
    const std::size_t oh = (h - ks) / stride + 1, ow = (w - ks) / stride + 1;
    std::vector<T> out(oh * ow * co, T(0));
    auto xd = x.data();
    auto kd = kernel.data();
    for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
            T* orow = out.data() + (i * ow + j) * co;
            for (std::size_t ki = 0; ki < ks; ++ki)
                for (std::size_t kj = 0; kj < ks; ++kj)
                    for (std::size_t c = 0; c < ci; ++c) {
                        const T xv = xd[((i * stride + ki) * w + (j * stride + kj)) * ci + c];
                        const T* krow = kd.data() + ((ki * ks + kj) * ci + c) * co;
                        for (std::size_t o = 0; o < co; ++o) orow[o] += xv * krow[o];
                    }
            if (bias.defined())
                for (std::size_t o = 0; o < co; ++o) orow[o] += bias[o];
        }
    std::vector<NodePtr<T>> inputs{x.node(), kernel.node(), bias.defined() ? bias.node() : nullptr};
    return record("conv2d", Shape{oh, ow, co}, std::move(out), std::move(inputs),
                  [w, ci, ks, co, oh, ow, stride](TensorNode<T>& self) {
                      const auto& xn = self.inputs[0];
                      const auto& kn = self.inputs[1];
                      auto* gx = grad_buf(xn);
                      auto* gk = grad_buf(kn);
                      auto* gb = grad_buf(self.inputs[2]);
                      for (std::size_t i = 0; i < oh; ++i)
                          for (std::size_t j = 0; j < ow; ++j) {
                              const T* grow = self.grad.data() + (i * ow + j) * co;
                              if (gb)
                                  for (std::size_t o = 0; o < co; ++o) (*gb)[o] += grow[o];
                              for (std::size_t ki = 0; ki < ks; ++ki)
                                  for (std::size_t kj = 0; kj < ks; ++kj)
                                      for (std::size_t c = 0; c < ci; ++c) {
                                          const std::size_t xi = ((i * stride + ki) * w + (j * stride + kj)) * ci + c;
                                          const std::size_t kb = ((ki * ks + kj) * ci + c) * co;
                                          if (gx) {
                                              T acc = T(0);
                                              for (std::size_t o = 0; o < co; ++o) acc += grow[o] * kn->data[kb + o];
                                              (*gx)[xi] += acc;
                                          }
                                          if (gk) {
                                              const T xv = xn->data[xi];
                                              for (std::size_t o = 0; o < co; ++o) (*gk)[kb + o] += xv * grow[o];
                                          }
                                      }
                          }
                  });
}

template <typename T>
BasicTensor<T> causal_mask(std::size_t n) {
    std::vector<T> m(n * n, T(0));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) m[i * n + j] = T(-1e9);
    return BasicTensor<T>(Shape{n, n}, std::move(m));
}

// ---------------------------------------------------------------------------

#define FKA_INSTANTIATE_OPS(T)                                                                                   \
    template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);                                   \
    template BasicTensor<T> sub(const BasicTensor<T>&, const BasicTensor<T>&);                                   \
    template BasicTensor<T> mul(const BasicTensor<T>&, const BasicTensor<T>&);                                   \
    template BasicTensor<T> div(const BasicTensor<T>&, const BasicTensor<T>&);                                   \
    template BasicTensor<T> maximum(const BasicTensor<T>&, const BasicTensor<T>&);                               \
    template BasicTensor<T> minimum(const BasicTensor<T>&, const BasicTensor<T>&);                               \
    template BasicTensor<T> add_scalar(const BasicTensor<T>&, T);                                                \
    template BasicTensor<T> mul_scalar(const BasicTensor<T>&, T);                                                \
    template BasicTensor<T> pow_scalar(const BasicTensor<T>&, T);                                                \
    template BasicTensor<T> exp(const BasicTensor<T>&);                                                          \
    template BasicTensor<T> log(const BasicTensor<T>&);                                                          \
    template BasicTensor<T> abs(const BasicTensor<T>&);                                                          \
    template BasicTensor<T> sigmoid(const BasicTensor<T>&);                                                      \
    template BasicTensor<T> relu(const BasicTensor<T>&);                                                         \
    template BasicTensor<T> gelu(const BasicTensor<T>&);                                                         \
    template BasicTensor<T> sum(const BasicTensor<T>&);                                                          \
    template BasicTensor<T> mean(const BasicTensor<T>&);                                                         \
    template BasicTensor<T> reshape(const BasicTensor<T>&, Shape);                                               \
    template BasicTensor<T> transpose(const BasicTensor<T>&);                                                    \
    template BasicTensor<T> slice_rows(const BasicTensor<T>&, std::size_t, std::size_t);                         \
    template BasicTensor<T> slice_cols(const BasicTensor<T>&, std::size_t, std::size_t);                         \
    template BasicTensor<T> concat_rows(const std::vector<BasicTensor<T>>&);                                     \
    template BasicTensor<T> concat_cols(const std::vector<BasicTensor<T>>&);                                     \
    template BasicTensor<T> embedding(const BasicTensor<T>&, std::span<const int>);                              \
    template BasicTensor<T> pick(const BasicTensor<T>&, std::span<const int>);                                   \
    template BasicTensor<T> matmul(const BasicTensor<T>&, const BasicTensor<T>&);                                \
    template BasicTensor<T> linear(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&);         \
    template BasicTensor<T> softmax(const BasicTensor<T>&, int);                                                 \
    template BasicTensor<T> log_softmax(const BasicTensor<T>&, int);                                             \
    template BasicTensor<T> layer_norm(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&, T);  \
    template BasicTensor<T> l2_normalize_rows(const BasicTensor<T>&, T);                                         \
    template BasicTensor<T> attention(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&,       \
                                      const BasicTensor<T>&);                                                    \
    template BasicTensor<T> multi_head_attention(const BasicTensor<T>&, const BasicTensor<T>&,                   \
                                                 const BasicTensor<T>&, std::size_t, const BasicTensor<T>&,      \
                                                 const BasicTensor<T>&, const BasicTensor<T>&);                  \
    template BasicTensor<T> transposed_conv2d(const BasicTensor<T>&, const BasicTensor<T>&,                      \
                                              const BasicTensor<T>&, std::size_t);                               \
    template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&,          \
                                   std::size_t);                                                                 \
    template BasicTensor<T> causal_mask<T>(std::size_t);

FKA_INSTANTIATE_OPS(float)
FKA_INSTANTIATE_OPS(double)

#undef FKA_INSTANTIATE_OPS

} // namespace fka
