#pragma once

// Dense float64 tensors with tape-based reverse-mode differentiation.
//
// Every differentiable primitive appends its result to the calling thread's
// tape when at least one input requires a gradient. backward() replays the
// tape in reverse, so the record is topological by construction: an
// operation can only consume tensors that already exist.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "massformer/errors.hpp"

namespace massformer::ad {

using shape_t = std::vector<std::size_t>;

inline std::size_t numel(const shape_t& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string to_string(const shape_t& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

struct node {
    shape_t shape;
    std::vector<double> value;
    std::vector<double> grad;  // empty until something flows into it
    bool requires_grad = false;
    std::vector<std::shared_ptr<node>> parents;
    std::function<void(node&)> backward;  // pushes this->grad into parents

    std::span<double> grad_buffer() {
        if (grad.empty()) grad.assign(value.size(), 0.0);
        return grad;
    }
};

// Ordered record of executed primitives for one thread.
class tape {
public:
    void record(std::shared_ptr<node> n) { ops_.push_back(std::move(n)); }
    std::size_t size() const { return ops_.size(); }
    bool empty() const { return ops_.empty(); }
    void clear() { ops_.clear(); }
    const std::vector<std::shared_ptr<node>>& ops() const { return ops_; }

private:
    std::vector<std::shared_ptr<node>> ops_;
};

inline tape& active_tape() {
    thread_local tape t;
    return t;
}

inline bool& grad_mode() {
    thread_local bool enabled = true;
    return enabled;
}

// Disables recording for the current thread while alive.
class no_grad_guard {
public:
    no_grad_guard() : previous_(grad_mode()) { grad_mode() = false; }
    ~no_grad_guard() { grad_mode() = previous_; }
    no_grad_guard(const no_grad_guard&) = delete;
    no_grad_guard& operator=(const no_grad_guard&) = delete;

private:
    bool previous_;
};

class tensor {
public:
    tensor() = default;
    explicit tensor(std::shared_ptr<node> n) : node_(std::move(n)) {}

    static tensor from(shape_t shape, std::vector<double> values, bool requires_grad = false) {
        if (numel(shape) != values.size())
            throw shape_error("tensor: shape " + ad::to_string(shape) + " does not hold " +
                              std::to_string(values.size()) + " values");
        for (auto d : shape)
            if (d == 0) throw shape_error("tensor: zero-sized dimension in " + ad::to_string(shape));
        auto n = std::make_shared<node>();
        n->shape = std::move(shape);
        n->value = std::move(values);
        n->requires_grad = requires_grad;
        return tensor(std::move(n));
    }

    static tensor zeros(shape_t shape, bool requires_grad = false) {
        auto count = numel(shape);
        return from(std::move(shape), std::vector<double>(count, 0.0), requires_grad);
    }

    static tensor full(shape_t shape, double v, bool requires_grad = false) {
        auto count = numel(shape);
        return from(std::move(shape), std::vector<double>(count, v), requires_grad);
    }

    static tensor scalar(double v, bool requires_grad = false) { return from({1}, {v}, requires_grad); }

    bool defined() const { return static_cast<bool>(node_); }
    const shape_t& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t size() const { return node_->value.size(); }
    std::size_t dim(std::size_t i) const { return node_->shape.at(i); }

    std::span<const double> data() const { return node_->value; }
    // Direct write access; used by optimizers and initializers on leaves.
    std::span<double> mutable_data() { return node_->value; }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }
    bool has_grad() const { return !node_->grad.empty(); }
    std::span<const double> grad() const { return node_->grad; }
    std::span<double> mutable_grad() { return node_->grad_buffer(); }
    void zero_grad() { node_->grad.clear(); }

    double item() const {
        if (size() != 1) throw contract_error("item: tensor is not a scalar");
        return node_->value[0];
    }
    double operator[](std::size_t i) const { return node_->value[i]; }
    double at(std::size_t r, std::size_t c) const { return node_->value[r * shape().back() + c]; }

    const std::shared_ptr<node>& handle() const { return node_; }

private:
    std::shared_ptr<node> node_;
};

namespace detail {

inline bool needs_grad(std::initializer_list<const tensor*> inputs) {
    if (!grad_mode()) return false;
    return std::any_of(inputs.begin(), inputs.end(), [](const tensor* t) { return t->requires_grad(); });
}

inline bool needs_grad(const std::vector<tensor>& inputs) {
    if (!grad_mode()) return false;
    return std::any_of(inputs.begin(), inputs.end(), [](const tensor& t) { return t.requires_grad(); });
}

inline tensor finish(shape_t shape, std::vector<double> value, std::vector<tensor> parents, bool record,
                     std::function<void(node&)> backward) {
    auto n = std::make_shared<node>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    if (record) {
        n->requires_grad = true;
        n->parents.reserve(parents.size());
        for (auto& p : parents) n->parents.push_back(p.handle());
        n->backward = std::move(backward);
        active_tape().record(n);
    }
    return tensor(std::move(n));
}

inline void require_same_shape(const tensor& a, const tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw shape_error(std::string(op) + ": shapes " + to_string(a.shape()) + " and " +
                          to_string(b.shape()) + " differ");
}

// C += A(m×k) · B(k×n)
inline void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                    std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = c + i * n;
        const double* arow = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            const double* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C(m×k) += G(m×n) · B(k×n)ᵀ
inline void gemm_nt(const double* g, const double* b, double* c, std::size_t m, std::size_t k,
                    std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* grow = g + i * n;
        double* crow = c + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double* brow = b + p * n;
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
            crow[p] += acc;
        }
    }
}

// C(k×n) += A(m×k)ᵀ · G(m×n)
inline void gemm_tn(const double* a, const double* g, double* c, std::size_t m, std::size_t k,
                    std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        const double* grow = g + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            double* crow = c + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * grow[j];
        }
    }
}

inline void check_finite(std::span<const double> v, const char* op) {
    for (double x : v)
        if (!std::isfinite(x)) throw numeric_error(std::string(op) + ": non-finite value");
}

}  // namespace detail

inline tensor add(const tensor& a, const tensor& b) {
    detail::require_same_shape(a, b, "add");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
    return detail::finish(a.shape(), std::move(out), {a, b}, detail::needs_grad({&a, &b}), [](node& self) {
        for (auto& p : self.parents) {
            if (!p->requires_grad) continue;
            auto g = p->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
    });
}

inline tensor mul(const tensor& a, const tensor& b) {
    detail::require_same_shape(a, b, "mul");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
    return detail::finish(a.shape(), std::move(out), {a, b}, detail::needs_grad({&a, &b}), [](node& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        if (pa.requires_grad) {
            auto g = pa.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.value[i];
        }
        if (pb.requires_grad) {
            auto g = pb.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.value[i];
        }
    });
}

inline tensor scale(const tensor& a, double s) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * s;
    return detail::finish(a.shape(), std::move(out), {a}, detail::needs_grad({&a}), [s](node& self) {
        auto g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * s;
    });
}

inline tensor matmul(const tensor& a, const tensor& b) {
    if (a.rank() != 2 || b.rank() != 2)
        throw shape_error("matmul: expects 2-D operands, got " + to_string(a.shape()) + " and " +
                          to_string(b.shape()));
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k)
        throw shape_error("matmul: inner dimensions disagree, " + to_string(a.shape()) + " x " +
                          to_string(b.shape()));
    std::vector<double> out(m * n, 0.0);
    detail::gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
    return detail::finish({m, n}, std::move(out), {a, b}, detail::needs_grad({&a, &b}),
                          [m, k, n](node& self) {
                              auto& pa = *self.parents[0];
                              auto& pb = *self.parents[1];
                              if (pa.requires_grad)
                                  detail::gemm_nt(self.grad.data(), pb.value.data(), pa.grad_buffer().data(),
                                                  m, k, n);
                              if (pb.requires_grad)
                                  detail::gemm_tn(pa.value.data(), self.grad.data(), pb.grad_buffer().data(),
                                                  m, k, n);
                          });
}

// x(rows×in) · W(in×out) + b(out)
inline tensor affine(const tensor& x, const tensor& w, const tensor& b) {
    if (x.rank() != 2 || w.rank() != 2 || b.rank() != 1)
        throw shape_error("affine: expects x 2-D, W 2-D, b 1-D");
    const std::size_t rows = x.dim(0), in = x.dim(1), out_dim = w.dim(1);
    if (w.dim(0) != in || b.dim(0) != out_dim)
        throw shape_error("affine: " + to_string(x.shape()) + " x " + to_string(w.shape()) + " + " +
                          to_string(b.shape()));
    std::vector<double> out(rows * out_dim);
    for (std::size_t r = 0; r < rows; ++r)
        std::copy(b.data().begin(), b.data().end(), out.begin() + static_cast<std::ptrdiff_t>(r * out_dim));
    detail::gemm_nn(x.data().data(), w.data().data(), out.data(), rows, in, out_dim);
    return detail::finish({rows, out_dim}, std::move(out), {x, w, b}, detail::needs_grad({&x, &w, &b}),
                          [rows, in, out_dim](node& self) {
                              auto& px = *self.parents[0];
                              auto& pw = *self.parents[1];
                              auto& pb = *self.parents[2];
                              if (px.requires_grad)
                                  detail::gemm_nt(self.grad.data(), pw.value.data(), px.grad_buffer().data(),
                                                  rows, in, out_dim);
                              if (pw.requires_grad)
                                  detail::gemm_tn(px.value.data(), self.grad.data(), pw.grad_buffer().data(),
                                                  rows, in, out_dim);
                              if (pb.requires_grad) {
                                  auto g = pb.grad_buffer();
                                  for (std::size_t r = 0; r < rows; ++r)
                                      for (std::size_t j = 0; j < out_dim; ++j) g[j] += self.grad[r * out_dim + j];
                              }
                          });
}

// Swaps the last two dimensions; leading dimensions are treated as a batch.
inline tensor transpose(const tensor& a) {
    if (a.rank() < 2) throw shape_error("transpose: rank < 2");
    shape_t shape = a.shape();
    const std::size_t r = shape[shape.size() - 2], c = shape.back();
    const std::size_t batch = a.size() / (r * c);
    std::swap(shape[shape.size() - 2], shape.back());
    std::vector<double> out(a.size());
    for (std::size_t bi = 0; bi < batch; ++bi)
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) out[bi * r * c + j * r + i] = a[bi * r * c + i * c + j];
    return detail::finish(std::move(shape), std::move(out), {a}, detail::needs_grad({&a}),
                          [batch, r, c](node& self) {
                              auto g = self.parents[0]->grad_buffer();
                              for (std::size_t bi = 0; bi < batch; ++bi)
                                  for (std::size_t i = 0; i < r; ++i)
                                      for (std::size_t j = 0; j < c; ++j)
                                          g[bi * r * c + i * c + j] += self.grad[bi * r * c + j * r + i];
                          });
}

inline tensor reshape(const tensor& a, shape_t shape) {
    if (numel(shape) != a.size())
        throw shape_error("reshape: " + to_string(a.shape()) + " -> " + to_string(shape));
    std::vector<double> out(a.data().begin(), a.data().end());
    return detail::finish(std::move(shape), std::move(out), {a}, detail::needs_grad({&a}), [](node& self) {
        auto g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

inline tensor concat(const std::vector<tensor>& parts, std::size_t axis) {
    if (parts.empty()) throw contract_error("concat: no inputs");
    const shape_t& first = parts.front().shape();
    if (axis >= first.size()) throw shape_error("concat: axis out of range");
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
    for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
    std::vector<std::size_t> widths;
    std::size_t total = 0;
    for (const auto& p : parts) {
        const auto& s = p.shape();
        if (s.size() != first.size()) throw shape_error("concat: rank mismatch");
        for (std::size_t i = 0; i < s.size(); ++i)
            if (i != axis && s[i] != first[i])
                throw shape_error("concat: " + to_string(s) + " incompatible with " + to_string(first));
        widths.push_back(s[axis] * inner);
        total += s[axis];
    }
    shape_t shape = first;
    shape[axis] = total;
    const std::size_t row = total * inner;
    std::vector<double> out(outer * row);
    std::size_t offset = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const auto src = parts[k].data();
        for (std::size_t o = 0; o < outer; ++o)
            std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(o * widths[k]), widths[k],
                        out.begin() + static_cast<std::ptrdiff_t>(o * row + offset));
        offset += widths[k];
    }
    return detail::finish(std::move(shape), std::move(out), parts, detail::needs_grad(parts),
                          [widths, outer, row](node& self) {
                              std::size_t off = 0;
                              for (std::size_t k = 0; k < self.parents.size(); ++k) {
                                  auto& p = *self.parents[k];
                                  if (p.requires_grad) {
                                      auto g = p.grad_buffer();
                                      for (std::size_t o = 0; o < outer; ++o)
                                          for (std::size_t j = 0; j < widths[k]; ++j)
                                              g[o * widths[k] + j] += self.grad[o * row + off + j];
                                  }
                                  off += widths[k];
                              }
                          });
}

// Concatenates equally-shaped tensors along a new leading axis.
inline tensor stack(const std::vector<tensor>& parts) {
    if (parts.empty()) throw contract_error("stack: no inputs");
    std::vector<tensor> lifted;
    lifted.reserve(parts.size());
    for (const auto& p : parts) {
        if (p.shape() != parts.front().shape())
            throw shape_error("stack: " + to_string(p.shape()) + " vs " + to_string(parts.front().shape()));
        shape_t s{1};
        s.insert(s.end(), p.shape().begin(), p.shape().end());
        lifted.push_back(reshape(p, std::move(s)));
    }
    return concat(lifted, 0);
}

// Elementwise max across axis 0. The gradient goes to the arg-max slice; the
// lowest index wins ties.
inline tensor max_leading(const tensor& a) {
    if (a.rank() < 2) throw shape_error("max_leading: rank < 2");
    const std::size_t count = a.dim(0);
    const std::size_t inner = a.size() / count;
    shape_t shape(a.shape().begin() + 1, a.shape().end());
    std::vector<double> out(inner);
    std::vector<std::size_t> arg(inner, 0);
    for (std::size_t j = 0; j < inner; ++j) {
        double best = a[j];
        for (std::size_t k = 1; k < count; ++k) {
            const double v = a[k * inner + j];
            if (v > best) {
                best = v;
                arg[j] = k;
            }
        }
        out[j] = best;
    }
    return detail::finish(std::move(shape), std::move(out), {a}, detail::needs_grad({&a}),
                          [arg = std::move(arg), inner](node& self) {
                              auto g = self.parents[0]->grad_buffer();
                              for (std::size_t j = 0; j < inner; ++j) g[arg[j] * inner + j] += self.grad[j];
                          });
}

inline tensor sum(const tensor& a) {
    double s = 0.0;
    for (double v : a.data()) s += v;
    return detail::finish({1}, {s}, {a}, detail::needs_grad({&a}), [](node& self) {
        auto g = self.parents[0]->grad_buffer();
        for (auto& v : g) v += self.grad[0];
    });
}

inline tensor mean(const tensor& a) {
    const double inv = 1.0 / static_cast<double>(a.size());
    double s = 0.0;
    for (double v : a.data()) s += v;
    return detail::finish({1}, {s * inv}, {a}, detail::needs_grad({&a}), [inv](node& self) {
        auto g = self.parents[0]->grad_buffer();
        for (auto& v : g) v += self.grad[0] * inv;
    });
}

inline tensor log(const tensor& a) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (!(a[i] > 0.0)) throw domain_error("log: non-positive input");
        out[i] = std::log(a[i]);
    }
    return detail::finish(a.shape(), std::move(out), {a}, detail::needs_grad({&a}), [](node& self) {
        const auto& x = self.parents[0]->value;
        auto g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / x[i];
    });
}

// Saturated entries pass no gradient.
inline tensor clamp(const tensor& a, double lo, double hi) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(a[i], lo, hi);
    return detail::finish(a.shape(), std::move(out), {a}, detail::needs_grad({&a}), [lo, hi](node& self) {
        const auto& x = self.parents[0]->value;
        auto g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i)
            if (x[i] >= lo && x[i] <= hi) g[i] += self.grad[i];
    });
}

inline tensor softmax_lastdim(const tensor& x) {
    const std::size_t n = x.shape().back();
    const std::size_t rows = x.size() / n;
    std::vector<double> out(x.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = x.data().data() + r * n;
        double* o = out.data() + r * n;
        const double mx = *std::max_element(in, in + n);
        if (!std::isfinite(mx)) throw numeric_error("softmax_lastdim: non-finite input");
        double total = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            o[j] = std::exp(in[j] - mx);
            total += o[j];
        }
        for (std::size_t j = 0; j < n; ++j) o[j] /= total;
    }
    return detail::finish(x.shape(), std::move(out), {x}, detail::needs_grad({&x}), [rows, n](node& self) {
        auto g = self.parents[0]->grad_buffer();
        for (std::size_t r = 0; r < rows; ++r) {
            const double* y = self.value.data() + r * n;
            const double* gy = self.grad.data() + r * n;
            double dot = 0.0;
            for (std::size_t j = 0; j < n; ++j) dot += gy[j] * y[j];
            for (std::size_t j = 0; j < n; ++j) g[r * n + j] += y[j] * (gy[j] - dot);
        }
    });
}

inline constexpr double layernorm_eps = 1e-5;

// Normalizes each slice along the last dimension, then applies gain and bias.
inline tensor layernorm(const tensor& x, const tensor& gain, const tensor& bias, double eps = layernorm_eps) {
    const std::size_t n = x.shape().back();
    if (gain.size() != n || bias.size() != n)
        throw shape_error("layernorm: gain/bias length must equal last dimension " + std::to_string(n));
    const std::size_t rows = x.size() / n;
    std::vector<double> out(x.size());
    std::vector<double> xhat(x.size());
    std::vector<double> inv_std(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = x.data().data() + r * n;
        double mu = 0.0;
        for (std::size_t j = 0; j < n; ++j) mu += in[j];
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t j = 0; j < n; ++j) var += (in[j] - mu) * (in[j] - mu);
        var /= static_cast<double>(n);
        inv_std[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < n; ++j) {
            xhat[r * n + j] = (in[j] - mu) * inv_std[r];
            out[r * n + j] = gain[j] * xhat[r * n + j] + bias[j];
        }
    }
    return detail::finish(x.shape(), std::move(out), {x, gain, bias}, detail::needs_grad({&x, &gain, &bias}),
                          [rows, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](node& self) {
                              auto& px = *self.parents[0];
                              auto& pg = *self.parents[1];
                              auto& pb = *self.parents[2];
                              if (pg.requires_grad) {
                                  auto g = pg.grad_buffer();
                                  for (std::size_t r = 0; r < rows; ++r)
                                      for (std::size_t j = 0; j < n; ++j)
                                          g[j] += self.grad[r * n + j] * xhat[r * n + j];
                              }
                              if (pb.requires_grad) {
                                  auto g = pb.grad_buffer();
                                  for (std::size_t r = 0; r < rows; ++r)
                                      for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[r * n + j];
                              }
                              if (px.requires_grad) {
                                  auto g = px.grad_buffer();
                                  const double inv_n = 1.0 / static_cast<double>(n);
                                  for (std::size_t r = 0; r < rows; ++r) {
                                      double mean_d = 0.0, mean_dx = 0.0;
                                      for (std::size_t j = 0; j < n; ++j) {
                                          const double d = self.grad[r * n + j] * pg.value[j];
                                          mean_d += d;
                                          mean_dx += d * xhat[r * n + j];
                                      }
                                      mean_d *= inv_n;
                                      mean_dx *= inv_n;
                                      for (std::size_t j = 0; j < n; ++j) {
                                          const double d = self.grad[r * n + j] * pg.value[j];
                                          g[r * n + j] += inv_std[r] * (d - mean_d - xhat[r * n + j] * mean_dx);
                                      }
                                  }
                              }
                          });
}

// x·Φ(x) with the exact Gaussian CDF.
inline tensor gelu(const tensor& x) {
    static const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
    static const double inv_sqrt2pi = 1.0 / std::sqrt(2.0 * 3.14159265358979323846);
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * 0.5 * std::erfc(-x[i] * inv_sqrt2);
    return detail::finish(x.shape(), std::move(out), {x}, detail::needs_grad({&x}), [](node& self) {
        const auto& xv = self.parents[0]->value;
        auto g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double cdf = 0.5 * std::erfc(-xv[i] * inv_sqrt2);
            const double pdf = inv_sqrt2pi * std::exp(-0.5 * xv[i] * xv[i]);
            g[i] += self.grad[i] * (cdf + xv[i] * pdf);
        }
    });
}

// Replays the current thread's tape in reverse from a scalar loss, filling
// the gradients of every leaf that requires one. Clears the tape afterwards.
inline void backward(const tensor& loss) {
    auto& t = active_tape();
    if (loss.size() != 1) {
        t.clear();
        throw contract_error("backward: loss must be a scalar, got shape " + to_string(loss.shape()));
    }
    if (t.empty() || !loss.requires_grad()) {
        t.clear();
        throw contract_error("backward: nothing recorded for this loss");
    }
    auto root = loss.handle();
    root->grad.assign(1, 1.0);
    const auto& ops = t.ops();
    for (auto it = ops.rbegin(); it != ops.rend(); ++it) {
        node& n = **it;
        if (n.backward && !n.grad.empty()) n.backward(n);
    }
    t.clear();
}

}  // namespace massformer::ad
