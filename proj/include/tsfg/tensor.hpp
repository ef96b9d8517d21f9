#pragma once

// Dense float64 tensors with reverse-mode autodiff. Define-by-run: every op
// records its inputs and a backward closure; backward() walks the graph in
// reverse topological order. Rank 1/2 covers every model in this project.

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <unordered_set>
#include <vector>

#include "tsfg/common.hpp"

namespace tsfg::nn {

struct TensorNode;
using TensorNodePtr = std::shared_ptr<TensorNode>;

struct TensorNode {
    std::vector<std::size_t> shape;
    std::vector<double> data;
    std::vector<double> grad;  // allocated lazily, same length as data
    bool requires_grad = false;
    std::vector<TensorNodePtr> parents;
    std::function<void(TensorNode&)> backward_fn;  // accumulates into parents

    std::size_t size() const { return data.size(); }
    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
};

inline std::size_t shape_numel(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

inline std::string shape_str(const std::vector<std::size_t>& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(TensorNodePtr node) : node_(std::move(node)) {}

    static Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false) {
        auto n = std::make_shared<TensorNode>();
        n->shape = std::move(shape);
        n->data.assign(shape_numel(n->shape), 0.0);
        n->requires_grad = requires_grad;
        return Tensor(n);
    }

    static Tensor full(std::vector<std::size_t> shape, double v, bool requires_grad = false) {
        Tensor t = zeros(std::move(shape), requires_grad);
        std::fill(t.data().begin(), t.data().end(), v);
        return t;
    }

    static Tensor from_vector(std::vector<std::size_t> shape, std::vector<double> values,
                              bool requires_grad = false) {
        auto n = std::make_shared<TensorNode>();
        n->shape = std::move(shape);
        if (values.size() != shape_numel(n->shape)) {
            throw TsfgError("from_vector: " + std::to_string(values.size()) + " values for shape " +
                            shape_str(n->shape));
        }
        n->data = std::move(values);
        n->requires_grad = requires_grad;
        return Tensor(n);
    }

    static Tensor scalar(double v, bool requires_grad = false) {
        return from_vector({1}, {v}, requires_grad);
    }

    static Tensor randn(std::vector<std::size_t> shape, Rng& rng, double stddev = 1.0,
                        bool requires_grad = false) {
        Tensor t = zeros(std::move(shape), requires_grad);
        for (auto& v : t.data()) v = rng.normal(0.0, stddev);
        return t;
    }

    bool defined() const { return node_ != nullptr; }
    const std::vector<std::size_t>& shape() const { return node_->shape; }
    std::size_t size() const { return node_->size(); }
    std::size_t rows() const { return node_->shape.empty() ? 0 : node_->shape[0]; }
    std::size_t cols() const { return node_->shape.size() < 2 ? 1 : node_->shape[1]; }
    std::vector<double>& data() { return node_->data; }
    const std::vector<double>& data() const { return node_->data; }
    std::vector<double>& grad() {
        node_->ensure_grad();
        return node_->grad;
    }
    const std::vector<double>& grad() const {
        node_->ensure_grad();
        return node_->grad;
    }
    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool b) { node_->requires_grad = b; }
    TensorNodePtr node() const { return node_; }

    double item() const {
        if (size() != 1) throw TsfgError("item() on tensor of size " + std::to_string(size()));
        return node_->data[0];
    }

    double at(std::size_t r, std::size_t c) const { return node_->data[r * cols() + c]; }

    void zero_grad() {
        if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
    }

    // Same storage, cut from the graph; never receives gradient.
    Tensor detach() const {
        auto n = std::make_shared<TensorNode>();
        n->shape = node_->shape;
        n->data = node_->data;
        n->requires_grad = false;
        return Tensor(n);
    }

    // Gradient of `this` (scalar) w.r.t. every reachable tensor with
    // requires_grad. Leaf grads accumulate across repeated calls; callers
    // that want fresh gradients must zero them first. Interior grads are
    // scratch and reset per pass.
    void backward() const {
        if (size() != 1) throw TsfgError("backward() requires a scalar loss, got " + shape_str(shape()));
        std::vector<TensorNode*> order;
        std::unordered_set<TensorNode*> seen;
        topo(node_.get(), seen, order);
        for (TensorNode* n : order) {
            if (n->backward_fn && !n->grad.empty()) std::fill(n->grad.begin(), n->grad.end(), 0.0);
        }
        node_->ensure_grad();
        node_->grad[0] += 1.0;
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            TensorNode* n = *it;
            if (n->backward_fn) {
                for (auto& p : n->parents) p->ensure_grad();
                n->backward_fn(*n);
            }
        }
    }

private:
    static void topo(TensorNode* n, std::unordered_set<TensorNode*>& seen,
                     std::vector<TensorNode*>& order) {
        // Iterative DFS; graphs can be a few thousand nodes deep.
        struct Frame {
            TensorNode* node;
            std::size_t next_child;
        };
        std::vector<Frame> stack{{n, 0}};
        seen.insert(n);
        while (!stack.empty()) {
            Frame& f = stack.back();
            if (f.next_child < f.node->parents.size()) {
                TensorNode* child = f.node->parents[f.next_child++].get();
                if (!seen.count(child)) {
                    seen.insert(child);
                    stack.push_back({child, 0});
                }
            } else {
                order.push_back(f.node);
                stack.pop_back();
            }
        }
    }

    TensorNodePtr node_;
};

// Graph recording switch; forward passes under NoGradGuard build plain
// tensors without backward closures.
struct GradMode {
    static bool& enabled() {
        thread_local bool e = true;
        return e;
    }
};

struct NoGradGuard {
    NoGradGuard() : prev_(GradMode::enabled()) { GradMode::enabled() = false; }
    ~NoGradGuard() { GradMode::enabled() = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

namespace detail {

inline Tensor make_op(std::vector<std::size_t> shape, std::vector<Tensor> parents,
                      std::function<void(TensorNode&)> backward_fn) {
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(shape);
    n->data.assign(shape_numel(n->shape), 0.0);
    bool needs = false;
    if (GradMode::enabled()) {
        for (const auto& p : parents) needs = needs || p.requires_grad();
    }
    n->requires_grad = needs;
    if (needs) {
        for (const auto& p : parents) n->parents.push_back(p.node());
        n->backward_fn = std::move(backward_fn);
    }
    return Tensor(n);
}

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw TsfgError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                        shape_str(b.shape()));
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise arithmetic

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "add");
    Tensor out = detail::make_op(a.shape(), {a, b}, [pa = a.node(), pb = b.node()](TensorNode& n) {
        for (std::size_t i = 0; i < n.data.size(); ++i) {
            if (pa->requires_grad) pa->grad[i] += n.grad[i];
            if (pb->requires_grad) pb->grad[i] += n.grad[i];
        }
    });
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = a.data()[i] + b.data()[i];
    return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "sub");
    Tensor out = detail::make_op(a.shape(), {a, b}, [pa = a.node(), pb = b.node()](TensorNode& n) {
        for (std::size_t i = 0; i < n.data.size(); ++i) {
            if (pa->requires_grad) pa->grad[i] += n.grad[i];
            if (pb->requires_grad) pb->grad[i] -= n.grad[i];
        }
    });
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = a.data()[i] - b.data()[i];
    return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "mul");
    Tensor out = detail::make_op(a.shape(), {a, b}, [pa = a.node(), pb = b.node()](TensorNode& n) {
        for (std::size_t i = 0; i < n.data.size(); ++i) {
            if (pa->requires_grad) pa->grad[i] += n.grad[i] * pb->data[i];
            if (pb->requires_grad) pb->grad[i] += n.grad[i] * pa->data[i];
        }
    });
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
    return out;
}

inline Tensor div(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "div");
    Tensor out = detail::make_op(a.shape(), {a, b}, [pa = a.node(), pb = b.node()](TensorNode& n) {
        for (std::size_t i = 0; i < n.data.size(); ++i) {
            const double inv = 1.0 / pb->data[i];
            if (pa->requires_grad) pa->grad[i] += n.grad[i] * inv;
            if (pb->requires_grad) pb->grad[i] -= n.grad[i] * pa->data[i] * inv * inv;
        }
    });
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = a.data()[i] / b.data()[i];
    return out;
}

// Broadcast a length-n row vector over every row of an [m x n] matrix.
inline Tensor add_rowvec(const Tensor& a, const Tensor& v) {
    if (a.cols() != v.size()) {
        throw TsfgError("add_rowvec: " + shape_str(a.shape()) + " vs " + shape_str(v.shape()));
    }
    const std::size_t m = a.rows(), n = a.cols();
    Tensor out = detail::make_op(a.shape(), {a, v}, [pa = a.node(), pv = v.node(), m, n](TensorNode& node) {
        for (std::size_t r = 0; r < m; ++r) {
            for (std::size_t c = 0; c < n; ++c) {
                const double g = node.grad[r * n + c];
                if (pa->requires_grad) pa->grad[r * n + c] += g;
                if (pv->requires_grad) pv->grad[c] += g;
            }
        }
    });
    for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c) out.data()[r * n + c] = a.data()[r * n + c] + v.data()[c];
    return out;
}

inline Tensor mul_scalar(const Tensor& a, double s) {
    Tensor out = detail::make_op(a.shape(), {a}, [pa = a.node(), s](TensorNode& n) {
        for (std::size_t i = 0; i < n.data.size(); ++i) pa->grad[i] += n.grad[i] * s;
    });
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = a.data()[i] * s;
    return out;
}

inline Tensor add_scalar(const Tensor& a, double s) {
    Tensor out = detail::make_op(a.shape(), {a}, [pa = a.node()](TensorNode& n) {
        for (std::size_t i = 0; i < n.data.size(); ++i) pa->grad[i] += n.grad[i];
    });
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = a.data()[i] + s;
    return out;
}

inline Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0); }

inline Tensor exp_t(const Tensor& a) {
    Tensor out = detail::make_op(a.shape(), {a}, [pa = a.node()](TensorNode& n) {
        for (std::size_t i = 0; i < n.data.size(); ++i) pa->grad[i] += n.grad[i] * n.data[i];
    });
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = std::exp(a.data()[i]);
    return out;
}

inline Tensor ln(const Tensor& a) {
    Tensor out = detail::make_op(a.shape(), {a}, [pa = a.node()](TensorNode& n) {
        for (std::size_t i = 0; i < n.data.size(); ++i) pa->grad[i] += n.grad[i] / pa->data[i];
    });
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = std::log(a.data()[i]);
    return out;
}

inline Tensor relu(const Tensor& a) {
    Tensor out = detail::make_op(a.shape(), {a}, [pa = a.node()](TensorNode& n) {
        for (std::size_t i = 0; i < n.data.size(); ++i)
            if (pa->data[i] > 0.0) pa->grad[i] += n.grad[i];
    });
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = std::max(0.0, a.data()[i]);
    return out;
}

// Exact erf-based GELU.
inline Tensor gelu(const Tensor& a) {
    constexpr double kInvSqrt2 = 0.70710678118654752440;
    constexpr double kInvSqrt2Pi = 0.39894228040143267794;
    Tensor out = detail::make_op(a.shape(), {a}, [pa = a.node()](TensorNode& n) {
        for (std::size_t i = 0; i < n.data.size(); ++i) {
            const double x = pa->data[i];
            const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
            const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
            pa->grad[i] += n.grad[i] * (cdf + x * pdf);
        }
    });
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double x = a.data()[i];
        out.data()[i] = x * 0.5 * (1.0 + std::erf(x * kInvSqrt2));
    }
    return out;
}

// Elementwise min; gradient follows the selected branch (a wins ties).
inline Tensor min_elem(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "min_elem");
    Tensor out = detail::make_op(a.shape(), {a, b}, [pa = a.node(), pb = b.node()](TensorNode& n) {
        for (std::size_t i = 0; i < n.data.size(); ++i) {
            if (pa->data[i] <= pb->data[i]) {
                if (pa->requires_grad) pa->grad[i] += n.grad[i];
            } else if (pb->requires_grad) {
                pb->grad[i] += n.grad[i];
            }
        }
    });
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = std::min(a.data()[i], b.data()[i]);
    return out;
}

// Clamp to [lo, hi]; zero gradient outside the interval.
inline Tensor clip(const Tensor& a, double lo, double hi) {
    Tensor out = detail::make_op(a.shape(), {a}, [pa = a.node(), lo, hi](TensorNode& n) {
        for (std::size_t i = 0; i < n.data.size(); ++i)
            if (pa->data[i] >= lo && pa->data[i] <= hi) pa->grad[i] += n.grad[i];
    });
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = std::clamp(a.data()[i], lo, hi);
    return out;
}

// ---------------------------------------------------------------------------
// reductions and reshaping

inline Tensor sum(const Tensor& a) {
    Tensor out = detail::make_op({1}, {a}, [pa = a.node()](TensorNode& n) {
        for (std::size_t i = 0; i < pa->data.size(); ++i) pa->grad[i] += n.grad[0];
    });
    double s = 0.0;
    for (double v : a.data()) s += v;
    out.data()[0] = s;
    return out;
}

inline Tensor mean(const Tensor& a) {
    const double inv = 1.0 / static_cast<double>(a.size());
    Tensor out = detail::make_op({1}, {a}, [pa = a.node(), inv](TensorNode& n) {
        for (std::size_t i = 0; i < pa->data.size(); ++i) pa->grad[i] += n.grad[0] * inv;
    });
    double s = 0.0;
    for (double v : a.data()) s += v;
    out.data()[0] = s * inv;
    return out;
}

// Row sums of an [m x n] matrix -> [m].
inline Tensor sum_rows(const Tensor& a) {
    const std::size_t m = a.rows(), n = a.cols();
    Tensor out = detail::make_op({m}, {a}, [pa = a.node(), m, n](TensorNode& node) {
        for (std::size_t r = 0; r < m; ++r)
            for (std::size_t c = 0; c < n; ++c) pa->grad[r * n + c] += node.grad[r];
    });
    for (std::size_t r = 0; r < m; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < n; ++c) s += a.data()[r * n + c];
        out.data()[r] = s;
    }
    return out;
}

inline Tensor reshape(const Tensor& a, std::vector<std::size_t> new_shape) {
    if (shape_numel(new_shape) != a.size()) {
        throw TsfgError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(new_shape));
    }
    Tensor out = detail::make_op(new_shape, {a}, [pa = a.node()](TensorNode& n) {
        for (std::size_t i = 0; i < n.data.size(); ++i) pa->grad[i] += n.grad[i];
    });
    out.data() = a.data();
    return out;
}

inline Tensor transpose(const Tensor& a) {
    if (a.shape().size() != 2) throw TsfgError("transpose: expects rank-2, got " + shape_str(a.shape()));
    const std::size_t m = a.rows(), n = a.cols();
    Tensor out = detail::make_op({n, m}, {a}, [pa = a.node(), m, n](TensorNode& node) {
        for (std::size_t r = 0; r < m; ++r)
            for (std::size_t c = 0; c < n; ++c) pa->grad[r * n + c] += node.grad[c * m + r];
    });
    for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c) out.data()[c * m + r] = a.data()[r * n + c];
    return out;
}

inline Tensor slice_rows(const Tensor& a, std::size_t r0, std::size_t r1) {
    if (r1 > a.rows() || r0 > r1) throw TsfgError("slice_rows: bad range");
    const std::size_t n = a.cols();
    Tensor out = detail::make_op({r1 - r0, n}, {a}, [pa = a.node(), r0, n](TensorNode& node) {
        for (std::size_t i = 0; i < node.data.size(); ++i) pa->grad[r0 * n + i] += node.grad[i];
    });
    std::copy(a.data().begin() + static_cast<std::ptrdiff_t>(r0 * n),
              a.data().begin() + static_cast<std::ptrdiff_t>(r1 * n), out.data().begin());
    return out;
}

inline Tensor slice_cols(const Tensor& a, std::size_t c0, std::size_t c1) {
    if (c1 > a.cols() || c0 > c1) throw TsfgError("slice_cols: bad range");
    const std::size_t m = a.rows(), n = a.cols(), w = c1 - c0;
    Tensor out = detail::make_op({m, w}, {a}, [pa = a.node(), m, n, c0, w](TensorNode& node) {
        for (std::size_t r = 0; r < m; ++r)
            for (std::size_t c = 0; c < w; ++c) pa->grad[r * n + c0 + c] += node.grad[r * w + c];
    });
    for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < w; ++c) out.data()[r * w + c] = a.data()[r * n + c0 + c];
    return out;
}

inline Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw TsfgError("concat_rows: empty input");
    const std::size_t n = parts[0].cols();
    std::size_t m = 0;
    for (const auto& p : parts) {
        if (p.cols() != n) throw TsfgError("concat_rows: column mismatch");
        m += p.rows();
    }
    std::vector<std::size_t> row_offsets;
    std::size_t off = 0;
    for (const auto& p : parts) {
        row_offsets.push_back(off);
        off += p.rows();
    }
    Tensor out = detail::make_op({m, n}, parts, [row_offsets, n](TensorNode& node) {
        for (std::size_t k = 0; k < node.parents.size(); ++k) {
            auto& p = node.parents[k];
            if (!p->requires_grad) continue;
            const std::size_t base = row_offsets[k] * n;
            for (std::size_t i = 0; i < p->data.size(); ++i) p->grad[i] += node.grad[base + i];
        }
    });
    for (std::size_t k = 0; k < parts.size(); ++k) {
        std::copy(parts[k].data().begin(), parts[k].data().end(),
                  out.data().begin() + static_cast<std::ptrdiff_t>(row_offsets[k] * n));
    }
    return out;
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw TsfgError("concat_cols: empty input");
    const std::size_t m = parts[0].rows();
    std::size_t n = 0;
    std::vector<std::size_t> col_offsets;
    for (const auto& p : parts) {
        if (p.rows() != m) throw TsfgError("concat_cols: row mismatch");
        col_offsets.push_back(n);
        n += p.cols();
    }
    Tensor out = detail::make_op({m, n}, parts, [col_offsets, m, n](TensorNode& node) {
        for (std::size_t k = 0; k < node.parents.size(); ++k) {
            auto& p = node.parents[k];
            if (!p->requires_grad) continue;
            const std::size_t w = p->shape[1];
            for (std::size_t r = 0; r < m; ++r)
                for (std::size_t c = 0; c < w; ++c)
                    p->grad[r * w + c] += node.grad[r * n + col_offsets[k] + c];
        }
    });
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const std::size_t w = parts[k].cols();
        for (std::size_t r = 0; r < m; ++r)
            for (std::size_t c = 0; c < w; ++c)
                out.data()[r * n + col_offsets[k] + c] = parts[k].data()[r * w + c];
    }
    return out;
}

// ---------------------------------------------------------------------------
// matmul

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2 || a.cols() != b.rows()) {
        throw TsfgError("matmul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    Tensor out = detail::make_op({m, n}, {a, b}, [pa = a.node(), pb = b.node(), m, k, n](TensorNode& node) {
        if (pa->requires_grad) {
            // dA = dOut * B^T
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) {
                    const double g = node.grad[i * n + j];
                    if (g == 0.0) continue;
                    const double* brow = &pb->data[j];
                    for (std::size_t t = 0; t < k; ++t) pa->grad[i * k + t] += g * brow[t * n];
                }
        }
        if (pb->requires_grad) {
            // dB = A^T * dOut
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t t = 0; t < k; ++t) {
                    const double av = pa->data[i * k + t];
                    if (av == 0.0) continue;
                    for (std::size_t j = 0; j < n; ++j) pb->grad[t * n + j] += av * node.grad[i * n + j];
                }
        }
    });
    // ikj order for contiguous inner loops
    for (std::size_t i = 0; i < m; ++i) {
        double* orow = &out.data()[i * n];
        for (std::size_t t = 0; t < k; ++t) {
            const double av = a.data()[i * k + t];
            if (av == 0.0) continue;
            const double* brow = &b.data()[t * n];
            for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// lookup / gather

inline Tensor embedding_lookup(const Tensor& table, const std::vector<std::size_t>& indices) {
    const std::size_t v = table.rows(), d = table.cols(), L = indices.size();
    for (auto i : indices)
        if (i >= v) throw TsfgError("embedding_lookup: index " + std::to_string(i) + " >= " + std::to_string(v));
    Tensor out = detail::make_op({L, d}, {table}, [pt = table.node(), indices, d](TensorNode& node) {
        for (std::size_t r = 0; r < indices.size(); ++r)
            for (std::size_t c = 0; c < d; ++c) pt->grad[indices[r] * d + c] += node.grad[r * d + c];
    });
    for (std::size_t r = 0; r < L; ++r)
        std::copy(table.data().begin() + static_cast<std::ptrdiff_t>(indices[r] * d),
                  table.data().begin() + static_cast<std::ptrdiff_t>((indices[r] + 1) * d),
                  out.data().begin() + static_cast<std::ptrdiff_t>(r * d));
    return out;
}

// out[r] = a[r, idx[r]]
inline Tensor gather_rows(const Tensor& a, const std::vector<std::size_t>& idx) {
    const std::size_t m = a.rows(), n = a.cols();
    if (idx.size() != m) throw TsfgError("gather_rows: index count != rows");
    for (auto c : idx)
        if (c >= n) throw TsfgError("gather_rows: column index out of range");
    Tensor out = detail::make_op({m}, {a}, [pa = a.node(), idx, n](TensorNode& node) {
        for (std::size_t r = 0; r < idx.size(); ++r) pa->grad[r * n + idx[r]] += node.grad[r];
    });
    for (std::size_t r = 0; r < m; ++r) out.data()[r] = a.data()[r * n + idx[r]];
    return out;
}

// ---------------------------------------------------------------------------
// fused row-wise softmax family
//
// `mask` (optional, not differentiated) is added to logits/T before the
// softmax; use large negative entries to exclude positions.

namespace detail {

inline void softmax_row(const double* x, const double* mask, std::size_t n, double inv_t, double* out) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
        const double v = x[i] * inv_t + (mask ? mask[i] : 0.0);
        out[i] = v;
        mx = std::max(mx, v);
    }
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = std::exp(out[i] - mx);
        s += out[i];
    }
    const double inv = 1.0 / s;
    for (std::size_t i = 0; i < n; ++i) out[i] *= inv;
}

}  // namespace detail

inline Tensor softmax_rows(const Tensor& a, double temperature = 1.0, const Tensor& mask = Tensor()) {
    if (temperature <= 0.0) throw TsfgError("softmax_rows: temperature must be positive");
    if (mask.defined()) detail::check_same_shape(a, mask, "softmax_rows mask");
    const std::size_t m = a.rows(), n = a.cols();
    const double inv_t = 1.0 / temperature;
    Tensor out = detail::make_op(a.shape(), {a}, [pa = a.node(), m, n, inv_t](TensorNode& node) {
        // dL/dx_j = (p_j / T) * (g_j - sum_i g_i p_i) per row
        for (std::size_t r = 0; r < m; ++r) {
            const double* p = &node.data[r * n];
            const double* g = &node.grad[r * n];
            double dot = 0.0;
            for (std::size_t i = 0; i < n; ++i) dot += g[i] * p[i];
            for (std::size_t j = 0; j < n; ++j) pa->grad[r * n + j] += p[j] * inv_t * (g[j] - dot);
        }
    });
    for (std::size_t r = 0; r < m; ++r) {
        detail::softmax_row(&a.data()[r * n], mask.defined() ? &mask.data()[r * n] : nullptr, n, inv_t,
                            &out.data()[r * n]);
    }
    return out;
}

inline Tensor log_softmax_rows(const Tensor& a, double temperature = 1.0, const Tensor& mask = Tensor()) {
    if (temperature <= 0.0) throw TsfgError("log_softmax_rows: temperature must be positive");
    if (mask.defined()) detail::check_same_shape(a, mask, "log_softmax_rows mask");
    const std::size_t m = a.rows(), n = a.cols();
    const double inv_t = 1.0 / temperature;
    Tensor out = detail::make_op(a.shape(), {a}, [pa = a.node(), m, n, inv_t](TensorNode& node) {
        // dL/dx_j = (1/T) * (g_j - p_j * sum_i g_i) per row
        for (std::size_t r = 0; r < m; ++r) {
            const double* l = &node.data[r * n];
            const double* g = &node.grad[r * n];
            double gsum = 0.0;
            for (std::size_t i = 0; i < n; ++i) gsum += g[i];
            for (std::size_t j = 0; j < n; ++j)
                pa->grad[r * n + j] += inv_t * (g[j] - std::exp(l[j]) * gsum);
        }
    });
    for (std::size_t r = 0; r < m; ++r) {
        const double* x = &a.data()[r * n];
        const double* mk = mask.defined() ? &mask.data()[r * n] : nullptr;
        double* o = &out.data()[r * n];
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < n; ++i) {
            o[i] = x[i] * inv_t + (mk ? mk[i] : 0.0);
            mx = std::max(mx, o[i]);
        }
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += std::exp(o[i] - mx);
        const double lse = mx + std::log(s);
        for (std::size_t i = 0; i < n; ++i) o[i] -= lse;
    }
    return out;
}

// Per-row entropy -sum_j p_j log p_j computed from log-probabilities.
inline Tensor entropy_rows(const Tensor& log_probs) {
    const std::size_t m = log_probs.rows(), n = log_probs.cols();
    Tensor out = detail::make_op({m}, {log_probs}, [pl = log_probs.node(), m, n](TensorNode& node) {
        // dH/dl_j = -p_j (1 + l_j); chain rule through the log-softmax node
        // handles the coupling between entries.
        for (std::size_t r = 0; r < m; ++r) {
            const double g = node.grad[r];
            for (std::size_t j = 0; j < n; ++j) {
                const double l = pl->data[r * n + j];
                pl->grad[r * n + j] += g * (-std::exp(l) * (1.0 + l));
            }
        }
    });
    for (std::size_t r = 0; r < m; ++r) {
        double h = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            const double l = log_probs.data()[r * n + j];
            h -= std::exp(l) * l;
        }
        out.data()[r] = h;
    }
    return out;
}

// ---------------------------------------------------------------------------
// layer norm over the last axis, with affine parameters

inline Tensor layer_norm_rows(const Tensor& a, const Tensor& gamma, const Tensor& beta,
                              double eps = 1e-5) {
    const std::size_t m = a.rows(), n = a.cols();
    if (gamma.size() != n || beta.size() != n) throw TsfgError("layer_norm_rows: affine size mismatch");
    auto stats = std::make_shared<std::vector<double>>(2 * m);  // mean, inv_std per row
    Tensor out = detail::make_op(
        a.shape(), {a, gamma, beta},
        [pa = a.node(), pg = gamma.node(), pb = beta.node(), stats, m, n](TensorNode& node) {
            for (std::size_t r = 0; r < m; ++r) {
                const double mu = (*stats)[2 * r];
                const double inv_std = (*stats)[2 * r + 1];
                const double* x = &pa->data[r * n];
                const double* g = &node.grad[r * n];
                double sum_g_gamma = 0.0, sum_g_gamma_xhat = 0.0;
                for (std::size_t j = 0; j < n; ++j) {
                    const double xhat = (x[j] - mu) * inv_std;
                    const double gg = g[j] * pg->data[j];
                    sum_g_gamma += gg;
                    sum_g_gamma_xhat += gg * xhat;
                    if (pg->requires_grad) pg->grad[j] += g[j] * xhat;
                    if (pb->requires_grad) pb->grad[j] += g[j];
                }
                if (pa->requires_grad) {
                    const double inv_n = 1.0 / static_cast<double>(n);
                    for (std::size_t j = 0; j < n; ++j) {
                        const double xhat = (x[j] - mu) * inv_std;
                        pa->grad[r * n + j] +=
                            inv_std * (g[j] * pg->data[j] - inv_n * sum_g_gamma - inv_n * xhat * sum_g_gamma_xhat);
                    }
                }
            }
        });
    for (std::size_t r = 0; r < m; ++r) {
        const double* x = &a.data()[r * n];
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += x[j];
        const double mu = s / static_cast<double>(n);
        double var = 0.0;
        for (std::size_t j = 0; j < n; ++j) var += (x[j] - mu) * (x[j] - mu);
        var /= static_cast<double>(n);
        const double inv_std = 1.0 / std::sqrt(var + eps);
        (*stats)[2 * r] = mu;
        (*stats)[2 * r + 1] = inv_std;
        for (std::size_t j = 0; j < n; ++j)
            out.data()[r * n + j] = (x[j] - mu) * inv_std * gamma.data()[j] + beta.data()[j];
    }
    return out;
}

// Inverted dropout; identity when train is false.
inline Tensor dropout(const Tensor& a, double p, bool train, Rng& rng) {
    if (!train || p <= 0.0) return a;
    if (p >= 1.0) throw TsfgError("dropout: p must be < 1");
    const double scale = 1.0 / (1.0 - p);
    auto keep = std::make_shared<std::vector<double>>(a.size());
    for (auto& k : *keep) k = rng.uniform01() >= p ? scale : 0.0;
    Tensor out = detail::make_op(a.shape(), {a}, [pa = a.node(), keep](TensorNode& n) {
        for (std::size_t i = 0; i < n.data.size(); ++i) pa->grad[i] += n.grad[i] * (*keep)[i];
    });
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = a.data()[i] * (*keep)[i];
    return out;
}

}  // namespace tsfg::nn
