#pragma once

// Dense float64 tensors with reverse-mode automatic differentiation.
//
// A Tensor is a cheap handle onto a shared node. Operations on tensors that
// require gradients record their parents and a backward closure; calling
// backward() on a scalar result walks the recorded graph once in reverse
// topological order and accumulates into leaf gradients.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "ttadrift/errors.hpp"

namespace ttadrift {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;
    bool requires_grad = false;
    bool is_leaf = true;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
};

} // namespace detail

class Tensor {
public:
    Tensor() : node_(std::make_shared<detail::Node>()) {}

    Tensor(Shape shape, std::vector<double> data, bool requires_grad = false)
        : node_(std::make_shared<detail::Node>()) {
        if (shape_numel(shape) != data.size()) {
            throw DimensionError("tensor data length " + std::to_string(data.size()) +
                                 " does not match shape " + shape_str(shape));
        }
        node_->shape = std::move(shape);
        node_->data = std::move(data);
        node_->requires_grad = requires_grad;
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        const auto n = shape_numel(shape);
        return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
    }

    static Tensor full(Shape shape, double value, bool requires_grad = false) {
        const auto n = shape_numel(shape);
        return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
    }

    static Tensor scalar(double value, bool requires_grad = false) {
        return Tensor({}, {value}, requires_grad);
    }

    static Tensor vector(std::vector<double> values, bool requires_grad = false) {
        const auto n = values.size();
        return Tensor({n}, std::move(values), requires_grad);
    }

    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values,
                         bool requires_grad = false) {
        return Tensor({rows, cols}, std::move(values), requires_grad);
    }

    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t numel() const { return node_->data.size(); }
    std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
    std::size_t rows() const { return rank() == 2 ? dim(0) : 1; }
    std::size_t cols() const { return rank() == 2 ? dim(1) : numel(); }

    std::span<double> data() { return node_->data; }
    std::span<const double> data() const { return node_->data; }
    const std::vector<double>& values() const { return node_->data; }

    double item() const {
        if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
        return node_->data[0];
    }
    double operator[](std::size_t i) const { return node_->data[i]; }
    double at(std::size_t r, std::size_t c) const { return node_->data[r * cols() + c]; }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool on) {
        if (!node_->is_leaf) throw ContractError("requires_grad can only be toggled on leaves");
        node_->requires_grad = on;
        if (!on) node_->grad.clear();
    }
    bool is_leaf() const { return node_->is_leaf; }

    bool has_grad() const { return !node_->grad.empty(); }
    std::span<const double> grad() const { return node_->grad; }
    std::span<double> mutable_grad() {
        node_->ensure_grad();
        return node_->grad;
    }
    void zero_grad() { node_->grad.clear(); }

    // A constant leaf holding a copy of the values; gradients never flow back.
    Tensor detach() const { return Tensor(shape(), node_->data, false); }

    bool same_node(const Tensor& other) const { return node_ == other.node_; }

    // Internal: operations build result nodes through this interface.
    const std::shared_ptr<detail::Node>& node() const { return node_; }
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

private:
    std::shared_ptr<detail::Node> node_;
};

namespace detail {

// Creates a result node. Parents are recorded only when at least one of them
// requires a gradient; otherwise the result is a constant leaf.
inline Tensor make_result(Shape shape, std::vector<double> data, std::vector<Tensor> inputs,
                          std::function<void(Node&)> backward) {
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    if (any) {
        node->requires_grad = true;
        node->is_leaf = false;
        for (const auto& in : inputs) node->parents.push_back(in.node());
        node->backward = std::move(backward);
    }
    return Tensor(std::move(node));
}

// Accumulation target for parent i, or nullptr when that parent is constant.
inline double* grad_of(Node& self, std::size_t i) {
    auto& p = *self.parents[i];
    if (!p.requires_grad) return nullptr;
    p.ensure_grad();
    return p.grad.data();
}

inline void require_rank(const Tensor& t, std::size_t rank, const char* op) {
    if (t.rank() != rank) {
        throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                             " tensor, got " + shape_str(t.shape()));
    }
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
    }
}

} // namespace detail

// Topologically ordered record of the differentiable operations reachable
// from a root. Parents always precede children.
class Graph {
public:
    explicit Graph(const Tensor& root) {
        std::unordered_set<const detail::Node*> seen;
        // Iterative post-order DFS so deep graphs cannot overflow the stack.
        std::vector<std::pair<detail::Node*, std::size_t>> stack;
        if (root.requires_grad()) stack.emplace_back(root.node().get(), 0);
        if (!stack.empty()) seen.insert(stack.back().first);
        while (!stack.empty()) {
            auto& [node, next] = stack.back();
            if (next < node->parents.size()) {
                detail::Node* parent = node->parents[next++].get();
                if (parent->requires_grad && seen.insert(parent).second) {
                    stack.emplace_back(parent, 0);
                }
            } else {
                order_.push_back(node);
                stack.pop_back();
            }
        }
    }

    std::size_t size() const { return order_.size(); }
    std::span<detail::Node* const> order() const { return order_; }

private:
    std::vector<detail::Node*> order_;
};

// Accumulates d(loss)/d(leaf) into every reachable leaf that requires grad.
inline void backward(const Tensor& loss) {
    if (loss.numel() != 1) {
        throw ContractError("backward requires a scalar root, got shape " + shape_str(loss.shape()));
    }
    if (!loss.requires_grad()) return;
    Graph graph(loss);
    auto order = graph.order();
    for (auto* node : order) {
        if (!node->is_leaf) node->grad.assign(node->data.size(), 0.0);
    }
    auto* root = order.back();
    root->ensure_grad();
    root->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::Node* node = *it;
        if (!node->is_leaf && node->backward) node->backward(*node);
    }
    // Interior buffers are scratch; only leaves keep their gradients.
    for (auto* node : order) {
        if (!node->is_leaf) {
            node->grad.clear();
            node->grad.shrink_to_fit();
        }
    }
}

// ---------------------------------------------------------------------------
// Elementwise arithmetic

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "add");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
    return detail::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
        for (std::size_t p = 0; p < 2; ++p) {
            if (double* g = detail::grad_of(self, p)) {
                for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
            }
        }
    });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "sub");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
    return detail::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
        if (double* g = detail::grad_of(self, 0)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
        }
        if (double* g = detail::grad_of(self, 1)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
        }
    });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "mul");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
    return detail::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
        const auto& av = self.parents[0]->data;
        const auto& bv = self.parents[1]->data;
        if (double* g = detail::grad_of(self, 0)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * bv[i];
        }
        if (double* g = detail::grad_of(self, 1)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * av[i];
        }
    });
}

// scale * a + shift
inline Tensor affine(const Tensor& a, double scale, double shift = 0.0) {
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = scale * a[i] + shift;
    return detail::make_result(a.shape(), std::move(out), {a}, [scale](detail::Node& self) {
        if (double* g = detail::grad_of(self, 0)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += scale * self.grad[i];
        }
    });
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(double s, const Tensor& a) { return affine(a, s); }
inline Tensor operator*(const Tensor& a, double s) { return affine(a, s); }
inline Tensor operator+(const Tensor& a, double s) { return affine(a, 1.0, s); }
inline Tensor operator-(double s, const Tensor& a) { return affine(a, -1.0, s); }
inline Tensor operator-(const Tensor& a) { return affine(a, -1.0); }

// ---------------------------------------------------------------------------
// Reductions

inline Tensor sum(const Tensor& a) {
    double total = 0.0;
    for (double v : a.data()) total += v;
    return detail::make_result({}, {total}, {a}, [](detail::Node& self) {
        if (double* g = detail::grad_of(self, 0)) {
            const std::size_t n = self.parents[0]->data.size();
            for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[0];
        }
    });
}

inline Tensor mean(const Tensor& a) {
    if (a.numel() == 0) throw ContractError("mean of empty tensor");
    return affine(sum(a), 1.0 / static_cast<double>(a.numel()));
}

inline Tensor dot(const Tensor& a, const Tensor& b) { return sum(mul(a, b)); }

// Adds a list of same-shape tensors.
inline Tensor add_n(std::span<const Tensor> terms) {
    if (terms.empty()) throw ContractError("add_n of empty list");
    Tensor acc = terms[0];
    for (std::size_t i = 1; i < terms.size(); ++i) acc = add(acc, terms[i]);
    return acc;
}

// ---------------------------------------------------------------------------
// Linear algebra

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()));
    }
    const std::size_t m = a.dim(0), n = a.dim(1), p = b.dim(1);
    std::vector<double> out(m * p, 0.0);
    const auto av = a.data();
    const auto bv = b.data();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t k = 0; k < n; ++k) {
            const double aik = av[i * n + k];
            for (std::size_t j = 0; j < p; ++j) out[i * p + j] += aik * bv[k * p + j];
        }
    }
    return detail::make_result({m, p}, std::move(out), {a, b}, [m, n, p](detail::Node& self) {
        const auto& av = self.parents[0]->data;
        const auto& bv = self.parents[1]->data;
        const auto& g = self.grad;
        if (double* ga = detail::grad_of(self, 0)) {
            // dA = G * B^T
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t k = 0; k < n; ++k) {
                    double acc = 0.0;
                    for (std::size_t j = 0; j < p; ++j) acc += g[i * p + j] * bv[k * p + j];
                    ga[i * n + k] += acc;
                }
            }
        }
        if (double* gb = detail::grad_of(self, 1)) {
            // dB = A^T * G
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t k = 0; k < n; ++k) {
                    const double aik = av[i * n + k];
                    for (std::size_t j = 0; j < p; ++j) gb[k * p + j] += aik * g[i * p + j];
                }
            }
        }
    });
}

// x[b x d] + v[d] broadcast over rows.
inline Tensor add_rowwise(const Tensor& x, const Tensor& v) {
    detail::require_rank(x, 2, "add_rowwise");
    if (v.numel() != x.dim(1)) {
        throw DimensionError("add_rowwise: row vector " + shape_str(v.shape()) +
                             " does not match " + shape_str(x.shape()));
    }
    const std::size_t b = x.dim(0), d = x.dim(1);
    std::vector<double> out(b * d);
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < d; ++j) out[i * d + j] = x[i * d + j] + v[j];
    return detail::make_result(x.shape(), std::move(out), {x, v}, [b, d](detail::Node& self) {
        if (double* g = detail::grad_of(self, 0)) {
            for (std::size_t i = 0; i < b * d; ++i) g[i] += self.grad[i];
        }
        if (double* g = detail::grad_of(self, 1)) {
            for (std::size_t i = 0; i < b; ++i)
                for (std::size_t j = 0; j < d; ++j) g[j] += self.grad[i * d + j];
        }
    });
}

// x[b x d] scaled row-by-row: out[i, :] = v[i] * x[i, :].
inline Tensor scale_rows(const Tensor& x, const Tensor& v) {
    detail::require_rank(x, 2, "scale_rows");
    if (v.numel() != x.dim(0)) {
        throw DimensionError("scale_rows: " + shape_str(v.shape()) + " vs " + shape_str(x.shape()));
    }
    const std::size_t b = x.dim(0), d = x.dim(1);
    std::vector<double> out(b * d);
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < d; ++j) out[i * d + j] = v[i] * x[i * d + j];
    return detail::make_result(x.shape(), std::move(out), {x, v}, [b, d](detail::Node& self) {
        const auto& xv = self.parents[0]->data;
        const auto& vv = self.parents[1]->data;
        if (double* g = detail::grad_of(self, 0)) {
            for (std::size_t i = 0; i < b; ++i)
                for (std::size_t j = 0; j < d; ++j) g[i * d + j] += vv[i] * self.grad[i * d + j];
        }
        if (double* g = detail::grad_of(self, 1)) {
            for (std::size_t i = 0; i < b; ++i) {
                double acc = 0.0;
                for (std::size_t j = 0; j < d; ++j) acc += xv[i * d + j] * self.grad[i * d + j];
                g[i] += acc;
            }
        }
    });
}

// Per-row inner products of two b x d matrices, returned as a length-b vector.
inline Tensor rowwise_dot(const Tensor& a, const Tensor& b) {
    detail::require_rank(a, 2, "rowwise_dot");
    detail::require_same_shape(a, b, "rowwise_dot");
    const std::size_t n = a.dim(0), d = a.dim(1);
    std::vector<double> out(n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) out[i] += a[i * d + j] * b[i * d + j];
    return detail::make_result({n}, std::move(out), {a, b}, [n, d](detail::Node& self) {
        const auto& av = self.parents[0]->data;
        const auto& bv = self.parents[1]->data;
        if (double* g = detail::grad_of(self, 0)) {
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < d; ++j) g[i * d + j] += self.grad[i] * bv[i * d + j];
        }
        if (double* g = detail::grad_of(self, 1)) {
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < d; ++j) g[i * d + j] += self.grad[i] * av[i * d + j];
        }
    });
}

// ---------------------------------------------------------------------------
// Indexing and layout

// Rows of x selected by index, in the given order (duplicates allowed).
inline Tensor gather_rows(const Tensor& x, std::vector<std::size_t> index) {
    detail::require_rank(x, 2, "gather_rows");
    const std::size_t d = x.dim(1);
    std::vector<double> out;
    out.reserve(index.size() * d);
    for (auto r : index) {
        if (r >= x.dim(0)) throw DimensionError("gather_rows: row index out of range");
        out.insert(out.end(), x.data().begin() + r * d, x.data().begin() + (r + 1) * d);
    }
    const std::size_t n = index.size();
    return detail::make_result({n, d}, std::move(out), {x},
                               [index = std::move(index), d](detail::Node& self) {
                                   if (double* g = detail::grad_of(self, 0)) {
                                       for (std::size_t i = 0; i < index.size(); ++i)
                                           for (std::size_t j = 0; j < d; ++j)
                                               g[index[i] * d + j] += self.grad[i * d + j];
                                   }
                               });
}

inline Tensor row(const Tensor& x, std::size_t r) {
    auto picked = gather_rows(x, {r});
    const std::size_t d = x.dim(1);
    // Reshape [1 x d] -> [d] without copying gradients twice.
    return detail::make_result({d}, picked.values(), {picked}, [](detail::Node& self) {
        if (double* g = detail::grad_of(self, 0)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
        }
    });
}

// One entry per row: out[i] = x[i, index[i]].
inline Tensor pick(const Tensor& x, std::vector<std::size_t> index) {
    detail::require_rank(x, 2, "pick");
    const std::size_t n = x.dim(0), c = x.dim(1);
    if (index.size() != n) throw DimensionError("pick: index length does not match rows");
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (index[i] >= c) throw DimensionError("pick: column index out of range");
        out[i] = x[i * c + index[i]];
    }
    return detail::make_result({n}, std::move(out), {x},
                               [index = std::move(index), c](detail::Node& self) {
                                   if (double* g = detail::grad_of(self, 0)) {
                                       for (std::size_t i = 0; i < index.size(); ++i)
                                           g[i * c + index[i]] += self.grad[i];
                                   }
                               });
}

// Column-mean of x: [n x d] -> [d].
inline Tensor mean_rows(const Tensor& x) {
    detail::require_rank(x, 2, "mean_rows");
    const std::size_t n = x.dim(0), d = x.dim(1);
    if (n == 0) throw ContractError("mean_rows of empty matrix");
    std::vector<double> out(d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) out[j] += x[i * d + j];
    const double inv = 1.0 / static_cast<double>(n);
    for (auto& v : out) v *= inv;
    return detail::make_result({d}, std::move(out), {x}, [n, d, inv](detail::Node& self) {
        if (double* g = detail::grad_of(self, 0)) {
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < d; ++j) g[i * d + j] += inv * self.grad[j];
        }
    });
}

// Stacks equal-length vectors as the columns of an [n x k] matrix.
inline Tensor stack_columns(std::span<const Tensor> columns) {
    if (columns.empty()) throw ContractError("stack_columns of empty list");
    const std::size_t n = columns[0].numel(), k = columns.size();
    std::vector<double> out(n * k);
    for (std::size_t c = 0; c < k; ++c) {
        if (columns[c].numel() != n) throw DimensionError("stack_columns: ragged columns");
        for (std::size_t i = 0; i < n; ++i) out[i * k + c] = columns[c][i];
    }
    return detail::make_result({n, k}, std::move(out), {columns.begin(), columns.end()},
                               [n, k](detail::Node& self) {
                                   for (std::size_t c = 0; c < k; ++c) {
                                       if (double* g = detail::grad_of(self, c)) {
                                           for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[i * k + c];
                                       }
                                   }
                               });
}

inline Tensor column(const Tensor& x, std::size_t c) {
    detail::require_rank(x, 2, "column");
    const std::size_t n = x.dim(0), k = x.dim(1);
    if (c >= k) throw DimensionError("column index out of range");
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = x[i * k + c];
    return detail::make_result({n}, std::move(out), {x}, [n, k, c](detail::Node& self) {
        if (double* g = detail::grad_of(self, 0)) {
            for (std::size_t i = 0; i < n; ++i) g[i * k + c] += self.grad[i];
        }
    });
}

// ---------------------------------------------------------------------------
// Nonlinearities

// Exact GELU: x * Phi(x).
inline Tensor gelu(const Tensor& x) {
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    std::vector<double> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = x[i] * 0.5 * (1.0 + std::erf(x[i] * inv_sqrt2));
    }
    return detail::make_result(x.shape(), std::move(out), {x}, [](detail::Node& self) {
        constexpr double inv_sqrt2 = 0.70710678118654752440;
        constexpr double inv_sqrt_2pi = 0.39894228040143267794;
        if (double* g = detail::grad_of(self, 0)) {
            const auto& xv = self.parents[0]->data;
            for (std::size_t i = 0; i < xv.size(); ++i) {
                const double cdf = 0.5 * (1.0 + std::erf(xv[i] * inv_sqrt2));
                const double pdf = inv_sqrt_2pi * std::exp(-0.5 * xv[i] * xv[i]);
                g[i] += self.grad[i] * (cdf + xv[i] * pdf);
            }
        }
    });
}

// log(max(x, floor)); the gradient is zero where the clamp is active.
inline Tensor log_clamped(const Tensor& x, double floor = 1e-12) {
    std::vector<double> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(std::max(x[i], floor));
    return detail::make_result(x.shape(), std::move(out), {x}, [floor](detail::Node& self) {
        if (double* g = detail::grad_of(self, 0)) {
            const auto& xv = self.parents[0]->data;
            for (std::size_t i = 0; i < xv.size(); ++i) {
                if (xv[i] > floor) g[i] += self.grad[i] / xv[i];
            }
        }
    });
}

namespace detail {

inline void softmax_inplace(std::span<double> v, double beta) {
    double peak = -INFINITY;
    for (double x : v) peak = std::max(peak, beta * x);
    double total = 0.0;
    for (double& x : v) {
        x = std::exp(beta * x - peak);
        total += x;
    }
    for (double& x : v) x /= total;
}

} // namespace detail

// softmax(beta * x) over a vector. beta acts as an inverse temperature;
// beta = 0 yields the uniform distribution.
inline Tensor softmax(const Tensor& x, double beta = 1.0) {
    if (x.numel() == 0) throw DomainError("softmax of empty input");
    if (!std::isfinite(beta)) throw DomainError("softmax: non-finite temperature multiplier");
    std::vector<double> out(x.values());
    detail::softmax_inplace(out, beta);
    return detail::make_result(x.shape(), std::move(out), {x}, [beta](detail::Node& self) {
        if (double* g = detail::grad_of(self, 0)) {
            const auto& y = self.data;
            double inner = 0.0;
            for (std::size_t i = 0; i < y.size(); ++i) inner += self.grad[i] * y[i];
            for (std::size_t i = 0; i < y.size(); ++i) g[i] += beta * y[i] * (self.grad[i] - inner);
        }
    });
}

// Independent softmax over each row of an [n x c] matrix.
inline Tensor row_softmax(const Tensor& x) {
    detail::require_rank(x, 2, "row_softmax");
    const std::size_t n = x.dim(0), c = x.dim(1);
    if (c == 0) throw DomainError("row_softmax of empty rows");
    std::vector<double> out(x.values());
    for (std::size_t i = 0; i < n; ++i) detail::softmax_inplace({out.data() + i * c, c}, 1.0);
    return detail::make_result(x.shape(), std::move(out), {x}, [n, c](detail::Node& self) {
        if (double* g = detail::grad_of(self, 0)) {
            const auto& y = self.data;
            for (std::size_t i = 0; i < n; ++i) {
                double inner = 0.0;
                for (std::size_t j = 0; j < c; ++j) inner += self.grad[i * c + j] * y[i * c + j];
                for (std::size_t j = 0; j < c; ++j)
                    g[i * c + j] += y[i * c + j] * (self.grad[i * c + j] - inner);
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Similarity

namespace detail {

inline double norm2(std::span<const double> v) {
    double acc = 0.0;
    for (double x : v) acc += x * x;
    return std::sqrt(acc);
}

// Adds d cos(a, b) / d a scaled by upstream into ga.
inline void cosine_grad(std::span<const double> a, std::span<const double> b, double na, double nb,
                        double cosv, double upstream, double* ga) {
    for (std::size_t j = 0; j < a.size(); ++j) {
        ga[j] += upstream * (b[j] / (na * nb) - cosv * a[j] / (na * na));
    }
}

} // namespace detail

// Cosine similarity of two vectors; gradients flow to both operands.
inline Tensor cosine_sim(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "cosine_sim");
    const double na = detail::norm2(a.data());
    const double nb = detail::norm2(b.data());
    if (na == 0.0 || nb == 0.0) throw DegenerateError("cosine_sim: zero-norm operand");
    double d = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) d += a[i] * b[i];
    const double cosv = std::clamp(d / (na * nb), -1.0, 1.0);
    return detail::make_result({}, {cosv}, {a, b}, [na, nb, raw = d / (na * nb)](detail::Node& self) {
        const auto& av = self.parents[0]->data;
        const auto& bv = self.parents[1]->data;
        if (double* g = detail::grad_of(self, 0)) detail::cosine_grad(av, bv, na, nb, raw, self.grad[0], g);
        if (double* g = detail::grad_of(self, 1)) detail::cosine_grad(bv, av, nb, na, raw, self.grad[0], g);
    });
}

// Cosine similarity of every row of x [n x d] against every row of c [k x d].
// Returns [n x k]. Zero-norm rows raise DegenerateError naming the row.
inline Tensor cosine_rows(const Tensor& x, const Tensor& c) {
    detail::require_rank(x, 2, "cosine_rows");
    detail::require_rank(c, 2, "cosine_rows");
    if (x.dim(1) != c.dim(1)) {
        throw DimensionError("cosine_rows: " + shape_str(x.shape()) + " vs " + shape_str(c.shape()));
    }
    const std::size_t n = x.dim(0), k = c.dim(0), d = x.dim(1);
    std::vector<double> nx(n), nc(k);
    for (std::size_t i = 0; i < n; ++i) {
        nx[i] = detail::norm2(x.data().subspan(i * d, d));
        if (nx[i] == 0.0) throw DegenerateError("zero-norm feature row " + std::to_string(i));
    }
    for (std::size_t j = 0; j < k; ++j) {
        nc[j] = detail::norm2(c.data().subspan(j * d, d));
        if (nc[j] == 0.0) throw DegenerateError("zero-norm centroid " + std::to_string(j));
    }
    std::vector<double> out(n * k);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
            double acc = 0.0;
            for (std::size_t t = 0; t < d; ++t) acc += x[i * d + t] * c[j * d + t];
            out[i * k + j] = acc / (nx[i] * nc[j]);
        }
    }
    return detail::make_result(
        {n, k}, std::move(out), {x, c},
        [n, k, d, nx = std::move(nx), nc = std::move(nc)](detail::Node& self) {
            const auto& xv = self.parents[0]->data;
            const auto& cv = self.parents[1]->data;
            double* gx = detail::grad_of(self, 0);
            double* gc = detail::grad_of(self, 1);
            for (std::size_t i = 0; i < n; ++i) {
                std::span<const double> xi(xv.data() + i * d, d);
                for (std::size_t j = 0; j < k; ++j) {
                    const double up = self.grad[i * k + j];
                    if (up == 0.0) continue;
                    std::span<const double> cj(cv.data() + j * d, d);
                    const double cosv = self.data[i * k + j];
                    if (gx) detail::cosine_grad(xi, cj, nx[i], nc[j], cosv, up, gx + i * d);
                    if (gc) detail::cosine_grad(cj, xi, nc[j], nx[i], cosv, up, gc + j * d);
                }
            }
        });
}

// ---------------------------------------------------------------------------
// Normalization

// Per-row standardization followed by an elementwise affine transform.
inline Tensor layernorm_affine(const Tensor& x, const Tensor& gain, const Tensor& bias,
                               double eps = 1e-5) {
    detail::require_rank(x, 2, "layernorm_affine");
    const std::size_t n = x.dim(0), d = x.dim(1);
    if (d == 0) throw DimensionError("layernorm_affine: empty rows");
    if (!(eps > 0.0)) throw DomainError("layernorm_affine: eps must be positive");
    if (gain.numel() != d || bias.numel() != d) {
        throw DimensionError("layernorm_affine: affine shapes " + shape_str(gain.shape()) + ", " +
                             shape_str(bias.shape()) + " do not match rows of " + shape_str(x.shape()));
    }
    std::vector<double> xhat(n * d), inv_std(n), out(n * d);
    for (std::size_t i = 0; i < n; ++i) {
        double mu = 0.0;
        for (std::size_t j = 0; j < d; ++j) mu += x[i * d + j];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (x[i * d + j] - mu) * (x[i * d + j] - mu);
        var /= static_cast<double>(d);
        inv_std[i] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < d; ++j) {
            xhat[i * d + j] = (x[i * d + j] - mu) * inv_std[i];
            out[i * d + j] = gain[j] * xhat[i * d + j] + bias[j];
        }
    }
    return detail::make_result(
        x.shape(), std::move(out), {x, gain, bias},
        [n, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](detail::Node& self) {
            const auto& gv = self.parents[1]->data;
            const auto& up = self.grad;
            if (double* gg = detail::grad_of(self, 1)) {
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < d; ++j) gg[j] += up[i * d + j] * xhat[i * d + j];
            }
            if (double* gb = detail::grad_of(self, 2)) {
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < d; ++j) gb[j] += up[i * d + j];
            }
            if (double* gx = detail::grad_of(self, 0)) {
                const double inv_d = 1.0 / static_cast<double>(d);
                for (std::size_t i = 0; i < n; ++i) {
                    double mean_g = 0.0, mean_gx = 0.0;
                    for (std::size_t j = 0; j < d; ++j) {
                        const double gh = up[i * d + j] * gv[j];
                        mean_g += gh;
                        mean_gx += gh * xhat[i * d + j];
                    }
                    mean_g *= inv_d;
                    mean_gx *= inv_d;
                    for (std::size_t j = 0; j < d; ++j) {
                        const double gh = up[i * d + j] * gv[j];
                        gx[i * d + j] += inv_std[i] * (gh - mean_g - xhat[i * d + j] * mean_gx);
                    }
                }
            }
        });
}

// ---------------------------------------------------------------------------
// Gradient oracle

// Maximum over coordinates of |analytic - central difference| /
// max(|central difference|, 1e-2 * largest |central difference|, 1e-12),
// for the gradient of the scalar f() with respect to every tensor in
// `leaves`. The floor keeps coordinates whose true derivative is ~0 from
// reporting rounding noise as error. f must rebuild its graph from the
// leaves on each call; leaf values are perturbed in place and restored.
inline double finite_diff_check(const std::function<Tensor()>& f, std::span<Tensor> leaves,
                                double h = 1e-5) {
    if (!(h >= 1e-7 && h <= 1e-3)) throw DomainError("finite_diff_check: step outside [1e-7, 1e-3]");
    std::vector<bool> restore(leaves.size());
    for (std::size_t l = 0; l < leaves.size(); ++l) {
        restore[l] = leaves[l].requires_grad();
        leaves[l].set_requires_grad(true);
        leaves[l].zero_grad();
    }
    const Tensor base = f();
    if (base.numel() != 1) throw ContractError("finite_diff_check: f must be scalar-valued");
    if (!std::isfinite(base.item())) throw NumericError("finite_diff_check: f(x) is not finite");
    backward(base);

    std::vector<double> analytic_all, numeric_all;
    for (auto& leaf : leaves) {
        std::vector<double> analytic(leaf.numel(), 0.0);
        if (leaf.has_grad()) std::copy(leaf.grad().begin(), leaf.grad().end(), analytic.begin());
        auto values = leaf.data();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double saved = values[i];
            values[i] = saved + h;
            const double up = f().item();
            values[i] = saved - h;
            const double down = f().item();
            values[i] = saved;
            if (!std::isfinite(up) || !std::isfinite(down)) {
                throw NumericError("finite_diff_check: f is not finite near x");
            }
            numeric_all.push_back((up - down) / (2.0 * h));
        }
        analytic_all.insert(analytic_all.end(), analytic.begin(), analytic.end());
    }
    double scale = 0.0;
    for (double n : numeric_all) scale = std::max(scale, std::abs(n));
    double worst = 0.0;
    for (std::size_t i = 0; i < numeric_all.size(); ++i) {
        const double denom = std::max({std::abs(numeric_all[i]), 1e-2 * scale, 1e-12});
        worst = std::max(worst, std::abs(analytic_all[i] - numeric_all[i]) / denom);
    }
    for (std::size_t l = 0; l < leaves.size(); ++l) {
        leaves[l].zero_grad();
        leaves[l].set_requires_grad(restore[l]);
    }
    return worst;
}

// Single-input form: f maps a tensor to a scalar.
inline double finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                                double h = 1e-5) {
    Tensor leaf = x.detach();
    std::vector<Tensor> leaves{leaf};
    return finite_diff_check([&] { return f(leaves[0]); }, std::span<Tensor>(leaves), h);
}

} // namespace ttadrift
