#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "segtad/error.hpp"

namespace segtad {

// Dense 64-bit float tensor participating in reverse-mode differentiation.
// Values are stored flat in row-major order. Every operation records its
// inputs and a backprop closure on the implicit tape (the DAG of nodes);
// backward() replays the tape in reverse creation order, which is a reverse
// topological order because operations execute eagerly.

struct Node {
    std::vector<size_t> shape;
    std::vector<double> value;
    std::vector<double> grad;  // allocated lazily, same length as value
    bool requires_grad = false;
    const char* op = "leaf";
    uint64_t seq = 0;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backprop;  // pulls from this->grad into parents
};

namespace detail {
inline std::atomic<uint64_t> node_seq{0};

inline size_t shape_numel(const std::vector<size_t>& shape) {
    size_t n = 1;
    for (size_t d : shape) n *= d;
    return n;
}

inline std::vector<double>& grad_of(Node& n) {
    if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
    return n.grad;
}
}  // namespace detail

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

    static Tensor from(std::vector<double> values, std::vector<size_t> shape,
                       bool requires_grad = false) {
        check(detail::shape_numel(shape) == values.size(), "tensor: shape product ",
              detail::shape_numel(shape), " does not match data length ", values.size());
        auto n = std::make_shared<Node>();
        n->shape = std::move(shape);
        n->value = std::move(values);
        n->requires_grad = requires_grad;
        n->seq = detail::node_seq++;
        return Tensor(std::move(n));
    }

    static Tensor zeros(std::vector<size_t> shape, bool requires_grad = false) {
        std::vector<double> v(detail::shape_numel(shape), 0.0);
        return from(std::move(v), std::move(shape), requires_grad);
    }

    static Tensor full(std::vector<size_t> shape, double fill) {
        std::vector<double> v(detail::shape_numel(shape), fill);
        return from(std::move(v), std::move(shape));
    }

    static Tensor scalar(double v) { return from({v}, {1}); }

    bool defined() const { return node_ != nullptr; }
    const std::vector<size_t>& shape() const { return node_->shape; }
    size_t rank() const { return node_->shape.size(); }
    size_t dim(size_t i) const { return node_->shape.at(i); }
    size_t numel() const { return node_->value.size(); }
    bool requires_grad() const { return node_->requires_grad; }

    const std::vector<double>& values() const { return node_->value; }
    std::vector<double>& values() { return node_->value; }
    const std::vector<double>& grad() const { return node_->grad; }
    std::vector<double>& grad() { return node_->grad; }

    double item() const {
        check(numel() == 1, "item: tensor has ", numel(), " elements, expected 1");
        return node_->value[0];
    }

    // 2-D accessor (row r, column c)
    double at(size_t r, size_t c) const {
        return node_->value[r * node_->shape[1] + c];
    }

    std::shared_ptr<Node>& node() { return node_; }
    const std::shared_ptr<Node>& node() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

namespace detail {

inline Tensor make_node(const char* op, std::vector<size_t> shape, std::vector<double> value,
                        std::vector<Tensor> parents, std::function<void(Node&)> backprop) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    n->op = op;
    n->seq = node_seq++;
    bool rg = false;
    n->parents.reserve(parents.size());
    for (auto& p : parents) {
        rg = rg || p.node()->requires_grad;
        n->parents.push_back(p.node());
    }
    n->requires_grad = rg;
    if (rg) n->backprop = std::move(backprop);
    return Tensor(std::move(n));
}

inline void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    check(a.shape() == b.shape(), op, ": shape mismatch between operands");
}

inline void check_not_empty(const char* op, const Tensor& a) {
    check(a.numel() > 0, op, ": empty tensor");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::check_same_shape("add", a, b);
    std::vector<double> out(a.numel());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
    return detail::make_node("add", a.shape(), std::move(out), {a, b}, [](Node& self) {
        for (int p = 0; p < 2; ++p) {
            Node& par = *self.parents[p];
            if (!par.requires_grad) continue;
            auto& g = detail::grad_of(par);
            for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
    });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::check_same_shape("sub", a, b);
    std::vector<double> out(a.numel());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] - b.values()[i];
    return detail::make_node("sub", a.shape(), std::move(out), {a, b}, [](Node& self) {
        if (self.parents[0]->requires_grad) {
            auto& g = detail::grad_of(*self.parents[0]);
            for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (self.parents[1]->requires_grad) {
            auto& g = detail::grad_of(*self.parents[1]);
            for (size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
        }
    });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::check_same_shape("mul", a, b);
    std::vector<double> out(a.numel());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
    return detail::make_node("mul", a.shape(), std::move(out), {a, b}, [](Node& self) {
        const auto& av = self.parents[0]->value;
        const auto& bv = self.parents[1]->value;
        if (self.parents[0]->requires_grad) {
            auto& g = detail::grad_of(*self.parents[0]);
            for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bv[i];
        }
        if (self.parents[1]->requires_grad) {
            auto& g = detail::grad_of(*self.parents[1]);
            for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * av[i];
        }
    });
}

inline Tensor div(const Tensor& a, const Tensor& b) {
    detail::check_same_shape("div", a, b);
    std::vector<double> out(a.numel());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] / b.values()[i];
    return detail::make_node("div", a.shape(), std::move(out), {a, b}, [](Node& self) {
        const auto& av = self.parents[0]->value;
        const auto& bv = self.parents[1]->value;
        if (self.parents[0]->requires_grad) {
            auto& g = detail::grad_of(*self.parents[0]);
            for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / bv[i];
        }
        if (self.parents[1]->requires_grad) {
            auto& g = detail::grad_of(*self.parents[1]);
            for (size_t i = 0; i < g.size(); ++i)
                g[i] -= self.grad[i] * av[i] / (bv[i] * bv[i]);
        }
    });
}

inline Tensor scale(const Tensor& a, double c) {
    std::vector<double> out(a.numel());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * c;
    return detail::make_node("scale", a.shape(), std::move(out), {a}, [c](Node& self) {
        if (!self.parents[0]->requires_grad) return;
        auto& g = detail::grad_of(*self.parents[0]);
        for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * c;
    });
}

inline Tensor add_scalar(const Tensor& a, double c) {
    std::vector<double> out(a.numel());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + c;
    return detail::make_node("add_scalar", a.shape(), std::move(out), {a}, [](Node& self) {
        if (!self.parents[0]->requires_grad) return;
        auto& g = detail::grad_of(*self.parents[0]);
        for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

// c - a, elementwise
inline Tensor rsub_scalar(double c, const Tensor& a) { return add_scalar(scale(a, -1.0), c); }

inline Tensor relu(const Tensor& a) {
    detail::check_not_empty("relu", a);
    std::vector<double> out(a.numel());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] > 0.0 ? a.values()[i] : 0.0;
    return detail::make_node("relu", a.shape(), std::move(out), {a}, [](Node& self) {
        if (!self.parents[0]->requires_grad) return;
        const auto& xv = self.parents[0]->value;
        auto& g = detail::grad_of(*self.parents[0]);
        for (size_t i = 0; i < g.size(); ++i)
            if (xv[i] > 0.0) g[i] += self.grad[i];
    });
}

inline Tensor sigmoid(const Tensor& a) {
    detail::check_not_empty("sigmoid", a);
    std::vector<double> out(a.numel());
    for (size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-a.values()[i]));
    return detail::make_node("sigmoid", a.shape(), std::move(out), {a}, [](Node& self) {
        if (!self.parents[0]->requires_grad) return;
        auto& g = detail::grad_of(*self.parents[0]);
        for (size_t i = 0; i < g.size(); ++i) {
            double y = self.value[i];
            g[i] += self.grad[i] * y * (1.0 - y);
        }
    });
}

inline Tensor log(const Tensor& a) {
    std::vector<double> out(a.numel());
    for (size_t i = 0; i < out.size(); ++i) out[i] = std::log(a.values()[i]);
    return detail::make_node("log", a.shape(), std::move(out), {a}, [](Node& self) {
        if (!self.parents[0]->requires_grad) return;
        const auto& xv = self.parents[0]->value;
        auto& g = detail::grad_of(*self.parents[0]);
        for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / xv[i];
    });
}

inline Tensor sqrt(const Tensor& a) {
    std::vector<double> out(a.numel());
    for (size_t i = 0; i < out.size(); ++i) out[i] = std::sqrt(a.values()[i]);
    return detail::make_node("sqrt", a.shape(), std::move(out), {a}, [](Node& self) {
        if (!self.parents[0]->requires_grad) return;
        auto& g = detail::grad_of(*self.parents[0]);
        for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * 0.5 / self.value[i];
    });
}

// Gradient passes through strictly inside (lo, hi) and is zero at saturation.
inline Tensor clamp(const Tensor& a, double lo, double hi) {
    std::vector<double> out(a.numel());
    for (size_t i = 0; i < out.size(); ++i) out[i] = std::min(hi, std::max(lo, a.values()[i]));
    return detail::make_node("clamp", a.shape(), std::move(out), {a}, [lo, hi](Node& self) {
        if (!self.parents[0]->requires_grad) return;
        const auto& xv = self.parents[0]->value;
        auto& g = detail::grad_of(*self.parents[0]);
        for (size_t i = 0; i < g.size(); ++i)
            if (xv[i] > lo && xv[i] < hi) g[i] += self.grad[i];
    });
}

// ---------------------------------------------------------------------------
// linear algebra

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    check(a.rank() == 2 && b.rank() == 2, "matmul: operands must be rank-2");
    check(a.dim(1) == b.dim(0), "matmul: inner dimensions ", a.dim(1), " and ", b.dim(0),
          " do not match");
    const size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<double> out(m * n, 0.0);
    const auto& av = a.values();
    const auto& bv = b.values();
    for (size_t i = 0; i < m; ++i)
        for (size_t p = 0; p < k; ++p) {
            const double aip = av[i * k + p];
            if (aip == 0.0) continue;
            const double* brow = bv.data() + p * n;
            double* orow = out.data() + i * n;
            for (size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
        }
    return detail::make_node("matmul", {m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
        const auto& av = self.parents[0]->value;
        const auto& bv = self.parents[1]->value;
        if (self.parents[0]->requires_grad) {
            auto& ga = detail::grad_of(*self.parents[0]);  // G * B^T
            for (size_t i = 0; i < m; ++i)
                for (size_t j = 0; j < n; ++j) {
                    const double gij = self.grad[i * n + j];
                    if (gij == 0.0) continue;
                    const double* brow = bv.data() + j;  // column j of B, stride n
                    double* garow = ga.data() + i * k;
                    for (size_t p = 0; p < k; ++p) garow[p] += gij * brow[p * n];
                }
        }
        if (self.parents[1]->requires_grad) {
            auto& gb = detail::grad_of(*self.parents[1]);  // A^T * G
            for (size_t i = 0; i < m; ++i)
                for (size_t p = 0; p < k; ++p) {
                    const double aip = av[i * k + p];
                    if (aip == 0.0) continue;
                    const double* grow = self.grad.data() + i * n;
                    double* gbrow = gb.data() + p * n;
                    for (size_t j = 0; j < n; ++j) gbrow[j] += aip * grow[j];
                }
        }
    });
}

inline Tensor transpose(const Tensor& a) {
    check(a.rank() == 2, "transpose: operand must be rank-2");
    const size_t r = a.dim(0), c = a.dim(1);
    std::vector<double> out(r * c);
    for (size_t i = 0; i < r; ++i)
        for (size_t j = 0; j < c; ++j) out[j * r + i] = a.values()[i * c + j];
    return detail::make_node("transpose", {c, r}, std::move(out), {a}, [r, c](Node& self) {
        if (!self.parents[0]->requires_grad) return;
        auto& g = detail::grad_of(*self.parents[0]);
        for (size_t i = 0; i < r; ++i)
            for (size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j * r + i];
    });
}

// ---------------------------------------------------------------------------
// reductions and row/column broadcasts

inline Tensor sum_all(const Tensor& a) {
    detail::check_not_empty("sum", a);
    double s = 0.0;
    for (double v : a.values()) s += v;
    return detail::make_node("sum", {1}, {s}, {a}, [](Node& self) {
        if (!self.parents[0]->requires_grad) return;
        auto& g = detail::grad_of(*self.parents[0]);
        for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0];
    });
}

inline Tensor mean_all(const Tensor& a) {
    return scale(sum_all(a), 1.0 / static_cast<double>(a.numel()));
}

inline Tensor row_sum(const Tensor& a) {
    check(a.rank() == 2, "row_sum: operand must be rank-2");
    const size_t r = a.dim(0), c = a.dim(1);
    std::vector<double> out(r, 0.0);
    for (size_t i = 0; i < r; ++i)
        for (size_t j = 0; j < c; ++j) out[i] += a.values()[i * c + j];
    return detail::make_node("row_sum", {r, 1}, std::move(out), {a}, [r, c](Node& self) {
        if (!self.parents[0]->requires_grad) return;
        auto& g = detail::grad_of(*self.parents[0]);
        for (size_t i = 0; i < r; ++i)
            for (size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[i];
    });
}

inline Tensor col_sum(const Tensor& a) {
    check(a.rank() == 2, "col_sum: operand must be rank-2");
    const size_t r = a.dim(0), c = a.dim(1);
    std::vector<double> out(c, 0.0);
    for (size_t i = 0; i < r; ++i)
        for (size_t j = 0; j < c; ++j) out[j] += a.values()[i * c + j];
    return detail::make_node("col_sum", {1, c}, std::move(out), {a}, [r, c](Node& self) {
        if (!self.parents[0]->requires_grad) return;
        auto& g = detail::grad_of(*self.parents[0]);
        for (size_t i = 0; i < r; ++i)
            for (size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j];
    });
}

// x[i,j] + v[i], v of shape [R,1]
inline Tensor row_add(const Tensor& a, const Tensor& v) {
    check(a.rank() == 2, "row_add: operand must be rank-2");
    check(v.rank() == 2 && v.dim(0) == a.dim(0) && v.dim(1) == 1,
          "row_add: vector must have shape [", a.dim(0), ",1]");
    const size_t r = a.dim(0), c = a.dim(1);
    std::vector<double> out(r * c);
    for (size_t i = 0; i < r; ++i)
        for (size_t j = 0; j < c; ++j) out[i * c + j] = a.values()[i * c + j] + v.values()[i];
    return detail::make_node("row_add", a.shape(), std::move(out), {a, v}, [r, c](Node& self) {
        if (self.parents[0]->requires_grad) {
            auto& g = detail::grad_of(*self.parents[0]);
            for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (self.parents[1]->requires_grad) {
            auto& g = detail::grad_of(*self.parents[1]);
            for (size_t i = 0; i < r; ++i)
                for (size_t j = 0; j < c; ++j) g[i] += self.grad[i * c + j];
        }
    });
}

// x[i,j] * v[i], v of shape [R,1]
inline Tensor row_scale(const Tensor& a, const Tensor& v) {
    check(a.rank() == 2, "row_scale: operand must be rank-2");
    check(v.rank() == 2 && v.dim(0) == a.dim(0) && v.dim(1) == 1,
          "row_scale: vector must have shape [", a.dim(0), ",1]");
    const size_t r = a.dim(0), c = a.dim(1);
    std::vector<double> out(r * c);
    for (size_t i = 0; i < r; ++i)
        for (size_t j = 0; j < c; ++j) out[i * c + j] = a.values()[i * c + j] * v.values()[i];
    return detail::make_node("row_scale", a.shape(), std::move(out), {a, v}, [r, c](Node& self) {
        const auto& xv = self.parents[0]->value;
        const auto& vv = self.parents[1]->value;
        if (self.parents[0]->requires_grad) {
            auto& g = detail::grad_of(*self.parents[0]);
            for (size_t i = 0; i < r; ++i)
                for (size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[i * c + j] * vv[i];
        }
        if (self.parents[1]->requires_grad) {
            auto& g = detail::grad_of(*self.parents[1]);
            for (size_t i = 0; i < r; ++i)
                for (size_t j = 0; j < c; ++j) g[i] += self.grad[i * c + j] * xv[i * c + j];
        }
    });
}

// x[i,j] * v[j], v of shape [1,C]
inline Tensor col_scale(const Tensor& a, const Tensor& v) {
    check(a.rank() == 2, "col_scale: operand must be rank-2");
    check(v.rank() == 2 && v.dim(0) == 1 && v.dim(1) == a.dim(1),
          "col_scale: vector must have shape [1,", a.dim(1), "]");
    const size_t r = a.dim(0), c = a.dim(1);
    std::vector<double> out(r * c);
    for (size_t i = 0; i < r; ++i)
        for (size_t j = 0; j < c; ++j) out[i * c + j] = a.values()[i * c + j] * v.values()[j];
    return detail::make_node("col_scale", a.shape(), std::move(out), {a, v}, [r, c](Node& self) {
        const auto& xv = self.parents[0]->value;
        const auto& vv = self.parents[1]->value;
        if (self.parents[0]->requires_grad) {
            auto& g = detail::grad_of(*self.parents[0]);
            for (size_t i = 0; i < r; ++i)
                for (size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[i * c + j] * vv[j];
        }
        if (self.parents[1]->requires_grad) {
            auto& g = detail::grad_of(*self.parents[1]);
            for (size_t i = 0; i < r; ++i)
                for (size_t j = 0; j < c; ++j) g[j] += self.grad[i * c + j] * xv[i * c + j];
        }
    });
}

// rows [r0, r1) of a rank-2 tensor
inline Tensor slice_rows(const Tensor& a, size_t r0, size_t r1) {
    check(a.rank() == 2, "slice_rows: operand must be rank-2");
    check(r0 < r1 && r1 <= a.dim(0), "slice_rows: range [", r0, ",", r1,
          ") out of bounds for ", a.dim(0), " rows");
    const size_t c = a.dim(1);
    std::vector<double> out(a.values().begin() + r0 * c, a.values().begin() + r1 * c);
    return detail::make_node("slice_rows", {r1 - r0, c}, std::move(out), {a},
                             [r0, c](Node& self) {
                                 if (!self.parents[0]->requires_grad) return;
                                 auto& g = detail::grad_of(*self.parents[0]);
                                 for (size_t i = 0; i < self.grad.size(); ++i)
                                     g[r0 * c + i] += self.grad[i];
                             });
}

// selected columns of a rank-2 tensor, in the given order (duplicates allowed)
inline Tensor gather_cols(const Tensor& a, const std::vector<int>& idx) {
    check(a.rank() == 2, "gather_cols: operand must be rank-2");
    check(!idx.empty(), "gather_cols: empty index list");
    const size_t r = a.dim(0), c = a.dim(1);
    for (int j : idx)
        check(j >= 0 && static_cast<size_t>(j) < c, "gather_cols: index ", j,
              " out of bounds for ", c, " columns");
    std::vector<double> out(r * idx.size());
    for (size_t i = 0; i < r; ++i)
        for (size_t j = 0; j < idx.size(); ++j)
            out[i * idx.size() + j] = a.values()[i * c + idx[j]];
    return detail::make_node("gather_cols", {r, idx.size()}, std::move(out), {a},
                             [r, c, idx](Node& self) {
                                 if (!self.parents[0]->requires_grad) return;
                                 auto& g = detail::grad_of(*self.parents[0]);
                                 const size_t m = idx.size();
                                 for (size_t i = 0; i < r; ++i)
                                     for (size_t j = 0; j < m; ++j)
                                         g[i * c + idx[j]] += self.grad[i * m + j];
                             });
}

// ---------------------------------------------------------------------------
// backward

namespace detail {
inline std::vector<Node*> reachable_nodes(const Tensor& root) {
    std::vector<Node*> order;
    std::vector<Node*> stack{root.node().get()};
    // seq values are unique, use them to dedupe without touching node state
    std::vector<uint64_t> seen;
    auto mark = [&seen](uint64_t s) {
        auto it = std::lower_bound(seen.begin(), seen.end(), s);
        if (it != seen.end() && *it == s) return false;
        seen.insert(it, s);
        return true;
    };
    mark(root.node()->seq);
    while (!stack.empty()) {
        Node* n = stack.back();
        stack.pop_back();
        order.push_back(n);
        for (auto& p : n->parents)
            if (mark(p->seq)) stack.push_back(p.get());
    }
    return order;
}
}  // namespace detail

// Populates .grad on every node that contributed to the scalar loss. Visits
// each recorded operation exactly once, children before parents.
inline void backward(const Tensor& loss) {
    check(loss.defined() && loss.numel() == 1, "backward: loss must be a scalar tensor");
    if (!loss.node()->requires_grad) return;
    auto nodes = detail::reachable_nodes(loss);
    std::sort(nodes.begin(), nodes.end(),
              [](const Node* a, const Node* b) { return a->seq > b->seq; });
    detail::grad_of(*loss.node());
    loss.node()->grad[0] += 1.0;
    for (Node* n : nodes) {
        if (!n->requires_grad || !n->backprop) continue;
        if (n->grad.empty()) continue;  // dead branch, nothing flowed in
        n->backprop(*n);
    }
}

inline void zero_grad(std::vector<Tensor>& params) {
    for (auto& p : params) p.node()->grad.assign(p.numel(), 0.0);
}

// first node (in execution order) holding a non-finite value, or empty string
inline std::string first_nonfinite(const Tensor& root) {
    auto nodes = detail::reachable_nodes(root);
    std::sort(nodes.begin(), nodes.end(),
              [](const Node* a, const Node* b) { return a->seq < b->seq; });
    for (Node* n : nodes)
        for (double v : n->value)
            if (!std::isfinite(v)) return n->op;
    return {};
}

inline bool all_finite(const Tensor& t) {
    for (double v : t.values())
        if (!std::isfinite(v)) return false;
    return true;
}

}  // namespace segtad
