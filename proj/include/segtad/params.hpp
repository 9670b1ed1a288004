#pragma once

#include <string>
#include <vector>

#include "segtad/rng.hpp"
#include "segtad/tensor.hpp"

namespace segtad {

// A named tensor registered with a model. Trainable parameters carry
// requires_grad; buffers (e.g. batch-norm running statistics) do not.
struct Parameter {
    std::string name;
    Tensor tensor;
    bool trainable = true;
};

// Ordered registry of a model's parameters and buffers. Insertion order is
// fixed by construction, which keeps optimizer updates and checkpoints
// deterministic.
class ParamStore {
public:
    Tensor add(const std::string& name, std::vector<size_t> shape, Rng& rng, double init_scale) {
        std::vector<double> v(detail::shape_numel(shape));
        for (auto& x : v) x = rng.uniform(-init_scale, init_scale);
        return add_values(name, std::move(v), std::move(shape), true);
    }

    Tensor add_zeros(const std::string& name, std::vector<size_t> shape) {
        std::vector<double> v(detail::shape_numel(shape), 0.0);
        return add_values(name, std::move(v), std::move(shape), true);
    }

    Tensor add_ones(const std::string& name, std::vector<size_t> shape) {
        std::vector<double> v(detail::shape_numel(shape), 1.0);
        return add_values(name, std::move(v), std::move(shape), true);
    }

    Tensor add_values(const std::string& name, std::vector<double> values,
                      std::vector<size_t> shape, bool trainable) {
        for (const auto& p : items_)
            check(p.name != name, "parameter '", name, "' registered twice");
        Tensor t = Tensor::from(std::move(values), std::move(shape), trainable);
        items_.push_back(Parameter{name, t, trainable});
        return t;
    }

    std::vector<Parameter>& items() { return items_; }
    const std::vector<Parameter>& items() const { return items_; }

    std::vector<Tensor> trainable() const {
        std::vector<Tensor> out;
        for (const auto& p : items_)
            if (p.trainable) out.push_back(p.tensor);
        return out;
    }

    Parameter* find(const std::string& name) {
        for (auto& p : items_)
            if (p.name == name) return &p;
        return nullptr;
    }

    size_t trainable_scalar_count() const {
        size_t n = 0;
        for (const auto& p : items_)
            if (p.trainable) n += p.tensor.numel();
        return n;
    }

private:
    std::vector<Parameter> items_;
};

// Glorot-style uniform bound for a weight tensor.
inline double glorot_bound(size_t fan_in, size_t fan_out) {
    return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

}  // namespace segtad
