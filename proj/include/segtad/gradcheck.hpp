#pragma once

#include <functional>
#include <string>
#include <vector>

#include "segtad/tensor.hpp"

namespace segtad {

// Central finite-difference gradient verification. The loss builder is
// re-invoked for every probe so the whole forward path (including any
// data-dependent graph construction) is differentiated numerically.

struct GradCheckReport {
    std::string name;
    double max_rel_err = 0.0;
    size_t checked = 0;
    bool pass(double tol = 1e-4) const { return max_rel_err < tol; }
};

inline double rel_err(double a, double b) {
    const double denom = std::max({std::abs(a), std::abs(b), 1e-6});
    return std::abs(a - b) / denom;
}

// max_entries == 0 checks every scalar; otherwise an evenly strided subset
// of each parameter is probed.
template <typename LossFn>
GradCheckReport check_gradients(const std::string& name, LossFn make_loss,
                                std::vector<Tensor> params, double h = 1e-5,
                                size_t max_entries = 0) {
    GradCheckReport report;
    report.name = name;
    zero_grad(params);
    Tensor loss = make_loss();
    check(loss.numel() == 1, "gradcheck '", name, "': loss must be scalar");
    backward(loss);
    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (auto& p : params) {
        check(!p.grad().empty(), "gradcheck '", name, "': parameter missing gradient");
        analytic.push_back(p.grad());
    }
    for (size_t pi = 0; pi < params.size(); ++pi) {
        auto& vals = params[pi].values();
        const size_t n = vals.size();
        size_t stride = 1;
        if (max_entries > 0 && n > max_entries) stride = (n + max_entries - 1) / max_entries;
        for (size_t i = 0; i < n; i += stride) {
            const double keep = vals[i];
            vals[i] = keep + h;
            const double fp = make_loss().item();
            vals[i] = keep - h;
            const double fm = make_loss().item();
            vals[i] = keep;
            const double numeric = (fp - fm) / (2.0 * h);
            const double e = rel_err(analytic[pi][i], numeric);
            if (e > report.max_rel_err) report.max_rel_err = e;
            ++report.checked;
        }
    }
    return report;
}

}  // namespace segtad
