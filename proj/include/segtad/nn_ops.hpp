#pragma once

#include <cmath>
#include <vector>

#include "segtad/tensor.hpp"

namespace segtad {

// Sequence operators on channel-major [C x T] tensors.

inline size_t conv1d_out_len(size_t t, size_t k, size_t stride, size_t dilation, size_t padding) {
    const size_t extent = dilation * (k - 1) + 1;
    check(extent <= t + 2 * padding, "conv1d: kernel extent ", extent,
          " exceeds padded length ", t + 2 * padding);
    return (t + 2 * padding - extent) / stride + 1;
}

// input [C_in x T], weight [C_out x C_in x k], bias [C_out]; zero padding
inline Tensor conv1d(const Tensor& input, const Tensor& weight, const Tensor& bias,
                     size_t stride = 1, size_t dilation = 1, size_t padding = 0) {
    check(input.rank() == 2, "conv1d: input must be rank-2 [C_in x T]");
    check(weight.rank() == 3, "conv1d: weight must be rank-3 [C_out x C_in x k]");
    check(stride >= 1 && dilation >= 1, "conv1d: stride and dilation must be >= 1");
    const size_t c_in = input.dim(0), t = input.dim(1);
    const size_t c_out = weight.dim(0), k = weight.dim(2);
    check(weight.dim(1) == c_in, "conv1d: weight C_in ", weight.dim(1),
          " does not match input channels ", c_in);
    check(k >= 1, "conv1d: kernel size must be >= 1");
    check(bias.numel() == c_out, "conv1d: bias length ", bias.numel(),
          " does not match C_out ", c_out);
    const size_t t_out = conv1d_out_len(t, k, stride, dilation, padding);

    std::vector<double> out(c_out * t_out);
    const auto& xv = input.values();
    const auto& wv = weight.values();
    const auto& bv = bias.values();
    const long tl = static_cast<long>(t);
    for (size_t co = 0; co < c_out; ++co) {
        for (size_t to = 0; to < t_out; ++to) {
            double acc = bv[co];
            const long base = static_cast<long>(to * stride) - static_cast<long>(padding);
            for (size_t q = 0; q < k; ++q) {
                const long ti = base + static_cast<long>(q * dilation);
                if (ti < 0 || ti >= tl) continue;
                const double* wrow = wv.data() + (co * c_in) * k + q;
                const double* xcol = xv.data() + ti;
                for (size_t ci = 0; ci < c_in; ++ci)
                    acc += wrow[ci * k] * xcol[ci * t];
            }
            out[co * t_out + to] = acc;
        }
    }
    return detail::make_node(
        "conv1d", {c_out, t_out}, std::move(out), {input, weight, bias},
        [c_in, t, c_out, k, t_out, stride, dilation, padding](Node& self) {
            Node& xn = *self.parents[0];
            Node& wn = *self.parents[1];
            Node& bn = *self.parents[2];
            const auto& xv = xn.value;
            const auto& wv = wn.value;
            const long tl = static_cast<long>(t);
            const bool need_x = xn.requires_grad;
            const bool need_w = wn.requires_grad;
            const bool need_b = bn.requires_grad;
            if (need_x) detail::grad_of(xn);
            if (need_w) detail::grad_of(wn);
            if (need_b) detail::grad_of(bn);
            for (size_t co = 0; co < c_out; ++co) {
                for (size_t to = 0; to < t_out; ++to) {
                    const double go = self.grad[co * t_out + to];
                    if (go == 0.0) continue;
                    if (need_b) bn.grad[co] += go;
                    const long base = static_cast<long>(to * stride) - static_cast<long>(padding);
                    for (size_t q = 0; q < k; ++q) {
                        const long ti = base + static_cast<long>(q * dilation);
                        if (ti < 0 || ti >= tl) continue;
                        for (size_t ci = 0; ci < c_in; ++ci) {
                            const size_t widx = (co * c_in + ci) * k + q;
                            const size_t xidx = ci * t + ti;
                            if (need_x) xn.grad[xidx] += go * wv[widx];
                            if (need_w) wn.grad[widx] += go * xv[xidx];
                        }
                    }
                }
            }
        });
}

// softmax across channels, independently per time step
inline Tensor softmax_channels(const Tensor& x) {
    check(x.rank() == 2, "softmax_channels: operand must be rank-2 [C x T]");
    detail::check_not_empty("softmax_channels", x);
    const size_t c = x.dim(0), t = x.dim(1);
    std::vector<double> out(c * t);
    for (size_t j = 0; j < t; ++j) {
        double mx = x.values()[j];
        for (size_t i = 1; i < c; ++i) mx = std::max(mx, x.values()[i * t + j]);
        double z = 0.0;
        for (size_t i = 0; i < c; ++i) {
            out[i * t + j] = std::exp(x.values()[i * t + j] - mx);
            z += out[i * t + j];
        }
        for (size_t i = 0; i < c; ++i) out[i * t + j] /= z;
    }
    return detail::make_node("softmax_channels", x.shape(), std::move(out), {x},
                             [c, t](Node& self) {
                                 if (!self.parents[0]->requires_grad) return;
                                 auto& g = detail::grad_of(*self.parents[0]);
                                 for (size_t j = 0; j < t; ++j) {
                                     double dot = 0.0;
                                     for (size_t i = 0; i < c; ++i)
                                         dot += self.grad[i * t + j] * self.value[i * t + j];
                                     for (size_t i = 0; i < c; ++i)
                                         g[i * t + j] += self.value[i * t + j] *
                                                         (self.grad[i * t + j] - dot);
                                 }
                             });
}

// stack [C_i x T] blocks along the channel axis
inline Tensor concat_channels(const std::vector<Tensor>& parts) {
    check(!parts.empty(), "concat_channels: no inputs");
    const size_t t = parts[0].dim(1);
    size_t c_total = 0;
    for (const auto& p : parts) {
        check(p.rank() == 2, "concat_channels: operands must be rank-2");
        check(p.dim(1) == t, "concat_channels: time length ", p.dim(1),
              " does not match first operand's ", t);
        c_total += p.dim(0);
    }
    std::vector<double> out;
    out.reserve(c_total * t);
    for (const auto& p : parts)
        out.insert(out.end(), p.values().begin(), p.values().end());
    return detail::make_node("concat_channels", {c_total, t}, std::move(out), parts,
                             [](Node& self) {
                                 size_t offset = 0;
                                 for (auto& par : self.parents) {
                                     const size_t n = par->value.size();
                                     if (par->requires_grad) {
                                         auto& g = detail::grad_of(*par);
                                         for (size_t i = 0; i < n; ++i)
                                             g[i] += self.grad[offset + i];
                                     }
                                     offset += n;
                                 }
                             });
}

// mean over time per channel: [C x T] -> [C x 1]
inline Tensor global_avg_pool(const Tensor& x) {
    check(x.rank() == 2, "global_avg_pool: operand must be rank-2 [C x T]");
    detail::check_not_empty("global_avg_pool", x);
    return scale(row_sum(x), 1.0 / static_cast<double>(x.dim(1)));
}

// Resample [C x T] to [C x target_T] by linear interpolation along time with
// endpoint alignment. A length-1 source broadcasts its single column.
inline Tensor linear_interp_resize(const Tensor& x, size_t target_t) {
    check(x.rank() == 2, "linear_interp_resize: operand must be rank-2 [C x T]");
    detail::check_not_empty("linear_interp_resize", x);
    check(target_t >= 1, "linear_interp_resize: target length must be >= 1");
    const size_t c = x.dim(0), t = x.dim(1);
    // per-output sample position (left index + fraction)
    std::vector<size_t> left(target_t);
    std::vector<double> frac(target_t);
    for (size_t j = 0; j < target_t; ++j) {
        double pos = 0.0;
        if (t > 1)
            pos = (target_t > 1)
                      ? static_cast<double>(j) * static_cast<double>(t - 1) /
                            static_cast<double>(target_t - 1)
                      : static_cast<double>(t - 1) / 2.0;
        size_t l = static_cast<size_t>(pos);
        if (l >= t - 1 && t > 1) l = t - 2;
        left[j] = (t > 1) ? l : 0;
        frac[j] = (t > 1) ? pos - static_cast<double>(l) : 0.0;
    }
    std::vector<double> out(c * target_t);
    for (size_t i = 0; i < c; ++i)
        for (size_t j = 0; j < target_t; ++j) {
            const size_t l = left[j];
            const double f = frac[j];
            const double a = x.values()[i * t + l];
            const double b = (t > 1) ? x.values()[i * t + l + 1] : a;
            out[i * target_t + j] = a * (1.0 - f) + b * f;
        }
    return detail::make_node("linear_interp_resize", {c, target_t}, std::move(out), {x},
                             [c, t, target_t, left, frac](Node& self) {
                                 if (!self.parents[0]->requires_grad) return;
                                 auto& g = detail::grad_of(*self.parents[0]);
                                 for (size_t i = 0; i < c; ++i)
                                     for (size_t j = 0; j < target_t; ++j) {
                                         const double go = self.grad[i * target_t + j];
                                         const size_t l = left[j];
                                         g[i * t + l] += go * (1.0 - frac[j]);
                                         if (t > 1) g[i * t + l + 1] += go * frac[j];
                                     }
                             });
}

// W [out x in] applied to x [in x N] plus bias [out x 1]
inline Tensor linear(const Tensor& w, const Tensor& x, const Tensor& b) {
    return row_add(matmul(w, x), b);
}

// Per-channel batch normalization over the time axis with running statistics.
// Training mode normalizes with batch moments (differentiable); eval mode
// applies the stored running statistics as constants. The running statistics
// live in plain [C x 1] tensors so they can be registered as checkpoint
// buffers alongside gamma/beta.
class BatchNorm1d {
public:
    BatchNorm1d() = default;
    BatchNorm1d(Tensor gamma, Tensor beta, Tensor running_mean, Tensor running_var,
                double momentum = 0.1, double eps = 1e-5)
        : gamma_(std::move(gamma)),
          beta_(std::move(beta)),
          running_mean_(std::move(running_mean)),
          running_var_(std::move(running_var)),
          momentum_(momentum),
          eps_(eps) {}

    Tensor forward(const Tensor& x, bool training) {
        check(x.rank() == 2, "batchnorm1d: operand must be rank-2 [C x T]");
        const size_t c = x.dim(0), t = x.dim(1);
        check(c == gamma_.dim(0), "batchnorm1d: channel count ", c,
              " does not match parameter size ", gamma_.dim(0));
        check(t >= 1, "batchnorm1d: empty time axis");
        if (training) {
            Tensor mu = scale(row_sum(x), 1.0 / static_cast<double>(t));
            Tensor xc = row_add(x, scale(mu, -1.0));
            Tensor var = scale(row_sum(mul(xc, xc)), 1.0 / static_cast<double>(t));
            Tensor inv_std = div(Tensor::full({c, 1}, 1.0), sqrt(add_scalar(var, eps_)));
            Tensor y = row_add(row_scale(row_scale(xc, inv_std), gamma_), beta_);
            auto& rm = running_mean_.values();
            auto& rv = running_var_.values();
            for (size_t i = 0; i < c; ++i) {
                rm[i] = (1.0 - momentum_) * rm[i] + momentum_ * mu.values()[i];
                rv[i] = (1.0 - momentum_) * rv[i] + momentum_ * var.values()[i];
            }
            return y;
        }
        std::vector<double> shift(c), sc(c);
        for (size_t i = 0; i < c; ++i) {
            sc[i] = 1.0 / std::sqrt(running_var_.values()[i] + eps_);
            shift[i] = -running_mean_.values()[i];
        }
        Tensor xc = row_add(x, Tensor::from(shift, {c, 1}));
        Tensor xhat = row_scale(xc, Tensor::from(sc, {c, 1}));
        return row_add(row_scale(xhat, gamma_), beta_);
    }

    Tensor& gamma() { return gamma_; }
    Tensor& beta() { return beta_; }

private:
    Tensor gamma_, beta_;
    Tensor running_mean_, running_var_;
    double momentum_ = 0.1;
    double eps_ = 1e-5;
};

}  // namespace segtad
