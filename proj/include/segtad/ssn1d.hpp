#pragma once

#include <algorithm>
#include <numeric>
#include <string>
#include <vector>

#include "segtad/labels.hpp"
#include "segtad/nn_ops.hpp"
#include "segtad/params.hpp"

namespace segtad {

// 1-D semantic segmentation network: strided-convolution encoder, a
// bottleneck of parallel atrous convolutions + snippet-graph edge convolution
// + global fast path, and an interpolating decoder with a highway connection,
// followed by per-frame classification and boundary heads.

struct SsnConfig {
    size_t c_in = 0;                          // input feature channels
    size_t c_hidden = 256;                    // working channel count
    size_t encoder_layers = 3;                // temporal downscale = 2^L
    std::vector<int> dilations{1, 10, 20, 30};
    size_t k_s = 8;                           // snippet-graph neighbor count
    size_t num_classes = 0;                   // D; head emits D+1 with background
    bool use_ac = true;
    bool use_gc = true;
    bool use_gp = true;

    void validate() const {
        check(c_in >= 1, "ssn config: c_in must be >= 1");
        check(c_hidden >= 1, "ssn config: c_hidden must be >= 1");
        check(encoder_layers >= 1, "ssn config: encoder depth must be >= 1");
        check(num_classes >= 1, "ssn config: need at least one action class");
        check(!dilations.empty(), "ssn config: dilation list must be non-empty");
        for (int d : dilations) check(d >= 1, "ssn config: dilation ", d, " must be >= 1");
        check(k_s >= 1, "ssn config: k_s must be >= 1");
        check(use_ac || use_gc || use_gp, "ssn config: at least one branch must be enabled");
    }
};

// Directed snippet k-NN graph; row i aggregates from neighbors[i].
struct SnippetGraph {
    size_t n = 0;
    std::vector<std::vector<int>> neighbors;
};

// Similarity is minus the mean squared difference of the two feature columns;
// each node links to its top-K most similar other nodes (ties broken toward
// the smaller index).
inline SnippetGraph build_snippet_graph(const Tensor& features, size_t k_s) {
    check(features.rank() == 2, "snippet graph: features must be rank-2 [C x n]");
    const size_t c = features.dim(0), n = features.dim(1);
    check(n >= 2, "snippet graph: need at least 2 snippets, got ", n);
    SnippetGraph graph;
    graph.n = n;
    graph.neighbors.resize(n);
    const size_t k_eff = std::min(k_s, n - 1);
    const auto& v = features.values();
    std::vector<std::pair<double, int>> cand;
    for (size_t i = 0; i < n; ++i) {
        cand.clear();
        for (size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            double mse = 0.0;
            for (size_t ch = 0; ch < c; ++ch) {
                const double d = v[ch * n + i] - v[ch * n + j];
                mse += d * d;
            }
            cand.emplace_back(-mse / static_cast<double>(c), static_cast<int>(j));
        }
        std::sort(cand.begin(), cand.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return a.second < b.second;
        });
        graph.neighbors[i].reserve(k_eff);
        for (size_t k = 0; k < k_eff; ++k) graph.neighbors[i].push_back(cand[k].second);
    }
    return graph;
}

// Constant aggregation operator for a fixed neighbor structure: column i of
// the result matrix averages the neighbor columns of i. Nodes without
// neighbors fall back to their own column so the edge-difference term
// vanishes.
inline Tensor neighbor_mean_matrix(const std::vector<std::vector<int>>& neighbors) {
    const size_t n = neighbors.size();
    std::vector<double> m(n * n, 0.0);
    for (size_t i = 0; i < n; ++i) {
        if (neighbors[i].empty()) {
            m[i * n + i] = 1.0;
            continue;
        }
        const double w = 1.0 / static_cast<double>(neighbors[i].size());
        for (int j : neighbors[i]) m[static_cast<size_t>(j) * n + i] = w;
    }
    return Tensor::from(std::move(m), {n, n});
}

// Edge convolution: out_i = W * [x_i ; agg_i - x_i]. The aggregate is passed
// in so callers can choose mean-neighbor or attention-weighted aggregation.
inline Tensor edge_conv(const Tensor& x, const Tensor& agg, const Tensor& w) {
    check(w.rank() == 2 && w.dim(1) == 2 * x.dim(0), "edge_conv: weight must be [C_out x ",
          2 * x.dim(0), "]");
    return matmul(w, concat_channels({x, sub(agg, x)}));
}

struct SsnOutput {
    Tensor y;        // fused per-frame features [C' x T]
    Tensor p;        // per-frame class posterior [(D+1) x T]
    Tensor p_start;  // boundary-start confidence [1 x T]
    Tensor p_end;    // boundary-end confidence [1 x T]
};

class Ssn1d {
public:
    Ssn1d(const SsnConfig& cfg, ParamStore& store, Rng& rng) : cfg_(cfg) {
        cfg_.validate();
        const size_t ch = cfg_.c_hidden;
        for (size_t l = 0; l < cfg_.encoder_layers; ++l) {
            const size_t cin = l == 0 ? cfg_.c_in : ch;
            const std::string base = msg("ssn.enc", l + 1);
            enc_w_.push_back(store.add(base + ".weight", {ch, cin, 3}, rng,
                                       glorot_bound(cin * 3, ch * 3)));
            enc_b_.push_back(store.add_zeros(base + ".bias", {ch}));
        }
        if (cfg_.use_gc)
            gc_w_ = store.add("ssn.pag.gc.weight", {ch, 2 * ch}, rng, glorot_bound(2 * ch, ch));
        if (cfg_.use_ac)
            for (size_t b = 0; b < cfg_.dilations.size(); ++b) {
                const std::string base = msg("ssn.pag.ac", b + 1);
                ac_w_.push_back(store.add(base + ".weight", {ch, ch, 3}, rng,
                                          glorot_bound(ch * 3, ch * 3)));
                ac_b_.push_back(store.add_zeros(base + ".bias", {ch}));
            }
        if (cfg_.use_gp) {
            gp_w_ = store.add("ssn.pag.gp.weight", {ch, ch, 1}, rng, glorot_bound(ch, ch));
            gp_b_ = store.add_zeros("ssn.pag.gp.bias", {ch});
        }
        const size_t branches = (cfg_.use_gc ? 1 : 0) +
                                (cfg_.use_ac ? cfg_.dilations.size() : 0) +
                                (cfg_.use_gp ? 1 : 0);
        fuse_w_ = store.add("ssn.pag.fuse.weight", {ch, branches * ch, 1}, rng,
                            glorot_bound(branches * ch, ch));
        fuse_b_ = store.add_zeros("ssn.pag.fuse.bias", {ch});

        hw_w_ = store.add("ssn.dec.highway.weight", {ch, ch, 1}, rng, glorot_bound(ch, ch));
        hw_b_ = store.add_zeros("ssn.dec.highway.bias", {ch});
        Tensor bn_g = store.add_ones("ssn.dec.highway.bn.gamma", {ch, 1});
        Tensor bn_b = store.add_zeros("ssn.dec.highway.bn.beta", {ch, 1});
        Tensor bn_rm = store.add_values("ssn.dec.highway.bn.running_mean",
                                        std::vector<double>(ch, 0.0), {ch, 1}, false);
        Tensor bn_rv = store.add_values("ssn.dec.highway.bn.running_var",
                                        std::vector<double>(ch, 1.0), {ch, 1}, false);
        hw_bn_ = BatchNorm1d(bn_g, bn_b, bn_rm, bn_rv);
        dec_w_ = store.add("ssn.dec.fuse.weight", {ch, 2 * ch, 3}, rng,
                           glorot_bound(2 * ch * 3, ch * 3));
        dec_b_ = store.add_zeros("ssn.dec.fuse.bias", {ch});

        const size_t d1 = cfg_.num_classes + 1;
        seg_w_ = store.add("ssn.seg_head.weight", {d1, ch}, rng, glorot_bound(ch, d1));
        seg_b_ = store.add_zeros("ssn.seg_head.bias", {d1, 1});
        for (int side = 0; side < 2; ++side) {
            const std::string base = side == 0 ? "ssn.start_head" : "ssn.end_head";
            bd_conv_w_[side] = store.add(base + ".conv.weight", {ch, ch, 3}, rng,
                                         glorot_bound(ch * 3, ch * 3));
            bd_conv_b_[side] = store.add_zeros(base + ".conv.bias", {ch});
            bd_out_w_[side] = store.add(base + ".out.weight", {1, ch}, rng,
                                        glorot_bound(ch, 1));
            bd_out_b_[side] = store.add_zeros(base + ".out.bias", {1, 1});
        }
    }

    const SsnConfig& config() const { return cfg_; }

    // L strided conv layers; also returns the activation after the second
    // layer (the highway tap). With L == 1 the tap is the first activation.
    std::pair<Tensor, Tensor> encode(const Tensor& x) const {
        check(x.rank() == 2 && x.dim(0) == cfg_.c_in, "encode: input must be [",
              cfg_.c_in, " x T]");
        const size_t t = x.dim(1);
        const size_t factor = size_t{1} << cfg_.encoder_layers;
        check(t % factor == 0, "encode: sequence length ", t,
              " is not divisible by 2^L = ", factor);
        Tensor h = x;
        Tensor skip;
        const size_t tap = std::min<size_t>(2, cfg_.encoder_layers);
        for (size_t l = 0; l < cfg_.encoder_layers; ++l) {
            h = relu(conv1d(h, enc_w_[l], enc_b_[l], 2, 1, 1));
            if (l + 1 == tap) skip = h;
        }
        return {h, skip};
    }

    // Bottleneck: concatenate the enabled branches over channels and fuse
    // back to C' with a 1x1 convolution.
    Tensor pag_forward(const Tensor& x) const {
        check(x.rank() == 2 && x.dim(0) == cfg_.c_hidden, "pag: input must be [",
              cfg_.c_hidden, " x n]");
        const size_t n = x.dim(1);
        check(n >= 1, "pag: empty sequence");
        std::vector<Tensor> branches;
        if (cfg_.use_gc) {
            Tensor agg;
            if (n >= 2) {
                SnippetGraph graph = build_snippet_graph(x, cfg_.k_s);
                agg = matmul(x, neighbor_mean_matrix(graph.neighbors));
            } else {
                agg = x;  // single snippet: no neighbors, difference term is zero
            }
            branches.push_back(edge_conv(x, agg, gc_w_));
        }
        if (cfg_.use_ac)
            for (size_t b = 0; b < cfg_.dilations.size(); ++b) {
                const size_t d = static_cast<size_t>(cfg_.dilations[b]);
                branches.push_back(relu(conv1d(x, ac_w_[b], ac_b_[b], 1, d, d)));
            }
        if (cfg_.use_gp) {
            Tensor pooled = global_avg_pool(x);
            Tensor squeezed = conv1d(pooled, gp_w_, gp_b_, 1, 1, 0);
            branches.push_back(linear_interp_resize(squeezed, n));
        }
        return relu(conv1d(concat_channels(branches), fuse_w_, fuse_b_, 1, 1, 0));
    }

    // Upscale to the original resolution and fuse with the highway features.
    Tensor decode(const Tensor& bottleneck, const Tensor& skip, size_t t_out,
                  bool training) {
        Tensor up = linear_interp_resize(bottleneck, t_out);
        Tensor hw = relu(hw_bn_.forward(conv1d(skip, hw_w_, hw_b_, 1, 1, 0), training));
        hw = linear_interp_resize(hw, t_out);
        return relu(conv1d(concat_channels({up, hw}), dec_w_, dec_b_, 1, 1, 1));
    }

    Tensor seg_head(const Tensor& y) const {
        return softmax_channels(linear(seg_w_, y, seg_b_));
    }

    std::pair<Tensor, Tensor> boundary_heads(const Tensor& y) const {
        Tensor hs = relu(conv1d(y, bd_conv_w_[0], bd_conv_b_[0], 1, 1, 1));
        Tensor ps = sigmoid(linear(bd_out_w_[0], hs, bd_out_b_[0]));
        Tensor he = relu(conv1d(y, bd_conv_w_[1], bd_conv_b_[1], 1, 1, 1));
        Tensor pe = sigmoid(linear(bd_out_w_[1], he, bd_out_b_[1]));
        return {ps, pe};
    }

    SsnOutput forward(const Tensor& x, bool training) {
        auto [enc, skip] = encode(x);
        Tensor bottleneck = pag_forward(enc);
        SsnOutput out;
        out.y = decode(bottleneck, skip, x.dim(1), training);
        out.p = seg_head(out.y);
        auto [ps, pe] = boundary_heads(out.y);
        out.p_start = ps;
        out.p_end = pe;
        return out;
    }

private:
    SsnConfig cfg_;
    std::vector<Tensor> enc_w_, enc_b_;
    Tensor gc_w_;
    std::vector<Tensor> ac_w_, ac_b_;
    Tensor gp_w_, gp_b_;
    Tensor fuse_w_, fuse_b_;
    Tensor hw_w_, hw_b_;
    BatchNorm1d hw_bn_;
    Tensor dec_w_, dec_b_;
    Tensor seg_w_, seg_b_;
    Tensor bd_conv_w_[2], bd_conv_b_[2], bd_out_w_[2], bd_out_b_[2];
};

// ---------------------------------------------------------------------------
// losses

constexpr double kProbClamp = 1e-12;

// mean binary cross-entropy of predictions p against constant targets y
inline Tensor bce_mean(const Tensor& p, const Tensor& targets) {
    detail::check_same_shape("bce", p, targets);
    Tensor cp = clamp(p, kProbClamp, 1.0 - kProbClamp);
    Tensor pos = mul(targets, log(cp));
    Tensor neg = mul(rsub_scalar(1.0, targets), log(rsub_scalar(1.0, cp)));
    return scale(sum_all(add(pos, neg)), -1.0 / static_cast<double>(p.numel()));
}

enum class SegLossMode { kMulticlass, kBinary, kOff };

inline SegLossMode seg_loss_mode_from_string(const std::string& s) {
    if (s == "multiclass") return SegLossMode::kMulticlass;
    if (s == "binary") return SegLossMode::kBinary;
    if (s == "off") return SegLossMode::kOff;
    fail("unknown segmentation loss mode '", s, "' (expected multiclass|binary|off)");
}

// Cross-entropy of the per-frame posterior against frame labels. The binary
// variant scores only action-vs-background using the background row.
inline Tensor seg_loss(const Tensor& p, const FrameLabels& labels,
                       SegLossMode mode = SegLossMode::kMulticlass) {
    const size_t d1 = p.dim(0), t = p.dim(1);
    check(labels.b.size() == t, "seg_loss: label length ", labels.b.size(),
          " does not match prediction length ", t);
    if (mode == SegLossMode::kOff) return Tensor::scalar(0.0);
    if (mode == SegLossMode::kBinary) {
        Tensor p_action = rsub_scalar(1.0, slice_rows(p, 0, 1));
        std::vector<double> target(t);
        for (size_t f = 0; f < t; ++f) target[f] = labels.b[f] != 0 ? 1.0 : 0.0;
        return bce_mean(p_action, Tensor::from(std::move(target), {1, t}));
    }
    std::vector<double> mask(d1 * t, 0.0);
    for (size_t f = 0; f < t; ++f) {
        const int cls = labels.b[f];
        check(cls >= 0 && static_cast<size_t>(cls) < d1, "seg_loss: label ", cls,
              " out of range for ", d1, " classes");
        mask[static_cast<size_t>(cls) * t + f] = 1.0;
    }
    Tensor picked = mul(log(clamp(p, kProbClamp, 1.0 - kProbClamp)),
                        Tensor::from(std::move(mask), {d1, t}));
    return scale(sum_all(picked), -1.0 / static_cast<double>(t));
}

// Boundary auxiliary loss: start BCE plus end BCE, each averaged over T.
inline Tensor aux_loss(const Tensor& p_start, const Tensor& p_end, const FrameLabels& labels) {
    const size_t t = labels.t;
    check(p_start.numel() == t && p_end.numel() == t,
          "aux_loss: prediction length does not match label length ", t);
    std::vector<double> ts(t), te(t);
    for (size_t f = 0; f < t; ++f) {
        ts[f] = labels.beta_s[f] ? 1.0 : 0.0;
        te[f] = labels.beta_e[f] ? 1.0 : 0.0;
    }
    Tensor ls = bce_mean(p_start, Tensor::from(std::move(ts), {1, t}));
    Tensor le = bce_mean(p_end, Tensor::from(std::move(te), {1, t}));
    return add(ls, le);
}

}  // namespace segtad
