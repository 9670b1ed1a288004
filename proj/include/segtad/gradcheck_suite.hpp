#pragma once

#include <vector>

#include "segtad/gradcheck.hpp"
#include "segtad/pipeline.hpp"

namespace segtad {

// Finite-difference verification of every differentiable operation on
// randomized small shapes, plus the fully composed segmentation + proposal
// network on a tiny instance. Used by the `gradcheck` CLI command and the
// acceptance suite.

namespace detail {

inline Tensor gc_random(Rng& rng, std::vector<size_t> shape, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = rng.uniform(lo, hi);
    return Tensor::from(std::move(v), std::move(shape), true);
}

// deterministic scalarization: same weights for every re-evaluation
inline Tensor gc_scalarize(const Tensor& t, uint64_t seed) {
    Rng rng(seed);
    std::vector<double> w(t.numel());
    for (auto& x : w) x = rng.uniform(-1.0, 1.0);
    return sum_all(mul(t, Tensor::from(std::move(w), t.shape())));
}

}  // namespace detail

inline std::vector<GradCheckReport> run_op_gradchecks(uint64_t seed = 12345, int trials = 10) {
    std::vector<GradCheckReport> reports;
    Rng shape_rng(seed);
    auto merge = [&reports](const GradCheckReport& r) {
        for (auto& existing : reports)
            if (existing.name == r.name) {
                existing.max_rel_err = std::max(existing.max_rel_err, r.max_rel_err);
                existing.checked += r.checked;
                return;
            }
        reports.push_back(r);
    };

    for (int trial = 0; trial < trials; ++trial) {
        Rng rng(shape_rng.next_u64());
        const uint64_t ws = 7000 + static_cast<uint64_t>(trial);
        const size_t r = 1 + static_cast<size_t>(rng.uniform_int(1, 4));
        const size_t c = 1 + static_cast<size_t>(rng.uniform_int(1, 4));
        Tensor a = detail::gc_random(rng, {r, c});
        Tensor b = detail::gc_random(rng, {r, c}, 0.5, 2.0);
        Tensor rv = detail::gc_random(rng, {r, 1});
        Tensor cv = detail::gc_random(rng, {1, c});

        auto op = [&](const char* name, auto make, std::vector<Tensor> params) {
            merge(check_gradients(
                name, [&] { return detail::gc_scalarize(make(), ws); }, params));
        };
        op("add", [&] { return add(a, b); }, {a, b});
        op("sub", [&] { return sub(a, b); }, {a, b});
        op("mul", [&] { return mul(a, b); }, {a, b});
        op("div", [&] { return div(a, b); }, {a, b});
        op("scale", [&] { return scale(a, 1.3); }, {a});
        op("add_scalar", [&] { return add_scalar(a, 0.7); }, {a});
        op("sigmoid", [&] { return sigmoid(a); }, {a});
        op("log", [&] { return log(b); }, {b});
        op("sqrt", [&] { return sqrt(b); }, {b});
        op("relu", [&] { return relu(add_scalar(a, a.values()[0] > 0 ? 0.01 : -0.01)); }, {a});
        op("clamp", [&] { return clamp(b, 0.75, 1.75); }, {b});
        op("transpose", [&] { return transpose(a); }, {a});
        op("sum", [&] { return sum_all(a); }, {a});
        op("row_sum", [&] { return row_sum(a); }, {a});
        op("col_sum", [&] { return col_sum(a); }, {a});
        op("row_add", [&] { return row_add(a, rv); }, {a, rv});
        op("row_scale", [&] { return row_scale(a, rv); }, {a, rv});
        op("col_scale", [&] { return col_scale(a, cv); }, {a, cv});
        op("slice_rows", [&] { return slice_rows(a, 0, std::max<size_t>(1, r - 1)); }, {a});
        op("gather_cols", [&] { return gather_cols(a, {0, static_cast<int>(c - 1)}); }, {a});
        op("softmax_channels", [&] { return softmax_channels(a); }, {a});
        op("global_avg_pool", [&] { return global_avg_pool(a); }, {a});
        op("concat_channels", [&] { return concat_channels({a, b}); }, {a, b});

        // shape-bearing sequence ops
        const size_t t = 6 + static_cast<size_t>(rng.uniform_int(0, 6));
        const size_t cin = 1 + static_cast<size_t>(rng.uniform_int(0, 2));
        const size_t cout = 1 + static_cast<size_t>(rng.uniform_int(0, 2));
        const size_t stride = 1 + static_cast<size_t>(rng.uniform_int(0, 1));
        const size_t dil = 1 + static_cast<size_t>(rng.uniform_int(0, 2));
        Tensor x = detail::gc_random(rng, {cin, t});
        Tensor w = detail::gc_random(rng, {cout, cin, 3});
        Tensor bias = detail::gc_random(rng, {cout});
        op("conv1d", [&] { return conv1d(x, w, bias, stride, dil, dil); }, {x, w, bias});

        Tensor w1 = detail::gc_random(rng, {cin, t});
        op("linear_interp_resize",
           [&] { return linear_interp_resize(w1, 1 + static_cast<size_t>(trial)); }, {w1});

        Tensor ma = detail::gc_random(rng, {r, c});
        Tensor mb = detail::gc_random(rng, {c, r});
        op("matmul", [&] { return matmul(ma, mb); }, {ma, mb});

        op("linear", [&] { return linear(ma, mb, rv); }, {ma, mb, rv});

        // batch norm, training mode
        Tensor g = detail::gc_random(rng, {cin, 1}, 0.5, 1.5);
        Tensor be = detail::gc_random(rng, {cin, 1});
        Tensor rm = Tensor::zeros({cin, 1});
        Tensor rvv = Tensor::full({cin, 1}, 1.0);
        BatchNorm1d bn(g, be, rm, rvv);
        op("batchnorm1d", [&] { return bn.forward(x, true); }, {x, g, be});

        // losses
        Tensor probs = sigmoid(detail::gc_random(rng, {1, t}));
        std::vector<double> target(t);
        for (auto& v : target) v = rng.uniform() < 0.5 ? 0.0 : 1.0;
        Tensor tgt = Tensor::from(std::move(target), {1, t});
        op("bce", [&] { return bce_mean(probs, tgt); }, {probs});

        // snippet-graph edge convolution against its aggregate
        const size_t n = 3 + static_cast<size_t>(rng.uniform_int(0, 3));
        Tensor feat = detail::gc_random(rng, {cin, n});
        Tensor ew = detail::gc_random(rng, {cout, 2 * cin});
        op("edge_conv",
           [&] {
               SnippetGraph graph = build_snippet_graph(feat, 2);
               return edge_conv(feat, matmul(feat, neighbor_mean_matrix(graph.neighbors)), ew);
           },
           {feat, ew});

        // proposal attention chain (graph build + 3 stacked layers happens in
        // the composed model check; here the attention tensor alone)
        op("proposal_attention",
           [&] {
               std::vector<Segment> segs;
               for (size_t i = 0; i < n; ++i)
                   segs.push_back({static_cast<double>(i), static_cast<double>(i + 2)});
               PdnConfig pc;
               pc.c_hidden = cin;
               ProposalGraph graph = build_proposal_graph(relu(feat), segs, pc);
               return graph.attention;
           },
           {feat});
    }
    return reports;
}

// The full 1D segmentation + proposal detection graph on a tiny instance:
// every trainable parameter is probed against central differences through the
// complete joint loss (batch statistics active, all proposals in play).
inline GradCheckReport run_composed_gradcheck(uint64_t seed = 99, size_t max_entries = 0) {
    SyntheticSpec spec;
    spec.n_videos = 1;
    spec.num_classes = 2;
    spec.channels = 4;
    spec.snippets = 16;
    spec.actions_min = 1;
    spec.actions_max = 2;
    spec.len_min = 4;
    spec.len_max = 8;
    spec.align = 4;
    spec.gap = 4;
    spec.noise_sigma = 0.2;
    spec.seed = seed;
    auto videos = generate_synthetic(spec);

    SsnConfig scfg;
    scfg.c_in = 4;
    scfg.c_hidden = 8;
    scfg.encoder_layers = 2;
    scfg.dilations = {1, 2};
    scfg.k_s = 8;  // saturates the 4-node snippet graph, so edges are stable
    scfg.num_classes = 2;
    PdnConfig pcfg;
    pcfg.c_hidden = 8;
    pcfg.eta = 4;
    pcfg.align_bins = 5;
    SegTadModel model(scfg, pcfg, seed);

    TrainConfig tcfg;
    tcfg.lambda1 = 1.0;
    tcfg.lambda2 = 1.0;
    tcfg.lambda3 = 1e-3;
    VideoSample video{videos[0].id, videos[0].features.to_tensor(), videos[0].annotation};

    Rng unused(0);
    auto make_loss = [&] {
        return video_loss(model, video, tcfg, unused, true, false).total;
    };
    return check_gradients("composed_ssn_pdn", make_loss, model.params().trainable(), 1e-5,
                           max_entries);
}

}  // namespace segtad
