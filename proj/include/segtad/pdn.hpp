#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "segtad/labels.hpp"
#include "segtad/nn_ops.hpp"
#include "segtad/params.hpp"
#include "segtad/rng.hpp"
#include "segtad/ssn1d.hpp"

namespace segtad {

// Proposal detection network: sparse segment enumeration over the sequence
// grid, interpolated feature alignment, a proposal graph with cosine
// attention, SAGE-style neighborhood sampling for training, a stack of edge
// convolutions and the two-score detection head.

enum class EdgeMode { kTiou, kCenterDistance };
enum class LayerMode { kGraph, kConv1x1 };

inline EdgeMode edge_mode_from_string(const std::string& s) {
    if (s == "tiou") return EdgeMode::kTiou;
    if (s == "center_distance") return EdgeMode::kCenterDistance;
    fail("unknown edge mode '", s, "' (expected tiou|center_distance)");
}

inline LayerMode layer_mode_from_string(const std::string& s) {
    if (s == "graph") return LayerMode::kGraph;
    if (s == "conv1x1") return LayerMode::kConv1x1;
    fail("unknown layer mode '", s, "' (expected graph|conv1x1)");
}

struct PdnConfig {
    size_t c_hidden = 256;
    int eta = 8;              // sparsity step of the proposal pattern
    int m0 = 50;              // seed count for sampling
    int k = 4;                // neighbor fan-out for sampling
    double theta_p = 0.1;     // tIoU edge threshold
    int align_bins = 32;      // interpolation samples per proposal
    EdgeMode edge_mode = EdgeMode::kTiou;
    LayerMode layer_mode = LayerMode::kGraph;
    double center_thresh = 8.0;  // snippet units, center-distance edge mode

    void validate() const {
        check(c_hidden >= 1, "pdn config: c_hidden must be >= 1");
        check(eta >= 1, "pdn config: eta must be >= 1");
        check(m0 >= 1, "pdn config: m0 must be >= 1");
        check(k >= 1, "pdn config: k must be >= 1");
        check(align_bins >= 1, "pdn config: align_bins must be >= 1");
        check(theta_p >= 0.0, "pdn config: theta_p must be >= 0");
        check(center_thresh > 0.0, "pdn config: center_thresh must be > 0");
    }
};

// One candidate segment: starts at snippet `start` and spans `len` snippets.
struct SpanProposal {
    int start = 0;
    int len = 0;
    Segment segment() const {
        return Segment{static_cast<double>(start), static_cast<double>(start + len)};
    }
};

struct ProposalPattern {
    size_t l_seq = 0;
    int eta = 1;
    std::vector<SpanProposal> proposals;  // lexicographic in (start, len)
};

// All (start, len) with start % eta == 0, len % eta == 0, len >= eta and
// start + len <= L_seq, in lexicographic order.
inline ProposalPattern gen_sparse_pattern(size_t l_seq, int eta) {
    check(eta >= 1, "sparse pattern: eta must be >= 1, got ", eta);
    check(static_cast<size_t>(eta) <= l_seq, "sparse pattern: eta ", eta,
          " exceeds sequence length ", l_seq, ", pattern would be empty");
    ProposalPattern pat;
    pat.l_seq = l_seq;
    pat.eta = eta;
    for (size_t i = 0; i + static_cast<size_t>(eta) <= l_seq; i += static_cast<size_t>(eta))
        for (size_t j = static_cast<size_t>(eta); i + j <= l_seq; j += static_cast<size_t>(eta))
            pat.proposals.push_back({static_cast<int>(i), static_cast<int>(j)});
    return pat;
}

// Interpolated sampling operator: for each proposal, `bins` equally spaced
// positions across [start, start+len] averaged together. Returned pre-
// projection features have shape [C x M]. Positions are clamped to the valid
// column range [0, T-1].
inline Tensor align_sample(const Tensor& features, const ProposalPattern& pattern, int bins) {
    check(features.rank() == 2, "align: features must be rank-2 [C x T]");
    check(bins >= 1, "align: bins must be >= 1");
    const size_t t = features.dim(1);
    const size_t m = pattern.proposals.size();
    check(m >= 1, "align: empty proposal pattern");
    check(pattern.l_seq <= t, "align: pattern length ", pattern.l_seq,
          " exceeds feature length ", t);
    std::vector<double> s(t * m, 0.0);
    const double w = 1.0 / static_cast<double>(bins);
    for (size_t p = 0; p < m; ++p) {
        const auto& prop = pattern.proposals[p];
        for (int b = 0; b < bins; ++b) {
            double pos = bins > 1 ? static_cast<double>(prop.start) +
                                        static_cast<double>(b) * prop.len /
                                            static_cast<double>(bins - 1)
                                  : static_cast<double>(prop.start) + prop.len / 2.0;
            pos = std::min(std::max(pos, 0.0), static_cast<double>(t - 1));
            const size_t l = static_cast<size_t>(pos);
            const double f = pos - static_cast<double>(l);
            if (l + 1 < t) {
                s[l * m + p] += (1.0 - f) * w;
                s[(l + 1) * m + p] += f * w;
            } else {
                s[l * m + p] += w;
            }
        }
    }
    return matmul(features, Tensor::from(std::move(s), {t, m}));
}

// Proposal graph with symmetric edges and cosine attention. `edges` flags the
// declared edges; `attention` is the differentiable masked cosine matrix used
// for aggregation, where isolated nodes carry a self-loop so they aggregate
// their own feature and the edge-difference term vanishes.
struct ProposalGraph {
    size_t m = 0;
    std::vector<uint8_t> edges;             // m*m, no self edges
    std::vector<double> attention_values;   // cosine on edges, 0 elsewhere
    Tensor attention;                       // [M x M], on the tape
};

constexpr double kAttnEps = 1e-12;

inline ProposalGraph build_proposal_graph(const Tensor& features,
                                          const std::vector<Segment>& segments,
                                          const PdnConfig& cfg) {
    check(features.rank() == 2, "proposal graph: features must be rank-2 [C x M]");
    const size_t m = features.dim(1);
    check(segments.size() == m, "proposal graph: ", segments.size(),
          " segments for ", m, " feature columns");
    check(m >= 1, "proposal graph: empty proposal set");
    ProposalGraph graph;
    graph.m = m;
    graph.edges.assign(m * m, 0);
    for (size_t i = 0; i < m; ++i)
        for (size_t j = i + 1; j < m; ++j) {
            bool connected = false;
            if (cfg.edge_mode == EdgeMode::kTiou) {
                connected = tiou(segments[i], segments[j]) > cfg.theta_p;
            } else {
                const double ci = 0.5 * (segments[i].start + segments[i].end);
                const double cj = 0.5 * (segments[j].start + segments[j].end);
                connected = std::abs(ci - cj) < cfg.center_thresh;
            }
            if (connected) {
                graph.edges[i * m + j] = 1;
                graph.edges[j * m + i] = 1;
            }
        }

    // plain cosine values for inspection: zero-norm features get attention 0
    const size_t c = features.dim(0);
    const auto& fv = features.values();
    std::vector<double> norms(m, 0.0);
    for (size_t j = 0; j < m; ++j) {
        double sq = 0.0;
        for (size_t ch = 0; ch < c; ++ch) sq += fv[ch * m + j] * fv[ch * m + j];
        norms[j] = std::sqrt(sq);
    }
    graph.attention_values.assign(m * m, 0.0);
    for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < m; ++j) {
            if (!graph.edges[i * m + j]) continue;
            if (norms[i] == 0.0 || norms[j] == 0.0) continue;
            double dot = 0.0;
            for (size_t ch = 0; ch < c; ++ch) dot += fv[ch * m + i] * fv[ch * m + j];
            graph.attention_values[i * m + j] = dot / (norms[i] * norms[j]);
        }

    // differentiable attention: epsilon-guarded column normalization, masked
    // by the edge structure plus self-loops on isolated nodes
    std::vector<double> mask(m * m, 0.0);
    for (size_t i = 0; i < m; ++i) {
        bool isolated = true;
        for (size_t j = 0; j < m; ++j)
            if (graph.edges[i * m + j]) {
                mask[i * m + j] = 1.0;
                isolated = false;
            }
        if (isolated) mask[i * m + i] = 1.0;
    }
    Tensor inv_norm = div(Tensor::full({1, m}, 1.0),
                          sqrt(add_scalar(col_sum(mul(features, features)), kAttnEps)));
    Tensor unit = col_scale(features, inv_norm);
    Tensor cosine = matmul(transpose(unit), unit);
    graph.attention = mul(cosine, Tensor::from(std::move(mask), {m, m}));
    return graph;
}

// Seed-plus-two-hop neighborhood sampling over the tIoU top-K relation.
// Returns sorted unique indices; size is bounded by M0 * (1 + K + K^2).
inline std::vector<int> sage_sample(const std::vector<Segment>& segments,
                                    const ProposalLabels& labels, int m0, int k, Rng& rng) {
    const size_t m = segments.size();
    check(m >= 1, "sage_sample: empty proposal set");
    check(labels.h_cls.size() == m, "sage_sample: labels size ", labels.h_cls.size(),
          " does not match proposal count ", m);
    check(m0 >= 1 && k >= 1, "sage_sample: m0 and k must be >= 1");

    // full similarity order per node: tIoU descending, index ascending
    std::vector<std::vector<int>> order(m);
    {
        std::vector<std::pair<double, int>> cand;
        for (size_t i = 0; i < m; ++i) {
            cand.clear();
            for (size_t j = 0; j < m; ++j) {
                if (j == i) continue;
                cand.emplace_back(tiou(segments[i], segments[j]), static_cast<int>(j));
            }
            std::sort(cand.begin(), cand.end(), [](const auto& a, const auto& b) {
                if (a.first != b.first) return a.first > b.first;
                return a.second < b.second;
            });
            order[i].reserve(cand.size());
            for (auto& [s, j] : cand) order[i].push_back(j);
        }
    }

    auto pick = [&rng](std::vector<int>& pool, size_t want) {
        std::vector<int> out;
        const size_t take = std::min(want, pool.size());
        for (size_t i = 0; i < take; ++i) {
            const size_t j = static_cast<size_t>(
                rng.uniform_int(static_cast<int64_t>(i), static_cast<int64_t>(pool.size()) - 1));
            std::swap(pool[i], pool[j]);
            out.push_back(pool[i]);
        }
        return out;
    };

    std::vector<int> positives, negatives;
    for (size_t i = 0; i < m; ++i)
        (labels.h_cls[i] ? positives : negatives).push_back(static_cast<int>(i));
    const size_t half = static_cast<size_t>(m0) / 2 + static_cast<size_t>(m0) % 2;
    std::vector<int> seeds = pick(positives, half);
    std::vector<int> neg_seeds = pick(negatives, static_cast<size_t>(m0) / 2);
    seeds.insert(seeds.end(), neg_seeds.begin(), neg_seeds.end());

    std::vector<uint8_t> listed(m, 0);
    std::vector<int> sample;
    auto add = [&](int idx) {
        if (listed[static_cast<size_t>(idx)]) return false;
        listed[static_cast<size_t>(idx)] = 1;
        sample.push_back(idx);
        return true;
    };
    std::vector<int> hop1;
    for (int s : seeds) add(s);
    for (int s : seeds) {
        int taken = 0;
        for (int nb : order[static_cast<size_t>(s)]) {
            if (taken == k) break;
            ++taken;
            if (add(nb)) hop1.push_back(nb);
        }
    }
    for (int nb : hop1) {
        int taken = 0;
        for (int c : order[static_cast<size_t>(nb)]) {
            if (taken == k) break;
            if (add(c)) ++taken;  // top-k drawn from proposals not yet listed
        }
    }
    std::sort(sample.begin(), sample.end());
    return sample;
}

struct PdnScores {
    Tensor s1;  // completeness (tIoU regression) score, [1 x M]
    Tensor s2;  // actionness classification score, [1 x M]
};

class Pdn {
public:
    Pdn(const PdnConfig& cfg, ParamStore& store, Rng& rng) : cfg_(cfg) {
        cfg_.validate();
        const size_t ch = cfg_.c_hidden;
        align_w_ = store.add("pdn.align.weight", {ch, ch}, rng, glorot_bound(ch, ch));
        align_b_ = store.add_zeros("pdn.align.bias", {ch, 1});
        for (int l = 0; l < 3; ++l) {
            const std::string base = msg("pdn.layer", l + 1);
            if (cfg_.layer_mode == LayerMode::kGraph) {
                layer_w_[l] = store.add(base + ".weight", {ch, 2 * ch}, rng,
                                        glorot_bound(2 * ch, ch));
            } else {
                layer_w_[l] = store.add(base + ".weight", {ch, ch}, rng, glorot_bound(ch, ch));
                layer_b_[l] = store.add_zeros(base + ".bias", {ch, 1});
            }
        }
        det_w_ = store.add("pdn.det.weight", {2, ch}, rng, glorot_bound(ch, 2));
        det_b_ = store.add_zeros("pdn.det.bias", {2, 1});
    }

    const PdnConfig& config() const { return cfg_; }

    // interpolated bin averaging followed by a shared projection
    Tensor align_features(const Tensor& y, const ProposalPattern& pattern) const {
        return relu(linear(align_w_, align_sample(y, pattern, cfg_.align_bins), align_b_));
    }

    // three stacked edge convolutions with attention-weighted, row-normalized
    // aggregation (or independent 1x1 convolutions in the ablation mode)
    Tensor forward(const Tensor& features, const ProposalGraph& graph) const {
        Tensor h = features;
        if (cfg_.layer_mode == LayerMode::kConv1x1) {
            for (int l = 0; l < 3; ++l) h = relu(linear(layer_w_[l], h, layer_b_[l]));
            return h;
        }
        const size_t m = graph.m;
        check(features.dim(1) == m, "pdn forward: feature columns ", features.dim(1),
              " do not match graph size ", m);
        Tensor inv_deg = div(Tensor::full({m, 1}, 1.0),
                             add_scalar(row_sum(graph.attention), kAttnEps));
        Tensor agg_op = transpose(row_scale(graph.attention, inv_deg));
        for (int l = 0; l < 3; ++l)
            h = relu(edge_conv(h, matmul(h, agg_op), layer_w_[l]));
        return h;
    }

    PdnScores det_head(const Tensor& features) const {
        Tensor s = sigmoid(linear(det_w_, features, det_b_));
        return {slice_rows(s, 0, 1), slice_rows(s, 1, 2)};
    }

private:
    PdnConfig cfg_;
    Tensor align_w_, align_b_;
    Tensor layer_w_[3], layer_b_[3];
    Tensor det_w_, det_b_;
};

// Mean squared error of s1 against the tIoU targets plus binary cross-entropy
// of s2 against the positive/negative labels.
inline Tensor det_loss(const PdnScores& scores, const ProposalLabels& labels) {
    const size_t m = labels.h_reg.size();
    check(scores.s1.numel() == m && scores.s2.numel() == m,
          "det_loss: score count does not match ", m, " labels");
    std::vector<double> reg(labels.h_reg);
    std::vector<double> cls(m);
    for (size_t i = 0; i < m; ++i) cls[i] = labels.h_cls[i] ? 1.0 : 0.0;
    Tensor diff = sub(scores.s1, Tensor::from(std::move(reg), {1, m}));
    Tensor l_reg = scale(sum_all(mul(diff, diff)), 1.0 / static_cast<double>(m));
    Tensor l_cls = bce_mean(scores.s2, Tensor::from(std::move(cls), {1, m}));
    return add(l_reg, l_cls);
}

}  // namespace segtad
