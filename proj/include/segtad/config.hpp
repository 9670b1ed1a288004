#pragma once

#include <cstdlib>
#include <string>
#include <vector>

#include "segtad/data.hpp"
#include "segtad/io.hpp"
#include "segtad/pdn.hpp"
#include "segtad/pipeline.hpp"
#include "segtad/ssn1d.hpp"

namespace segtad {

// JSON run configuration. Key paths use dots ("pdn.eta"); unknown keys are
// rejected so typos fail loudly. The SEGTAD_SEED environment variable and
// --set overrides win over file values.

struct Config {
    uint64_t seed = 1;
    size_t t = 256;  // working sequence length in snippets

    struct Model {
        size_t c_hidden = 256;
        size_t encoder_layers = 3;
        std::vector<int> dilations{1, 10, 20, 30};
        size_t k_s = 8;
        bool use_ac = true;
        bool use_gc = true;
        bool use_gp = true;
    } model;

    struct PdnKeys {
        int eta = 8;
        int m0 = 50;
        int k = 4;
        double theta_p = 0.1;
        int align_bins = 32;
        std::string edge_mode = "tiou";
        std::string layer_mode = "graph";
        double center_thresh = 8.0;
    } pdn;

    struct Train {
        double lr = 1e-3;
        int lr_drop_epoch = 7;
        int epochs = 15;
        double lambda1 = 1.0;
        double lambda2 = 1.0;
        double lambda3 = 1e-4;
        int batch = 1;
        std::string seg_mode = "multiclass";
    } train;

    struct Infer {
        double nms_sigma = 0.5;
        int keep = 100;
    } infer;

    SyntheticSpec data;

    SsnConfig ssn_config(size_t c_in, size_t num_classes) const {
        SsnConfig cfg;
        cfg.c_in = c_in;
        cfg.c_hidden = model.c_hidden;
        cfg.encoder_layers = model.encoder_layers;
        cfg.dilations = model.dilations;
        cfg.k_s = model.k_s;
        cfg.num_classes = num_classes;
        cfg.use_ac = model.use_ac;
        cfg.use_gc = model.use_gc;
        cfg.use_gp = model.use_gp;
        return cfg;
    }

    PdnConfig pdn_config() const {
        PdnConfig cfg;
        cfg.c_hidden = model.c_hidden;
        cfg.eta = pdn.eta;
        cfg.m0 = pdn.m0;
        cfg.k = pdn.k;
        cfg.theta_p = pdn.theta_p;
        cfg.align_bins = pdn.align_bins;
        cfg.edge_mode = edge_mode_from_string(pdn.edge_mode);
        cfg.layer_mode = layer_mode_from_string(pdn.layer_mode);
        cfg.center_thresh = pdn.center_thresh;
        return cfg;
    }

    TrainConfig train_config() const {
        TrainConfig cfg;
        cfg.lr = train.lr;
        cfg.lr_drop_epoch = train.lr_drop_epoch;
        cfg.epochs = train.epochs;
        cfg.lambda1 = train.lambda1;
        cfg.lambda2 = train.lambda2;
        cfg.lambda3 = train.lambda3;
        cfg.seed = seed;
        cfg.batch = train.batch;
        cfg.seg_mode = seg_loss_mode_from_string(train.seg_mode);
        return cfg;
    }

    InferConfig infer_config() const { return InferConfig{infer.nms_sigma, infer.keep}; }
};

namespace detail {

inline void apply_config_value(Config& cfg, const std::string& path, const json& v) {
    auto as_u = [&](const char* what) {
        check(v.is_number() && v.get<double>() >= 0, "config: ", what,
              " must be a non-negative number");
        return v.get<uint64_t>();
    };
    auto as_i = [&](const char* what) {
        check(v.is_number(), "config: ", what, " must be a number");
        return v.get<int>();
    };
    auto as_d = [&](const char* what) {
        check(v.is_number(), "config: ", what, " must be a number");
        return v.get<double>();
    };
    auto as_b = [&](const char* what) {
        check(v.is_boolean(), "config: ", what, " must be a boolean");
        return v.get<bool>();
    };
    auto as_s = [&](const char* what) {
        check(v.is_string(), "config: ", what, " must be a string");
        return v.get<std::string>();
    };

    if (path == "seed") cfg.seed = as_u("seed");
    else if (path == "t") cfg.t = as_u("t");
    else if (path == "model.c_hidden") cfg.model.c_hidden = as_u(path.c_str());
    else if (path == "model.encoder_layers") cfg.model.encoder_layers = as_u(path.c_str());
    else if (path == "model.dilations") {
        check(v.is_array(), "config: model.dilations must be an array");
        cfg.model.dilations.clear();
        for (const auto& e : v) cfg.model.dilations.push_back(e.get<int>());
    }
    else if (path == "model.k_s") cfg.model.k_s = as_u(path.c_str());
    else if (path == "model.use_ac") cfg.model.use_ac = as_b(path.c_str());
    else if (path == "model.use_gc") cfg.model.use_gc = as_b(path.c_str());
    else if (path == "model.use_gp") cfg.model.use_gp = as_b(path.c_str());
    else if (path == "pdn.eta") cfg.pdn.eta = as_i(path.c_str());
    else if (path == "pdn.m0") cfg.pdn.m0 = as_i(path.c_str());
    else if (path == "pdn.k") cfg.pdn.k = as_i(path.c_str());
    else if (path == "pdn.theta_p") cfg.pdn.theta_p = as_d(path.c_str());
    else if (path == "pdn.align_bins") cfg.pdn.align_bins = as_i(path.c_str());
    else if (path == "pdn.edge_mode") cfg.pdn.edge_mode = as_s(path.c_str());
    else if (path == "pdn.layer_mode") cfg.pdn.layer_mode = as_s(path.c_str());
    else if (path == "pdn.center_thresh") cfg.pdn.center_thresh = as_d(path.c_str());
    else if (path == "train.lr") cfg.train.lr = as_d(path.c_str());
    else if (path == "train.lr_drop_epoch") cfg.train.lr_drop_epoch = as_i(path.c_str());
    else if (path == "train.epochs") cfg.train.epochs = as_i(path.c_str());
    else if (path == "train.lambda1") cfg.train.lambda1 = as_d(path.c_str());
    else if (path == "train.lambda2") cfg.train.lambda2 = as_d(path.c_str());
    else if (path == "train.lambda3") cfg.train.lambda3 = as_d(path.c_str());
    else if (path == "train.batch") cfg.train.batch = as_i(path.c_str());
    else if (path == "train.seg_mode") cfg.train.seg_mode = as_s(path.c_str());
    else if (path == "infer.nms_sigma") cfg.infer.nms_sigma = as_d(path.c_str());
    else if (path == "infer.keep") cfg.infer.keep = as_i(path.c_str());
    else if (path == "data.n_videos") cfg.data.n_videos = as_i(path.c_str());
    else if (path == "data.num_classes") cfg.data.num_classes = as_i(path.c_str());
    else if (path == "data.channels") cfg.data.channels = as_i(path.c_str());
    else if (path == "data.snippets") cfg.data.snippets = as_i(path.c_str());
    else if (path == "data.actions_min") cfg.data.actions_min = as_i(path.c_str());
    else if (path == "data.actions_max") cfg.data.actions_max = as_i(path.c_str());
    else if (path == "data.len_min") cfg.data.len_min = as_i(path.c_str());
    else if (path == "data.len_max") cfg.data.len_max = as_i(path.c_str());
    else if (path == "data.noise_sigma") cfg.data.noise_sigma = as_d(path.c_str());
    else if (path == "data.align") cfg.data.align = as_i(path.c_str());
    else if (path == "data.gap") cfg.data.gap = as_i(path.c_str());
    else fail("config: unknown key '", path, "'");
}

inline void walk_config(Config& cfg, const json& j, const std::string& prefix) {
    for (auto& [key, value] : j.items()) {
        const std::string path = prefix.empty() ? key : prefix + "." + key;
        if (value.is_object())
            walk_config(cfg, value, path);
        else
            apply_config_value(cfg, path, value);
    }
}

}  // namespace detail

inline Config load_config(const std::string& path) {
    Config cfg;
    if (!path.empty()) {
        json j = load_json_file(path);
        check(j.is_object(), "config '", path, "' must be a JSON object");
        detail::walk_config(cfg, j, "");
    }
    return cfg;
}

// "pdn.eta=16" style override; the value is parsed as JSON.
inline void apply_override(Config& cfg, const std::string& kv) {
    const auto eq = kv.find('=');
    check(eq != std::string::npos, "override '", kv, "' is not of the form key=value");
    const std::string key = kv.substr(0, eq);
    const std::string raw = kv.substr(eq + 1);
    json v = json::parse(raw, nullptr, false);
    if (v.is_discarded()) v = json(raw);  // bare strings need no quotes
    detail::apply_config_value(cfg, key, v);
}

// data.seed always follows the top-level seed; SEGTAD_SEED wins over both.
inline void finalize_config(Config& cfg) {
    if (const char* env = std::getenv("SEGTAD_SEED")) {
        char* end = nullptr;
        const unsigned long long v = std::strtoull(env, &end, 10);
        check(end != env && *end == '\0', "SEGTAD_SEED must be an unsigned integer, got '",
              env, "'");
        cfg.seed = static_cast<uint64_t>(v);
    }
    cfg.data.seed = cfg.seed;
}

}  // namespace segtad
