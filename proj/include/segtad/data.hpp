#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "segtad/io.hpp"
#include "segtad/nn_ops.hpp"
#include "segtad/rng.hpp"
#include "segtad/tensor.hpp"

namespace segtad {

// Feature file: magic "SGFT", version u32, C u32, T u32, then C*T f32 values
// little-endian, channel-major. Decode(encode(x)) is bitwise exact.

constexpr uint32_t kFeatureVersion = 1;

struct FeatureMatrix {
    uint32_t channels = 0;
    uint32_t snippets = 0;
    std::vector<float> data;  // channel-major [C x T]

    Tensor to_tensor() const {
        std::vector<double> v(data.size());
        for (size_t i = 0; i < data.size(); ++i) v[i] = static_cast<double>(data[i]);
        return Tensor::from(std::move(v), {channels, snippets});
    }
};

inline void save_features(const std::string& path, const FeatureMatrix& f) {
    check(f.data.size() == static_cast<size_t>(f.channels) * f.snippets,
          "feature file: payload length ", f.data.size(), " does not match ",
          f.channels, "x", f.snippets);
    std::ofstream os(path, std::ios::binary);
    check(os.good(), "cannot open '", path, "' for writing");
    os.write("SGFT", 4);
    auto put_u32 = [&os](uint32_t v) {
        unsigned char b[4];
        for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
        os.write(reinterpret_cast<const char*>(b), 4);
    };
    put_u32(kFeatureVersion);
    put_u32(f.channels);
    put_u32(f.snippets);
    for (float x : f.data) {
        uint32_t bits;
        std::memcpy(&bits, &x, 4);
        put_u32(bits);
    }
    check(os.good(), "write to '", path, "' failed");
}

inline FeatureMatrix load_features(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    check(is.good(), "cannot open feature file '", path, "'");
    char magic[4];
    is.read(magic, 4);
    check(is.good() && std::memcmp(magic, "SGFT", 4) == 0,
          "'", path, "' is not an SGFT feature file");
    auto get_u32 = [&is]() {
        unsigned char b[4];
        is.read(reinterpret_cast<char*>(b), 4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
        return v;
    };
    const uint32_t version = get_u32();
    check(version == kFeatureVersion, "feature file '", path, "': unsupported version ",
          version);
    FeatureMatrix f;
    f.channels = get_u32();
    f.snippets = get_u32();
    check(f.channels > 0 && f.snippets > 0, "feature file '", path, "' has empty dimensions");
    f.data.resize(static_cast<size_t>(f.channels) * f.snippets);
    for (auto& x : f.data) {
        const uint32_t bits = get_u32();
        std::memcpy(&x, &bits, 4);
    }
    check(is.good(), "feature file '", path, "' is truncated");
    return f;
}

// ---------------------------------------------------------------------------
// synthetic dataset

// Each class owns one unit basis direction; action frames emit that signature
// plus Gaussian noise, background frames emit pure noise. Actions are placed
// on the snippet grid (optionally a coarser aligned grid) and never overlap.
struct SyntheticSpec {
    int n_videos = 20;
    int num_classes = 3;
    int channels = 16;
    int snippets = 256;
    int actions_min = 1;
    int actions_max = 2;
    int len_min = 32;
    int len_max = 96;
    double noise_sigma = 0.3;
    uint64_t seed = 1;
    int align = 1;    // action starts/lengths are multiples of this
    int gap = 1;      // minimum background snippets between actions

    void validate() const {
        check(n_videos >= 1, "synthetic spec: n_videos must be >= 1");
        check(num_classes >= 1, "synthetic spec: num_classes must be >= 1");
        check(channels >= num_classes, "synthetic spec: need channels >= num_classes for ",
              "orthogonal signatures (", channels, " < ", num_classes, ")");
        check(snippets >= 1, "synthetic spec: snippets must be >= 1");
        check(align >= 1 && gap >= 1, "synthetic spec: align and gap must be >= 1");
        check(actions_min >= 1 && actions_max >= actions_min,
              "synthetic spec: invalid actions per video range");
        check(len_min >= 1 && len_max >= len_min, "synthetic spec: invalid length range");
        check(noise_sigma >= 0.0, "synthetic spec: noise sigma must be >= 0");
    }
};

struct SyntheticVideo {
    std::string id;
    FeatureMatrix features;
    ActionAnnotation annotation;  // seconds; one snippet per second
};

namespace detail {
inline int round_up(int v, int align) { return ((v + align - 1) / align) * align; }
}

inline std::vector<SyntheticVideo> generate_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    const int t = spec.snippets;
    const int align = spec.align;
    const int gap = detail::round_up(spec.gap, align);
    const int len_lo = detail::round_up(std::max(spec.len_min, 1), align);
    const int len_hi = (spec.len_max / align) * align;
    check(len_lo <= len_hi, "synthetic spec: no aligned length inside [", spec.len_min, ",",
          spec.len_max, "] with align ", align);

    std::vector<SyntheticVideo> out;
    for (int v = 0; v < spec.n_videos; ++v) {
        SyntheticVideo video;
        video.id = msg("video_", v < 9 ? "000" : (v < 99 ? "00" : (v < 999 ? "0" : "")), v + 1);
        video.annotation.video_id = video.id;
        video.annotation.duration = static_cast<double>(t);

        const int cls = 1 + static_cast<int>(rng.uniform_int(0, spec.num_classes - 1));
        int want = static_cast<int>(rng.uniform_int(spec.actions_min, spec.actions_max));

        // trim the request until the packing fits, then lay actions out
        // left-to-right spending random slack before each one
        std::vector<int> lens;
        while (true) {
            lens.clear();
            long need = 0;
            for (int a = 0; a < want; ++a) {
                const int len = align * static_cast<int>(rng.uniform_int(len_lo / align,
                                                                         len_hi / align));
                lens.push_back(len);
                need += len + (a > 0 ? gap : 0);
            }
            if (need <= t) break;
            check(want > spec.actions_min || need <= t,
                  "synthetic spec: cannot pack ", want, " actions of length >= ", len_lo,
                  " with gap ", gap, " into ", t, " snippets");
            --want;
        }
        long used = 0;
        for (int len : lens) used += len;
        long slack = t - used - static_cast<long>(gap) * (want > 0 ? want - 1 : 0);
        int cursor = 0;
        for (int a = 0; a < want; ++a) {
            const int extra =
                align * static_cast<int>(rng.uniform_int(0, slack / align));
            slack -= extra;
            const int start = cursor + extra + (a > 0 ? gap : 0);
            video.annotation.actions.push_back(
                {static_cast<double>(start), static_cast<double>(start + lens[a]), cls});
            cursor = start + lens[a];
        }

        video.features.channels = static_cast<uint32_t>(spec.channels);
        video.features.snippets = static_cast<uint32_t>(t);
        video.features.data.assign(static_cast<size_t>(spec.channels) * t, 0.0f);
        std::vector<int> frame_class(t, 0);
        for (const auto& act : video.annotation.actions)
            for (int f = static_cast<int>(act.start); f < static_cast<int>(act.end); ++f)
                frame_class[f] = act.class_id;
        for (int f = 0; f < t; ++f)
            for (int c = 0; c < spec.channels; ++c) {
                double val = rng.normal(0.0, spec.noise_sigma);
                if (frame_class[f] == c + 1) val += 1.0;  // signature e_{class-1}
                video.features.data[static_cast<size_t>(c) * t + f] =
                    static_cast<float>(val);
            }
        out.push_back(std::move(video));
    }
    return out;
}

inline ClassManifest synthetic_manifest(int num_classes) {
    std::vector<std::string> names;
    for (int d = 1; d <= num_classes; ++d)
        names.push_back(msg("class_", d < 10 ? "0" : "", d));
    return ClassManifest(std::move(names));
}

// Writes dataset/{features/*.sgft, annotations.json, classes.json}.
inline void write_synthetic_dataset(const SyntheticSpec& spec, const std::string& dir) {
    namespace fs = std::filesystem;
    const auto videos = generate_synthetic(spec);
    const ClassManifest manifest = synthetic_manifest(spec.num_classes);
    fs::create_directories(fs::path(dir) / "features");
    std::map<std::string, VideoEntry> db;
    for (const auto& v : videos) {
        save_features((fs::path(dir) / "features" / (v.id + ".sgft")).string(), v.features);
        db[v.id] = VideoEntry{v.annotation, "training"};
    }
    save_annotations((fs::path(dir) / "annotations.json").string(), db, manifest);
    save_class_manifest((fs::path(dir) / "classes.json").string(), manifest);
}

// ---------------------------------------------------------------------------
// dataset loading

struct VideoSample {
    std::string id;
    Tensor features;  // [C x T], rescaled to the configured length
    ActionAnnotation annotation;
};

struct Dataset {
    ClassManifest manifest;
    std::vector<VideoSample> videos;  // ordered by video id
    size_t channels = 0;
};

// Loads a dataset directory and rescales every feature sequence to t_target
// snippets by linear interpolation.
inline Dataset load_dataset(const std::string& dir, size_t t_target) {
    namespace fs = std::filesystem;
    Dataset ds;
    ds.manifest = load_class_manifest((fs::path(dir) / "classes.json").string());
    auto db = load_annotations((fs::path(dir) / "annotations.json").string(), ds.manifest);
    for (const auto& [vid, entry] : db) {
        const std::string fpath = (fs::path(dir) / "features" / (vid + ".sgft")).string();
        FeatureMatrix fm = load_features(fpath);
        if (ds.channels == 0) ds.channels = fm.channels;
        check(ds.channels == fm.channels, "feature file '", fpath, "' has ", fm.channels,
              " channels, expected ", ds.channels);
        Tensor x = fm.to_tensor();
        if (x.dim(1) != t_target) x = linear_interp_resize(x, t_target);
        ds.videos.push_back({vid, x, entry.annotation});
    }
    check(!ds.videos.empty(), "dataset '", dir, "' contains no videos");
    return ds;
}

}  // namespace segtad
