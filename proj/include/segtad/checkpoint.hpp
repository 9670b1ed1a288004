#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "segtad/params.hpp"

namespace segtad {

// Binary checkpoint container. Layout:
//   magic "STAD", format version u32, entry count u32, then per entry:
//   name length u16, UTF-8 name, rank u8, dims u32 each, f64 values.
// All integers and floats little-endian. Round-trips exactly.

namespace detail {

inline void put_u16(std::ostream& os, uint16_t v) {
    unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>(v >> 8)};
    os.write(reinterpret_cast<const char*>(b), 2);
}

inline void put_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_f64(std::ostream& os, double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, 8);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 8);
}

inline uint16_t get_u16(std::istream& is) {
    unsigned char b[2];
    is.read(reinterpret_cast<char*>(b), 2);
    return static_cast<uint16_t>(b[0] | (b[1] << 8));
}

inline uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
    return v;
}

inline double get_f64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<uint64_t>(b[i]) << (8 * i);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

}  // namespace detail

constexpr uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(const std::string& path, const ParamStore& store) {
    std::ofstream os(path, std::ios::binary);
    check(os.good(), "checkpoint: cannot open '", path, "' for writing");
    os.write("STAD", 4);
    detail::put_u32(os, kCheckpointVersion);
    detail::put_u32(os, static_cast<uint32_t>(store.items().size()));
    for (const auto& p : store.items()) {
        check(p.name.size() <= 0xffff, "checkpoint: parameter name too long: ", p.name);
        detail::put_u16(os, static_cast<uint16_t>(p.name.size()));
        os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
        const auto& shape = p.tensor.shape();
        check(shape.size() <= 0xff, "checkpoint: rank too large for ", p.name);
        os.put(static_cast<char>(shape.size()));
        for (size_t d : shape) detail::put_u32(os, static_cast<uint32_t>(d));
        for (double v : p.tensor.values()) detail::put_f64(os, v);
    }
    check(os.good(), "checkpoint: write to '", path, "' failed");
}

// Loads values into an existing store; names and shapes must match the
// registered parameters exactly.
inline void load_checkpoint(const std::string& path, ParamStore& store) {
    std::ifstream is(path, std::ios::binary);
    check(is.good(), "checkpoint: cannot open '", path, "'");
    char magic[4];
    is.read(magic, 4);
    check(is.good() && std::memcmp(magic, "STAD", 4) == 0,
          "checkpoint: '", path, "' is not a STAD file");
    const uint32_t version = detail::get_u32(is);
    check(version == kCheckpointVersion, "checkpoint: unsupported format version ", version);
    const uint32_t count = detail::get_u32(is);
    size_t loaded = 0;
    for (uint32_t e = 0; e < count; ++e) {
        const uint16_t name_len = detail::get_u16(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        const unsigned rank = static_cast<unsigned char>(is.get());
        std::vector<size_t> shape(rank);
        size_t numel = 1;
        for (unsigned i = 0; i < rank; ++i) {
            shape[i] = detail::get_u32(is);
            numel *= shape[i];
        }
        std::vector<double> values(numel);
        for (size_t i = 0; i < numel; ++i) values[i] = detail::get_f64(is);
        check(is.good(), "checkpoint: truncated file '", path, "'");
        Parameter* p = store.find(name);
        check(p != nullptr, "checkpoint: unknown parameter '", name, "'");
        check(p->tensor.shape() == shape, "checkpoint: shape mismatch for '", name, "'");
        p->tensor.values() = std::move(values);
        ++loaded;
    }
    check(loaded == store.items().size(), "checkpoint: file has ", loaded,
          " entries, model expects ", store.items().size());
}

}  // namespace segtad
