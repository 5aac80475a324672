#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace tloc {

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Named f32 array; the unit of the TLOC checkpoint format.
struct CheckpointEntry {
    std::string name;
    std::vector<int> dims;
    std::vector<float> values;
};

namespace detail {

inline void put_u16(std::ostream& os, uint16_t v) {
    const unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                                static_cast<unsigned char>(v >> 8)};
    os.write(reinterpret_cast<const char*>(b), 2);
}

inline void put_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_f32(std::ostream& os, float f) {
    uint32_t u;
    std::memcpy(&u, &f, 4);
    put_u32(os, u);
}

inline bool get_u16(std::istream& is, uint16_t& v) {
    unsigned char b[2];
    if (!is.read(reinterpret_cast<char*>(b), 2)) return false;
    v = static_cast<uint16_t>(b[0] | (b[1] << 8));
    return true;
}

inline bool get_u32(std::istream& is, uint32_t& v) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) return false;
    v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
    return true;
}

inline bool get_f32(std::istream& is, float& f) {
    uint32_t u;
    if (!get_u32(is, u)) return false;
    std::memcpy(&f, &u, 4);
    return true;
}

}  // namespace detail

inline constexpr uint16_t kCheckpointVersion = 1;

// Layout: magic "TLOC", u16 version, then an ordered entry sequence to EOF.
// Entry: u32 name length, name bytes, u32 rank, u32 dims, f32 values (all LE).
inline void write_checkpoint(const std::string& path, const std::vector<CheckpointEntry>& entries) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw CheckpointError("cannot open checkpoint for writing: " + path);
    os.write("TLOC", 4);
    detail::put_u16(os, kCheckpointVersion);
    for (const auto& e : entries) {
        detail::put_u32(os, static_cast<uint32_t>(e.name.size()));
        os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
        detail::put_u32(os, static_cast<uint32_t>(e.dims.size()));
        size_t n = 1;
        for (int d : e.dims) {
            detail::put_u32(os, static_cast<uint32_t>(d));
            n *= static_cast<size_t>(d);
        }
        if (n != e.values.size())
            throw CheckpointError("entry '" + e.name + "': dims do not match value count");
        for (float f : e.values) detail::put_f32(os, f);
    }
    if (!os) throw CheckpointError("write failed: " + path);
}

inline std::vector<CheckpointEntry> read_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw CheckpointError("cannot open checkpoint: " + path);
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "TLOC", 4) != 0)
        throw CheckpointError("bad magic in " + path + " (not a TLOC checkpoint)");
    uint16_t version;
    if (!detail::get_u16(is, version)) throw CheckpointError("truncated header in " + path);
    if (version != kCheckpointVersion)
        throw CheckpointError("unsupported checkpoint version " + std::to_string(version) +
                              " in " + path);
    std::vector<CheckpointEntry> entries;
    for (;;) {
        uint32_t name_len;
        if (!detail::get_u32(is, name_len)) break;  // clean EOF
        CheckpointEntry e;
        e.name.resize(name_len);
        if (!is.read(e.name.data(), name_len)) throw CheckpointError("truncated entry name in " + path);
        uint32_t rank;
        if (!detail::get_u32(is, rank)) throw CheckpointError("truncated entry '" + e.name + "'");
        size_t n = 1;
        for (uint32_t i = 0; i < rank; ++i) {
            uint32_t d;
            if (!detail::get_u32(is, d)) throw CheckpointError("truncated dims of '" + e.name + "'");
            e.dims.push_back(static_cast<int>(d));
            n *= d;
        }
        e.values.resize(n);
        for (size_t i = 0; i < n; ++i)
            if (!detail::get_f32(is, e.values[i]))
                throw CheckpointError("truncated values of '" + e.name + "'");
        entries.push_back(std::move(e));
    }
    return entries;
}

inline const CheckpointEntry* find_entry(const std::vector<CheckpointEntry>& entries,
                                         const std::string& name) {
    for (const auto& e : entries)
        if (e.name == name) return &e;
    return nullptr;
}

inline const CheckpointEntry& require_entry(const std::vector<CheckpointEntry>& entries,
                                            const std::string& name, const std::string& path) {
    const CheckpointEntry* e = find_entry(entries, name);
    if (!e) throw CheckpointError("checkpoint " + path + " is missing entry '" + name + "'");
    return *e;
}

}  // namespace tloc
