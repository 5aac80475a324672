#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "tloc/filter.hpp"
#include "tloc/rng.hpp"
#include "tloc/simworld.hpp"

namespace tloc {

class DatasetError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};
class DatasetVersionError : public DatasetError {
public:
    using DatasetError::DatasetError;
};
class DatasetTruncatedError : public DatasetError {
public:
    using DatasetError::DatasetError;
};
class DatasetChecksumError : public DatasetError {
public:
    using DatasetError::DatasetError;
};

namespace detail {

inline const std::array<uint32_t, 256>& crc32_table() {
    static const std::array<uint32_t, 256> table = [] {
        std::array<uint32_t, 256> t{};
        for (uint32_t i = 0; i < 256; ++i) {
            uint32_t c = i;
            for (int j = 0; j < 8; ++j) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    return table;
}

inline uint32_t crc32_update(uint32_t crc, const void* data, size_t len) {
    const auto* p = static_cast<const unsigned char*>(data);
    const auto& t = crc32_table();
    for (size_t i = 0; i < len; ++i) crc = t[(crc ^ p[i]) & 0xffu] ^ (crc >> 8);
    return crc;
}

inline uint32_t crc32(const void* data, size_t len) {
    return crc32_update(0xFFFFFFFFu, data, len) ^ 0xFFFFFFFFu;
}

inline void append_f32_le(std::vector<unsigned char>& buf, float f) {
    uint32_t u;
    std::memcpy(&u, &f, 4);
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<unsigned char>((u >> (8 * i)) & 0xff));
}

inline float read_f32_le(const unsigned char* p) {
    uint32_t u = 0;
    for (int i = 0; i < 4; ++i) u |= static_cast<uint32_t>(p[i]) << (8 * i);
    float f;
    std::memcpy(&f, &u, 4);
    return f;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// exhaustive scans and likelihood labels
// ---------------------------------------------------------------------------

inline constexpr int kLikelihoodClasses = 16;

// Exhaustive per-state observation table for one scene: the depth image taken
// before the episode plus one noiseless tactile observation per grid state.
// Values are stored as f32 so on-disk round-trips are bitwise exact.
struct ScanRecord {
    int scene_id = 0;
    int h = 0, w = 0, k = 5;
    std::vector<float> depth;  // h*w
    std::vector<float> obs;    // h*w entries of k*k readings, state row-major

    const float* obs_at(int y, int x) const {
        return obs.data() + (static_cast<size_t>(y) * w + x) * k * k;
    }
    bool contact_at(int y, int x, float tol = 1e-9f) const {
        const float* o = obs_at(y, x);
        for (int i = 0; i < k * k; ++i)
            if (o[i] > tol) return true;
        return false;
    }
};

// 16-class discretization of the distance-normalized likelihood field.
struct LikelihoodLabelMap {
    int h = 0, w = 0;
    std::vector<uint8_t> cls;

    LikelihoodLabelMap() = default;
    LikelihoodLabelMap(int h, int w) : h(h), w(w), cls(static_cast<size_t>(h) * w, 0) {}
    uint8_t at(int y, int x) const { return cls[static_cast<size_t>(y) * w + x]; }
    uint8_t& at(int y, int x) { return cls[static_cast<size_t>(y) * w + x]; }
};

// Traverses every row and column, sensing at each state with sigma = 0.
inline ScanRecord scan_scene(const SceneConfig& cfg, const CameraModel& cam, int k = 5) {
    ScanRecord rec;
    rec.h = cfg.h;
    rec.w = cfg.w;
    rec.k = k;
    const HeightMap hm = rasterize(cfg);
    const DepthImage depth = render_depth(hm, cam);
    rec.depth.resize(depth.d.size());
    for (size_t i = 0; i < depth.d.size(); ++i) rec.depth[i] = static_cast<float>(depth.d[i]);
    rec.obs.resize(static_cast<size_t>(cfg.h) * cfg.w * k * k);
    Rng unused(0);  // sigma = 0 never consumes randomness
    size_t at = 0;
    for (int y = 0; y < cfg.h; ++y)
        for (int x = 0; x < cfg.w; ++x) {
            const TactileObservation o = sense(hm, {x, y}, 0.0, unused, k);
            for (double r : o.readings) rec.obs[at++] = static_cast<float>(r);
        }
    return rec;
}

inline ScanRecord scan_scene(const SceneConfig& cfg, int k = 5) {
    return scan_scene(cfg, CameraModel::top_down(10.0), k);
}

inline double observation_distance(const float* a, const float* b, int n) {
    double acc = 0;
    for (int i = 0; i < n; ++i) {
        const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        acc += d * d;
    }
    return std::sqrt(acc);
}

// Self-supervised likelihood field for one query state: Euclidean distances
// from the query's observation to every state's observation, min-max
// normalized so the closest distance maps to 1 and the farthest to 0, then
// discretized into 16 classes (round half away from zero). When every
// distance is equal the field is identically 1 / class 15.
inline std::pair<LikelihoodMap, LikelihoodLabelMap> build_likelihood_map(const ScanRecord& rec,
                                                                         GridState query) {
    if (query.x < 0 || query.x >= rec.w || query.y < 0 || query.y >= rec.h)
        throw ContractViolation("build_likelihood_map: query (" + std::to_string(query.x) + ", " +
                                std::to_string(query.y) + ") outside " + std::to_string(rec.h) +
                                "x" + std::to_string(rec.w));
    const int n = rec.h * rec.w;
    const int kk = rec.k * rec.k;
    const float* qo = rec.obs_at(query.y, query.x);
    std::vector<double> dist(static_cast<size_t>(n));
    double dmin = 0, dmax = 0;
    for (int i = 0; i < n; ++i) {
        dist[i] = observation_distance(qo, rec.obs.data() + static_cast<size_t>(i) * kk, kk);
        if (i == 0) {
            dmin = dmax = dist[0];
        } else {
            dmin = std::min(dmin, dist[i]);
            dmax = std::max(dmax, dist[i]);
        }
    }
    LikelihoodMap map(rec.h, rec.w);
    LikelihoodLabelMap labels(rec.h, rec.w);
    if (dmax == dmin) {
        std::fill(map.v.begin(), map.v.end(), 1.0);
        std::fill(labels.cls.begin(), labels.cls.end(),
                  static_cast<uint8_t>(kLikelihoodClasses - 1));
        return {map, labels};
    }
    const double range = dmax - dmin;
    for (int i = 0; i < n; ++i) {
        const double v = 1.0 - (dist[i] - dmin) / range;
        map.v[i] = v;
        labels.cls[i] = static_cast<uint8_t>(std::floor(v * (kLikelihoodClasses - 1) + 0.5));
    }
    return {map, labels};
}

// ---------------------------------------------------------------------------
// motion transitions
// ---------------------------------------------------------------------------

struct Transition {
    GridState s;
    ActionDir a = ActionDir::North;
    GridState s2;
};

// Random-walk episodes through `step` with the scene's motion noise.
inline std::vector<Transition> collect_transitions(const SceneConfig& cfg, int episodes,
                                                   int length, Rng& rng) {
    std::vector<Transition> out;
    out.reserve(static_cast<size_t>(episodes) * length);
    for (int e = 0; e < episodes; ++e) {
        GridState s{rng.uniform_int(0, cfg.w - 1), rng.uniform_int(0, cfg.h - 1)};
        for (int t = 0; t < length; ++t) {
            const ActionDir a = kAllActions[static_cast<size_t>(rng.uniform_int(0, 3))];
            const GridState s2 = step(s, a, rng, cfg.motion_eps, cfg.h, cfg.w);
            out.push_back({s, a, s2});
            s = s2;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// on-disk dataset
// ---------------------------------------------------------------------------

inline constexpr int kDatasetVersion = 1;

struct SceneEntry {
    int index = 0;
    std::string split;       // train / val / test
    std::string blob_file;   // f32 payload + trailing crc32
    std::string scene_file;  // human-readable SceneConfig
    uint64_t payload_bytes = 0;
    uint32_t crc = 0;
};

struct DatasetManifest {
    int version = kDatasetVersion;
    int h = 0, w = 0, k = 5, n_classes = kLikelihoodClasses;
    uint64_t samples = 0;
    std::string transitions_file;
    uint64_t transition_count = 0;
    std::vector<SceneEntry> scenes;
};

namespace detail {

// blob payload: depth h*w f32, then h*w observations of k*k f32, little-endian
inline std::vector<unsigned char> encode_blob_payload(const ScanRecord& rec) {
    std::vector<unsigned char> buf;
    buf.reserve((rec.depth.size() + rec.obs.size()) * 4);
    for (float f : rec.depth) append_f32_le(buf, f);
    for (float f : rec.obs) append_f32_le(buf, f);
    return buf;
}

}  // namespace detail

inline void write_scene_blob(const std::string& path, const ScanRecord& rec, SceneEntry& entry) {
    const std::vector<unsigned char> payload = detail::encode_blob_payload(rec);
    entry.payload_bytes = payload.size();
    entry.crc = detail::crc32(payload.data(), payload.size());
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DatasetError("cannot write " + path);
    os.write(reinterpret_cast<const char*>(payload.data()),
             static_cast<std::streamsize>(payload.size()));
    unsigned char tail[4];
    for (int i = 0; i < 4; ++i) tail[i] = static_cast<unsigned char>((entry.crc >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(tail), 4);
    if (!os) throw DatasetError("write failed: " + path);
}

inline ScanRecord load_scene_blob(const std::string& dir, const DatasetManifest& m, int index) {
    if (index < 0 || index >= static_cast<int>(m.scenes.size()))
        throw DatasetError("scene index " + std::to_string(index) + " out of range");
    const SceneEntry& e = m.scenes[static_cast<size_t>(index)];
    const std::string path = dir + "/" + e.blob_file;
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DatasetTruncatedError("scene " + std::to_string(index) + ": missing blob " + path);
    std::vector<unsigned char> raw((std::istreambuf_iterator<char>(is)),
                                   std::istreambuf_iterator<char>());
    if (raw.size() != e.payload_bytes + 4)
        throw DatasetTruncatedError("scene " + std::to_string(index) + ": blob " + path + " has " +
                                    std::to_string(raw.size()) + " bytes, expected " +
                                    std::to_string(e.payload_bytes + 4));
    uint32_t stored = 0;
    for (int i = 0; i < 4; ++i)
        stored |= static_cast<uint32_t>(raw[e.payload_bytes + i]) << (8 * i);
    const uint32_t actual = detail::crc32(raw.data(), e.payload_bytes);
    if (stored != actual || stored != e.crc)
        throw DatasetChecksumError("scene " + std::to_string(index) + ": checksum mismatch in " +
                                   path);
    ScanRecord rec;
    rec.scene_id = index;
    rec.h = m.h;
    rec.w = m.w;
    rec.k = m.k;
    const size_t n_depth = static_cast<size_t>(m.h) * m.w;
    const size_t n_obs = n_depth * m.k * m.k;
    if (e.payload_bytes != (n_depth + n_obs) * 4)
        throw DatasetTruncatedError("scene " + std::to_string(index) +
                                    ": payload size does not match grid dims");
    rec.depth.resize(n_depth);
    rec.obs.resize(n_obs);
    for (size_t i = 0; i < n_depth; ++i) rec.depth[i] = detail::read_f32_le(raw.data() + i * 4);
    for (size_t i = 0; i < n_obs; ++i)
        rec.obs[i] = detail::read_f32_le(raw.data() + (n_depth + i) * 4);
    return rec;
}

inline void write_manifest(const std::string& dir, const DatasetManifest& m) {
    std::ofstream os(dir + "/manifest.txt", std::ios::trunc);
    if (!os) throw DatasetError("cannot write manifest in " + dir);
    os << "tloc-dataset v" << m.version << "\n";
    os << "grid " << m.h << " " << m.w << "\n";
    os << "k " << m.k << "\n";
    os << "classes " << m.n_classes << "\n";
    os << "samples " << m.samples << "\n";
    if (!m.transitions_file.empty())
        os << "transitions " << m.transitions_file << " " << m.transition_count << "\n";
    os << "scenes " << m.scenes.size() << "\n";
    char crc_hex[16];
    for (const auto& e : m.scenes) {
        std::snprintf(crc_hex, sizeof(crc_hex), "%08x", e.crc);
        os << "scene " << e.index << " " << e.split << " " << e.blob_file << " " << e.scene_file
           << " " << e.payload_bytes << " " << crc_hex << "\n";
    }
    if (!os) throw DatasetError("manifest write failed in " + dir);
}

inline DatasetManifest load_manifest(const std::string& dir) {
    std::ifstream is(dir + "/manifest.txt");
    if (!is) throw DatasetError("no manifest.txt in " + dir);
    std::string header;
    if (!std::getline(is, header)) throw DatasetTruncatedError("empty manifest in " + dir);
    if (header.rfind("tloc-dataset v", 0) != 0)
        throw DatasetVersionError("not a tloc dataset manifest: " + dir);
    const int version = std::atoi(header.c_str() + 14);
    if (version != kDatasetVersion)
        throw DatasetVersionError("dataset version " + std::to_string(version) +
                                  " unsupported (expected " + std::to_string(kDatasetVersion) + ")");
    DatasetManifest m;
    m.version = version;
    std::string key;
    size_t scene_count = 0;
    while (is >> key) {
        if (key == "grid") {
            if (!(is >> m.h >> m.w)) throw DatasetTruncatedError("malformed grid line");
        } else if (key == "k") {
            if (!(is >> m.k)) throw DatasetTruncatedError("malformed k line");
        } else if (key == "classes") {
            if (!(is >> m.n_classes)) throw DatasetTruncatedError("malformed classes line");
        } else if (key == "samples") {
            if (!(is >> m.samples)) throw DatasetTruncatedError("malformed samples line");
        } else if (key == "transitions") {
            if (!(is >> m.transitions_file >> m.transition_count))
                throw DatasetTruncatedError("malformed transitions line");
        } else if (key == "scenes") {
            if (!(is >> scene_count)) throw DatasetTruncatedError("malformed scenes line");
        } else if (key == "scene") {
            SceneEntry e;
            std::string crc_hex;
            if (!(is >> e.index >> e.split >> e.blob_file >> e.scene_file >> e.payload_bytes >>
                  crc_hex))
                throw DatasetTruncatedError("malformed scene line");
            e.crc = static_cast<uint32_t>(std::strtoul(crc_hex.c_str(), nullptr, 16));
            m.scenes.push_back(std::move(e));
        } else {
            throw DatasetError("unknown manifest key '" + key + "'");
        }
    }
    if (m.scenes.size() != scene_count)
        throw DatasetTruncatedError("manifest lists " + std::to_string(scene_count) +
                                    " scenes but contains " + std::to_string(m.scenes.size()));
    return m;
}

// binary transitions: magic TTRN, u16 version, u64 count, records of
// (u16 x, u16 y, u8 action, u16 x2, u16 y2), trailing crc32 of the records
inline void write_transitions(const std::string& path, const std::vector<Transition>& ts) {
    std::vector<unsigned char> buf;
    buf.reserve(ts.size() * 9);
    auto put16 = [&](uint16_t v) {
        buf.push_back(static_cast<unsigned char>(v & 0xff));
        buf.push_back(static_cast<unsigned char>(v >> 8));
    };
    for (const auto& t : ts) {
        put16(static_cast<uint16_t>(t.s.x));
        put16(static_cast<uint16_t>(t.s.y));
        buf.push_back(static_cast<unsigned char>(t.a));
        put16(static_cast<uint16_t>(t.s2.x));
        put16(static_cast<uint16_t>(t.s2.y));
    }
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DatasetError("cannot write " + path);
    os.write("TTRN", 4);
    const unsigned char version[2] = {1, 0};
    os.write(reinterpret_cast<const char*>(version), 2);
    unsigned char cnt[8];
    const uint64_t n = ts.size();
    for (int i = 0; i < 8; ++i) cnt[i] = static_cast<unsigned char>((n >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(cnt), 8);
    os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    const uint32_t crc = detail::crc32(buf.data(), buf.size());
    unsigned char tail[4];
    for (int i = 0; i < 4; ++i) tail[i] = static_cast<unsigned char>((crc >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(tail), 4);
    if (!os) throw DatasetError("write failed: " + path);
}

inline std::vector<Transition> load_transitions(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DatasetTruncatedError("missing transitions file " + path);
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "TTRN", 4) != 0)
        throw DatasetVersionError("bad magic in " + path);
    unsigned char vb[2];
    if (!is.read(reinterpret_cast<char*>(vb), 2)) throw DatasetTruncatedError("truncated " + path);
    if (vb[0] != 1 || vb[1] != 0)
        throw DatasetVersionError("unsupported transitions version in " + path);
    unsigned char cnt[8];
    if (!is.read(reinterpret_cast<char*>(cnt), 8)) throw DatasetTruncatedError("truncated " + path);
    uint64_t n = 0;
    for (int i = 0; i < 8; ++i) n |= static_cast<uint64_t>(cnt[i]) << (8 * i);
    std::vector<unsigned char> buf(n * 9);
    if (!is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size())))
        throw DatasetTruncatedError("truncated records in " + path);
    unsigned char tail[4];
    if (!is.read(reinterpret_cast<char*>(tail), 4))
        throw DatasetTruncatedError("missing checksum in " + path);
    uint32_t stored = 0;
    for (int i = 0; i < 4; ++i) stored |= static_cast<uint32_t>(tail[i]) << (8 * i);
    if (stored != detail::crc32(buf.data(), buf.size()))
        throw DatasetChecksumError("transitions checksum mismatch in " + path);
    std::vector<Transition> ts(n);
    auto get16 = [&](size_t off) {
        return static_cast<int>(buf[off] | (static_cast<uint16_t>(buf[off + 1]) << 8));
    };
    for (uint64_t i = 0; i < n; ++i) {
        const size_t off = i * 9;
        ts[i].s = {get16(off), get16(off + 2)};
        ts[i].a = static_cast<ActionDir>(buf[off + 4]);
        ts[i].s2 = {get16(off + 5), get16(off + 7)};
    }
    return ts;
}

// ---------------------------------------------------------------------------
// dataset construction pipeline
// ---------------------------------------------------------------------------

struct DatasetGenConfig {
    int h = 32, w = 32, k = 5;
    int train_scenes = 300, val_scenes = 30, test_scenes = 50;
    ObjectFamily family = ObjectFamily::Primitive;
    uint64_t seed = 1;
    double motion_eps = 0.1;
    double sensor_sigma = 0.0;
    uint64_t transition_count = 100000;
    int transition_episode_len = 64;
};

// Generates, scans and writes a full dataset directory: per-scene blobs and
// scene files, a transitions file, and the manifest.
inline DatasetManifest build_dataset(const std::string& dir, const DatasetGenConfig& cfg,
                                     const CameraModel& cam = CameraModel::top_down(10.0)) {
    std::filesystem::create_directories(dir);
    DatasetManifest m;
    m.h = cfg.h;
    m.w = cfg.w;
    m.k = cfg.k;
    const int total = cfg.train_scenes + cfg.val_scenes + cfg.test_scenes;
    const SceneGenParams gen_params = SceneGenParams::for_grid(cfg.h, cfg.w);
    for (int i = 0; i < total; ++i) {
        SceneConfig scene = generate_scene_retry(split_seed(cfg.seed, static_cast<uint64_t>(i)),
                                                 cfg.family, cfg.h, cfg.w, gen_params);
        scene.motion_eps = cfg.motion_eps;
        scene.sensor_sigma = cfg.sensor_sigma;
        ScanRecord rec = scan_scene(scene, cam, cfg.k);
        rec.scene_id = i;
        char blob[32], scene_name[32];
        std::snprintf(blob, sizeof(blob), "scene_%05d.bin", i);
        std::snprintf(scene_name, sizeof(scene_name), "scene_%05d.scene", i);
        SceneEntry e;
        e.index = i;
        e.split = i < cfg.train_scenes ? "train"
                  : i < cfg.train_scenes + cfg.val_scenes ? "val"
                                                          : "test";
        e.blob_file = blob;
        e.scene_file = scene_name;
        write_scene_blob(dir + "/" + e.blob_file, rec, e);
        std::ofstream os(dir + "/" + e.scene_file, std::ios::trunc);
        if (!os) throw DatasetError("cannot write " + e.scene_file);
        write_scene(os, scene);
        m.samples += static_cast<uint64_t>(cfg.h) * cfg.w;
        m.scenes.push_back(std::move(e));
    }
    if (cfg.transition_count > 0) {
        SceneConfig walk;
        walk.h = cfg.h;
        walk.w = cfg.w;
        walk.motion_eps = cfg.motion_eps;
        Rng rng(split_seed(cfg.seed, 0x7A115ull));
        const int episodes = static_cast<int>(
            (cfg.transition_count + cfg.transition_episode_len - 1) / cfg.transition_episode_len);
        auto ts = collect_transitions(walk, episodes, cfg.transition_episode_len, rng);
        ts.resize(cfg.transition_count);
        m.transitions_file = "transitions.bin";
        m.transition_count = ts.size();
        write_transitions(dir + "/" + m.transitions_file, ts);
    }
    write_manifest(dir, m);
    return m;
}

// Directory-backed dataset handle: manifest plus on-demand scene access.
struct Dataset {
    std::string dir;
    DatasetManifest manifest;

    static Dataset open(const std::string& dir) { return {dir, load_manifest(dir)}; }

    ScanRecord scan(int index) const { return load_scene_blob(dir, manifest, index); }

    SceneConfig scene_config(int index) const {
        const auto& e = manifest.scenes.at(static_cast<size_t>(index));
        std::ifstream is(dir + "/" + e.scene_file);
        if (!is)
            throw DatasetTruncatedError("scene " + std::to_string(index) + ": missing " +
                                        e.scene_file);
        return read_scene(is);
    }

    std::vector<Transition> transitions() const {
        if (manifest.transitions_file.empty()) return {};
        return load_transitions(dir + "/" + manifest.transitions_file);
    }

    std::vector<int> split_indices(const std::string& split) const {
        std::vector<int> out;
        for (const auto& e : manifest.scenes)
            if (e.split == split) out.push_back(e.index);
        return out;
    }
};

}  // namespace tloc
