#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tloc/filter.hpp"
#include "tloc/rng.hpp"

namespace tloc {

class ScenePlacementError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ProjectionError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class SceneFormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class ObjectShape : uint8_t { Box = 0, Sphere = 1, Cylinder = 2, Capsule = 3, Composite = 4 };

inline const char* shape_name(ObjectShape s) {
    switch (s) {
        case ObjectShape::Box: return "box";
        case ObjectShape::Sphere: return "sphere";
        case ObjectShape::Cylinder: return "cylinder";
        case ObjectShape::Capsule: return "capsule";
        case ObjectShape::Composite: return "composite";
    }
    return "?";
}

// One tabletop object. Centers and sizes are in grid cells, heights in world
// units. Field usage depends on the shape; composites carry their fused parts
// with absolute centers.
struct ObjectSpec {
    ObjectShape shape = ObjectShape::Box;
    double cx = 0, cy = 0;
    double hx = 1, hy = 1;      // box half-extents
    double radius = 1;          // sphere / cylinder / capsule
    double half_len = 1;        // capsule core half-length
    int axis = 0;               // capsule orientation: 0 = along x, 1 = along y
    double height = 1;          // plateau or apex height
    std::vector<ObjectSpec> parts;

    static ObjectSpec box(double cx, double cy, double hx, double hy, double height) {
        ObjectSpec o;
        o.shape = ObjectShape::Box;
        o.cx = cx; o.cy = cy; o.hx = hx; o.hy = hy; o.height = height;
        return o;
    }
    static ObjectSpec sphere(double cx, double cy, double radius, double height) {
        ObjectSpec o;
        o.shape = ObjectShape::Sphere;
        o.cx = cx; o.cy = cy; o.radius = radius; o.height = height;
        return o;
    }
    static ObjectSpec cylinder(double cx, double cy, double radius, double height) {
        ObjectSpec o;
        o.shape = ObjectShape::Cylinder;
        o.cx = cx; o.cy = cy; o.radius = radius; o.height = height;
        return o;
    }
    static ObjectSpec capsule(double cx, double cy, int axis, double half_len, double radius,
                              double height) {
        ObjectSpec o;
        o.shape = ObjectShape::Capsule;
        o.cx = cx; o.cy = cy; o.axis = axis; o.half_len = half_len;
        o.radius = radius; o.height = height;
        return o;
    }
    static ObjectSpec composite(std::vector<ObjectSpec> parts) {
        ObjectSpec o;
        o.shape = ObjectShape::Composite;
        o.parts = std::move(parts);
        double sx = 0, sy = 0;
        for (const auto& p : o.parts) { sx += p.cx; sy += p.cy; }
        if (!o.parts.empty()) { o.cx = sx / o.parts.size(); o.cy = sy / o.parts.size(); }
        return o;
    }

    // radius of the bounding circle around (cx, cy)
    double reach() const {
        switch (shape) {
            case ObjectShape::Box: return std::max(hx, hy) * std::sqrt(2.0);
            case ObjectShape::Sphere:
            case ObjectShape::Cylinder: return radius;
            case ObjectShape::Capsule: return half_len + radius;
            case ObjectShape::Composite: {
                double r = 0;
                for (const auto& p : parts) {
                    const double d = std::hypot(p.cx - cx, p.cy - cy);
                    r = std::max(r, d + p.reach());
                }
                return r;
            }
        }
        return 0;
    }

    // surface height contributed at cell center (x, y)
    double height_at(double x, double y) const {
        switch (shape) {
            case ObjectShape::Box:
                return (std::abs(x - cx) <= hx && std::abs(y - cy) <= hy) ? height : 0.0;
            case ObjectShape::Sphere: {
                const double d = std::hypot(x - cx, y - cy);
                if (d > radius) return 0.0;
                const double t = d / radius;
                return height * std::sqrt(std::max(0.0, 1.0 - t * t));
            }
            case ObjectShape::Cylinder:
                return std::hypot(x - cx, y - cy) <= radius ? height : 0.0;
            case ObjectShape::Capsule: {
                // distance to the core segment, then a half-cylinder profile
                double px = x - cx, py = y - cy;
                if (axis == 1) std::swap(px, py);
                const double along = std::clamp(px, -half_len, half_len);
                const double d = std::hypot(px - along, py);
                if (d > radius) return 0.0;
                const double t = d / radius;
                return height * std::sqrt(std::max(0.0, 1.0 - t * t));
            }
            case ObjectShape::Composite: {
                double h = 0;
                for (const auto& p : parts) h = std::max(h, p.height_at(x, y));
                return h;
            }
        }
        return 0;
    }
};

enum class ObjectFamily : uint8_t { Primitive = 0, Composite = 1 };

inline const char* family_name(ObjectFamily f) {
    return f == ObjectFamily::Primitive ? "primitive" : "composite";
}

struct SceneConfig {
    int h = 32, w = 32;
    uint64_t seed = 0;
    double motion_eps = 0.1;
    double sensor_sigma = 0.0;
    std::vector<ObjectSpec> objects;
};

struct HeightMap {
    int h = 0, w = 0;
    std::vector<double> z;

    HeightMap() = default;
    HeightMap(int h, int w) : h(h), w(w), z(static_cast<size_t>(h) * w, 0.0) {}
    double at(int y, int x) const { return z[static_cast<size_t>(y) * w + x]; }
    double& at(int y, int x) { return z[static_cast<size_t>(y) * w + x]; }
    double max_height() const {
        double m = 0;
        for (double v : z) m = std::max(m, v);
        return m;
    }
};

struct DepthImage {
    int h = 0, w = 0;
    std::vector<double> d;

    DepthImage() = default;
    DepthImage(int h, int w, double fill = 0.0) : h(h), w(w), d(static_cast<size_t>(h) * w, fill) {}
    double at(int y, int x) const { return d[static_cast<size_t>(y) * w + x]; }
    double& at(int y, int x) { return d[static_cast<size_t>(y) * w + x]; }
};

// Readings of a K x K taxel grid under the gripper footprint, row-major over
// (dy, dx) offsets from the gripper center.
struct TactileObservation {
    int k = 0;
    std::vector<double> readings;

    TactileObservation() = default;
    explicit TactileObservation(int k) : k(k), readings(static_cast<size_t>(k) * k, 0.0) {}
    bool any_contact(double tol = 1e-12) const {
        for (double r : readings)
            if (r > tol) return true;
        return false;
    }
};

// ---------------------------------------------------------------------------
// camera
// ---------------------------------------------------------------------------

// Pinhole camera: p = M_int * M_ext * P_w, homogeneous division by depth.
// The default top-down camera is rigged so table-level cell centers map to
// their own pixel indices exactly.
struct CameraModel {
    double fx = 1, fy = 1, cx = 0, cy = 0;             // M_int, zero skew
    std::array<std::array<double, 4>, 3> ext{{{1, 0, 0, 0}, {0, 1, 0, 0}, {0, 0, 1, 0}}};
    double height = 10.0;                              // above the table plane
    bool identity_correspondence = false;

    static CameraModel top_down(double height) {
        CameraModel c;
        c.fx = c.fy = height;
        c.cx = c.cy = 0;
        c.ext = {{{1, 0, 0, 0}, {0, 1, 0, 0}, {0, 0, -1, height}}};
        c.height = height;
        c.identity_correspondence = true;
        return c;
    }

    // top-down pinhole with explicit intrinsics
    static CameraModel top_down_pinhole(double fx, double fy, double cx, double cy,
                                        double height) {
        if (fx <= 0 || fy <= 0)
            throw ContractViolation("camera focal lengths must be positive");
        CameraModel c;
        c.fx = fx; c.fy = fy; c.cx = cx; c.cy = cy;
        c.ext = {{{1, 0, 0, 0}, {0, 1, 0, 0}, {0, 0, -1, height}}};
        c.height = height;
        return c;
    }
};

inline std::pair<int, int> project_world_to_pixel(double X, double Y, double Z,
                                                  const CameraModel& cam) {
    const double xc = cam.ext[0][0] * X + cam.ext[0][1] * Y + cam.ext[0][2] * Z + cam.ext[0][3];
    const double yc = cam.ext[1][0] * X + cam.ext[1][1] * Y + cam.ext[1][2] * Z + cam.ext[1][3];
    const double zc = cam.ext[2][0] * X + cam.ext[2][1] * Y + cam.ext[2][2] * Z + cam.ext[2][3];
    if (zc <= 1e-12)
        throw ProjectionError("point (" + std::to_string(X) + ", " + std::to_string(Y) + ", " +
                              std::to_string(Z) + ") has non-positive camera depth");
    const double u = cam.fx * xc / zc + cam.cx;
    const double v = cam.fy * yc / zc + cam.cy;
    return {static_cast<int>(std::lround(u)), static_cast<int>(std::lround(v))};
}

// ---------------------------------------------------------------------------
// scene generation
// ---------------------------------------------------------------------------

struct SceneGenParams {
    int min_objects = 1, max_objects = 4;
    double margin = 6.5;          // placement margin; also the per-object reach cap
    double min_height = 0.3, max_height = 1.0;
    double h_max = 1.0;
    int placement_retries = 100;

    // scaled-down ranges for small grids so tests can run tiny worlds
    static SceneGenParams for_grid(int h, int w) {
        SceneGenParams p;
        const double scale = std::min(1.0, std::min(h, w) / 32.0);
        p.margin *= scale;
        return p;
    }
};

namespace detail {

inline ObjectSpec sample_primitive(Rng& rng, double scale, double min_h, double max_h) {
    const int kind = rng.uniform_int(0, 3);
    const double height = rng.uniform(min_h, max_h);
    ObjectSpec o;
    switch (kind) {
        case 0:
            o = ObjectSpec::box(0, 0, rng.uniform(1.5 * scale, 3.2 * scale),
                                rng.uniform(1.5 * scale, 3.2 * scale), height);
            break;
        case 1:
            o = ObjectSpec::sphere(0, 0, rng.uniform(2.0 * scale, 4.0 * scale), height);
            break;
        case 2:
            o = ObjectSpec::cylinder(0, 0, rng.uniform(1.5 * scale, 3.5 * scale), height);
            break;
        default:
            o = ObjectSpec::capsule(0, 0, rng.coin() ? 1 : 0, rng.uniform(2.0 * scale, 3.0 * scale),
                                    rng.uniform(1.2 * scale, 2.2 * scale), height);
            break;
    }
    return o;
}

inline void move_object(ObjectSpec& o, double cx, double cy) {
    const double dx = cx - o.cx, dy = cy - o.cy;
    o.cx = cx;
    o.cy = cy;
    for (auto& p : o.parts) {
        p.cx += dx;
        p.cy += dy;
    }
}

}  // namespace detail

// 1-4 objects with uniformly sampled centers and sizes; non-overlapping by
// rejection sampling on bounding circles. Composite objects fuse 2-3
// deliberately overlapping primitives.
inline SceneConfig generate_scene(Rng& rng, ObjectFamily family, int h, int w,
                                  const SceneGenParams& params) {
    if (h < 16 || w < 16)
        throw ContractViolation("generate_scene: grid must be at least 16x16, got " +
                                std::to_string(h) + "x" + std::to_string(w));
    SceneConfig cfg;
    cfg.h = h;
    cfg.w = w;
    const double scale = std::min(1.0, std::min(h, w) / 32.0);
    const int count = rng.uniform_int(params.min_objects, params.max_objects);
    for (int i = 0; i < count; ++i) {
        bool placed = false;
        for (int attempt = 0; attempt < params.placement_retries && !placed; ++attempt) {
            ObjectSpec cand;
            if (family == ObjectFamily::Primitive) {
                cand = detail::sample_primitive(rng, scale, params.min_height * params.h_max,
                                                params.max_height * params.h_max);
            } else {
                const int nparts = rng.uniform_int(2, 3);
                std::vector<ObjectSpec> parts;
                for (int p = 0; p < nparts; ++p) {
                    ObjectSpec part =
                        detail::sample_primitive(rng, 0.55 * scale, params.min_height * params.h_max,
                                                 params.max_height * params.h_max);
                    // overlapping offsets so the union reads as one object
                    detail::move_object(part, rng.uniform(-2.5 * scale, 2.5 * scale),
                                        rng.uniform(-2.5 * scale, 2.5 * scale));
                    parts.push_back(std::move(part));
                }
                cand = ObjectSpec::composite(std::move(parts));
                detail::move_object(cand, 0, 0);
            }
            const double m = params.margin;
            const double cx = rng.uniform(m, (w - 1) - m);
            const double cy = rng.uniform(m, (h - 1) - m);
            detail::move_object(cand, cx, cy);
            bool ok = true;
            for (const auto& other : cfg.objects)
                if (std::hypot(other.cx - cand.cx, other.cy - cand.cy) <=
                    other.reach() + cand.reach() + 0.5) {
                    ok = false;
                    break;
                }
            if (ok) {
                cfg.objects.push_back(std::move(cand));
                placed = true;
            }
        }
        if (!placed)
            throw ScenePlacementError("placement retry budget exhausted after " +
                                      std::to_string(params.placement_retries) + " attempts (" +
                                      std::to_string(cfg.objects.size()) + " objects placed)");
    }
    return cfg;
}

inline SceneConfig generate_scene(uint64_t seed, ObjectFamily family, int h, int w,
                                  const SceneGenParams& params) {
    Rng rng(seed);
    SceneConfig cfg = generate_scene(rng, family, h, w, params);
    cfg.seed = seed;
    return cfg;
}

// Pipeline helper: crowded configurations occasionally exhaust the placement
// budget, so retry with deterministically derived sub-seeds.
inline SceneConfig generate_scene_retry(uint64_t seed, ObjectFamily family, int h, int w,
                                        const SceneGenParams& params, int max_attempts = 64) {
    for (int attempt = 0;; ++attempt) {
        try {
            return generate_scene(split_seed(seed, static_cast<uint64_t>(attempt)), family, h, w,
                                  params);
        } catch (const ScenePlacementError&) {
            if (attempt + 1 >= max_attempts) throw;
        }
    }
}

// ---------------------------------------------------------------------------
// world realization and interaction
// ---------------------------------------------------------------------------

inline HeightMap rasterize(const SceneConfig& cfg) {
    HeightMap hm(cfg.h, cfg.w);
    for (int y = 0; y < cfg.h; ++y)
        for (int x = 0; x < cfg.w; ++x) {
            double v = 0;
            for (const auto& o : cfg.objects)
                v = std::max(v, o.height_at(static_cast<double>(x), static_cast<double>(y)));
            hm.at(y, x) = v;
        }
    return hm;
}

// depth(p) = camera height - surface height at the cell mapping to p
inline DepthImage render_depth(const HeightMap& hm, const CameraModel& cam) {
    if (cam.height <= hm.max_height())
        throw ContractViolation("render_depth: camera height " + std::to_string(cam.height) +
                                " not above tallest surface " + std::to_string(hm.max_height()));
    DepthImage img(hm.h, hm.w, cam.height);
    if (cam.identity_correspondence) {
        for (size_t i = 0; i < img.d.size(); ++i) img.d[i] = cam.height - hm.z[i];
        return img;
    }
    for (int y = 0; y < hm.h; ++y)
        for (int x = 0; x < hm.w; ++x) {
            const auto [px, py] = project_world_to_pixel(x, y, 0.0, cam);
            if (px < 0 || px >= hm.w || py < 0 || py >= hm.h) continue;
            img.at(py, px) = std::min(img.at(py, px), cam.height - hm.at(y, x));
        }
    return img;
}

// One-pixel move with stay probability eps; moves past the table edge clamp
// to staying in place.
inline GridState step(GridState s, ActionDir a, Rng& rng, double eps, int h, int w) {
    if (s.x < 0 || s.x >= w || s.y < 0 || s.y >= h)
        throw ContractViolation("step: state (" + std::to_string(s.x) + ", " + std::to_string(s.y) +
                                ") outside " + std::to_string(h) + "x" + std::to_string(w));
    const double u = rng.uniform();
    if (u < eps) return s;
    const Offset o = action_offset(a);
    GridState next{s.x + o.dx, s.y + o.dy};
    if (next.x < 0 || next.x >= w || next.y < 0 || next.y >= h) return s;
    return next;
}

// Compliant tactile reading: each taxel senses the surface height under its
// footprint cell (0 outside the table), with optional Gaussian noise clamped
// to [0, h_max]. Never consumes randomness when sigma is 0.
inline TactileObservation sense(const HeightMap& hm, GridState s, double sigma, Rng& rng,
                                int k = 5, double h_max = 1.0) {
    if (s.x < 0 || s.x >= hm.w || s.y < 0 || s.y >= hm.h)
        throw ContractViolation("sense: state (" + std::to_string(s.x) + ", " + std::to_string(s.y) +
                                ") outside " + std::to_string(hm.h) + "x" + std::to_string(hm.w));
    if (k < 1 || k % 2 == 0)
        throw ContractViolation("sense: footprint size must be odd and positive, got " +
                                std::to_string(k));
    TactileObservation obs(k);
    const int half = k / 2;
    size_t i = 0;
    for (int dy = -half; dy <= half; ++dy)
        for (int dx = -half; dx <= half; ++dx, ++i) {
            const int y = s.y + dy, x = s.x + dx;
            double v = (y >= 0 && y < hm.h && x >= 0 && x < hm.w) ? hm.at(y, x) : 0.0;
            if (sigma > 0) v = std::clamp(v + rng.normal(0.0, sigma), 0.0, h_max);
            obs.readings[i] = v;
        }
    return obs;
}

inline bool footprint_contacts(const HeightMap& hm, GridState s, int k, double tol = 1e-12) {
    const int half = k / 2;
    for (int dy = -half; dy <= half; ++dy)
        for (int dx = -half; dx <= half; ++dx) {
            const int y = s.y + dy, x = s.x + dx;
            if (y >= 0 && y < hm.h && x >= 0 && x < hm.w && hm.at(y, x) > tol) return true;
        }
    return false;
}

// ---------------------------------------------------------------------------
// scene files
// ---------------------------------------------------------------------------

namespace detail {

inline std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline void write_object_line(std::ostream& os, const ObjectSpec& o, const char* tag) {
    os << tag << " " << shape_name(o.shape);
    switch (o.shape) {
        case ObjectShape::Box:
            os << " " << fmt_double(o.cx) << " " << fmt_double(o.cy) << " " << fmt_double(o.hx)
               << " " << fmt_double(o.hy) << " " << fmt_double(o.height);
            break;
        case ObjectShape::Sphere:
        case ObjectShape::Cylinder:
            os << " " << fmt_double(o.cx) << " " << fmt_double(o.cy) << " "
               << fmt_double(o.radius) << " " << fmt_double(o.height);
            break;
        case ObjectShape::Capsule:
            os << " " << fmt_double(o.cx) << " " << fmt_double(o.cy) << " " << o.axis << " "
               << fmt_double(o.half_len) << " " << fmt_double(o.radius) << " "
               << fmt_double(o.height);
            break;
        case ObjectShape::Composite:
            os << " " << o.parts.size();
            break;
    }
    os << "\n";
    if (o.shape == ObjectShape::Composite)
        for (const auto& p : o.parts) write_object_line(os, p, "part");
}

inline ObjectSpec parse_object_line(std::istream& is, const std::string& shape) {
    ObjectSpec o;
    if (shape == "box") {
        o.shape = ObjectShape::Box;
        if (!(is >> o.cx >> o.cy >> o.hx >> o.hy >> o.height))
            throw SceneFormatError("malformed box object line");
    } else if (shape == "sphere" || shape == "cylinder") {
        o.shape = shape == "sphere" ? ObjectShape::Sphere : ObjectShape::Cylinder;
        if (!(is >> o.cx >> o.cy >> o.radius >> o.height))
            throw SceneFormatError("malformed " + shape + " object line");
    } else if (shape == "capsule") {
        o.shape = ObjectShape::Capsule;
        if (!(is >> o.cx >> o.cy >> o.axis >> o.half_len >> o.radius >> o.height))
            throw SceneFormatError("malformed capsule object line");
    } else {
        throw SceneFormatError("unknown object shape '" + shape + "'");
    }
    return o;
}

}  // namespace detail

inline void write_scene(std::ostream& os, const SceneConfig& cfg) {
    os << "tloc-scene v1\n";
    os << "grid " << cfg.h << " " << cfg.w << "\n";
    os << "seed " << cfg.seed << "\n";
    os << "motion_eps " << detail::fmt_double(cfg.motion_eps) << "\n";
    os << "sensor_sigma " << detail::fmt_double(cfg.sensor_sigma) << "\n";
    os << "objects " << cfg.objects.size() << "\n";
    for (const auto& o : cfg.objects) detail::write_object_line(os, o, "object");
}

inline SceneConfig read_scene(std::istream& is) {
    std::string line;
    if (!std::getline(is, line) || line != "tloc-scene v1")
        throw SceneFormatError("missing 'tloc-scene v1' header");
    SceneConfig cfg;
    std::string key;
    size_t n_objects = 0;
    if (!(is >> key >> cfg.h >> cfg.w) || key != "grid") throw SceneFormatError("expected grid line");
    if (!(is >> key >> cfg.seed) || key != "seed") throw SceneFormatError("expected seed line");
    if (!(is >> key >> cfg.motion_eps) || key != "motion_eps")
        throw SceneFormatError("expected motion_eps line");
    if (!(is >> key >> cfg.sensor_sigma) || key != "sensor_sigma")
        throw SceneFormatError("expected sensor_sigma line");
    if (!(is >> key >> n_objects) || key != "objects")
        throw SceneFormatError("expected objects line");
    for (size_t i = 0; i < n_objects; ++i) {
        std::string tag, shape;
        if (!(is >> tag >> shape) || tag != "object")
            throw SceneFormatError("expected object line " + std::to_string(i));
        if (shape == "composite") {
            size_t nparts;
            if (!(is >> nparts)) throw SceneFormatError("malformed composite line");
            std::vector<ObjectSpec> parts;
            for (size_t p = 0; p < nparts; ++p) {
                std::string ptag, pshape;
                if (!(is >> ptag >> pshape) || ptag != "part")
                    throw SceneFormatError("expected part line");
                parts.push_back(detail::parse_object_line(is, pshape));
            }
            cfg.objects.push_back(ObjectSpec::composite(std::move(parts)));
        } else {
            cfg.objects.push_back(detail::parse_object_line(is, shape));
        }
    }
    return cfg;
}

}  // namespace tloc
