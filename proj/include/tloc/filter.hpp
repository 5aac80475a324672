#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <istream>
#include <optional>
#include <ostream>
#include <vector>

#include "tloc/tensor.hpp"  // ContractViolation, shape_str

namespace tloc {

// Gripper position on the grid: x is the column, y is the row.
struct GridState {
    int x = 0;
    int y = 0;
    bool operator==(const GridState&) const = default;
};

inline int l1_error(GridState a, GridState b) {
    return std::abs(a.x - b.x) + std::abs(a.y - b.y);
}

// One-pixel moves. North decreases the row, East increases the column.
enum class ActionDir : uint8_t { North = 0, South = 1, East = 2, West = 3 };

inline constexpr std::array<ActionDir, 4> kAllActions = {ActionDir::North, ActionDir::South,
                                                         ActionDir::East, ActionDir::West};

struct Offset {
    int dx = 0;
    int dy = 0;
};

inline Offset action_offset(ActionDir a) {
    switch (a) {
        case ActionDir::North: return {0, -1};
        case ActionDir::South: return {0, 1};
        case ActionDir::East: return {1, 0};
        case ActionDir::West: return {-1, 0};
    }
    return {};
}

inline const char* action_name(ActionDir a) {
    switch (a) {
        case ActionDir::North: return "north";
        case ActionDir::South: return "south";
        case ActionDir::East: return "east";
        case ActionDir::West: return "west";
    }
    return "?";
}

// 3x3 transition kernel: w[(1+dy)*3 + (1+dx)] is the probability of a
// one-step displacement (dx, dy). Non-negative, sums to 1.
struct MotionKernel {
    std::array<double, 9> w{};

    double at(int dy, int dx) const { return w[static_cast<size_t>((1 + dy) * 3 + (1 + dx))]; }
    double& at(int dy, int dx) { return w[static_cast<size_t>((1 + dy) * 3 + (1 + dx))]; }

    bool valid(double tol = 1e-7) const {
        double total = 0;
        for (double v : w) {
            if (v < 0) return false;
            total += v;
        }
        return std::abs(total - 1.0) <= tol;
    }

    static MotionKernel delta_center() {
        MotionKernel k;
        k.at(0, 0) = 1.0;
        return k;
    }

    // stays put with probability eps, otherwise moves one pixel along `a`
    static MotionKernel from_action(ActionDir a, double eps) {
        MotionKernel k;
        const Offset o = action_offset(a);
        k.at(0, 0) = eps;
        k.at(o.dy, o.dx) += 1.0 - eps;
        return k;
    }
};

// Per-pixel independent observation probabilities in [0, 1]. Not a
// distribution over states; only the correction step normalizes.
struct LikelihoodMap {
    int h = 0, w = 0;
    std::vector<double> v;

    LikelihoodMap() = default;
    LikelihoodMap(int h, int w, double fill = 0.0) : h(h), w(w), v(static_cast<size_t>(h) * w, fill) {}
    double at(int y, int x) const { return v[static_cast<size_t>(y) * w + x]; }
    double& at(int y, int x) { return v[static_cast<size_t>(y) * w + x]; }
};

// Posterior over grid positions; non-negative, sums to 1.
struct Belief {
    int h = 0, w = 0;
    std::vector<double> p;

    Belief() = default;
    Belief(int h, int w, double fill = 0.0) : h(h), w(w), p(static_cast<size_t>(h) * w, fill) {}
    double at(int y, int x) const { return p[static_cast<size_t>(y) * w + x]; }
    double& at(int y, int x) { return p[static_cast<size_t>(y) * w + x]; }
    size_t size() const { return p.size(); }
};

inline Belief init_uniform(int h, int w) {
    if (h < 1 || w < 1)
        throw ContractViolation("init_uniform: grid dims must be positive, got " +
                                std::to_string(h) + "x" + std::to_string(w));
    return Belief(h, w, 1.0 / (static_cast<double>(h) * w));
}

// Prediction update: convolve the belief with the motion kernel (zero padding
// at the table edges) and renormalize. When a pure-shift kernel pushes the
// entire mass off the grid (belief pinned at the matching edge), the belief is
// carried forward unchanged; the world clamps such moves to staying, so
// identity is the transition-consistent result.
inline Belief predict(const Belief& bel, const MotionKernel& kernel) {
    Belief out(bel.h, bel.w);
    for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
            const double kv = kernel.at(dy, dx);
            if (kv == 0.0) continue;
            for (int y = 0; y < bel.h; ++y) {
                const int sy = y - dy;
                if (sy < 0 || sy >= bel.h) continue;
                for (int x = 0; x < bel.w; ++x) {
                    const int sx = x - dx;
                    if (sx < 0 || sx >= bel.w) continue;
                    out.at(y, x) += kv * bel.at(sy, sx);
                }
            }
        }
    double total = 0;
    for (double v : out.p) total += v;
    if (total < 1e-12) return bel;
    for (double& v : out.p) v /= total;
    return out;
}

// Observation update: elementwise product with the likelihood map, then
// normalization. Returns nullopt when the product carries no mass (all
// evidence contradicts the belief); the caller decides the reset policy.
inline std::optional<Belief> correct(const Belief& bel, const LikelihoodMap& like) {
    if (bel.h != like.h || bel.w != like.w)
        throw ContractViolation("correct: belief " + std::to_string(bel.h) + "x" +
                                std::to_string(bel.w) + " vs likelihood " +
                                std::to_string(like.h) + "x" + std::to_string(like.w));
    Belief out(bel.h, bel.w);
    double total = 0;
    for (size_t i = 0; i < out.size(); ++i) {
        out.p[i] = bel.p[i] * like.v[i];
        total += out.p[i];
    }
    if (total < 1e-12) return std::nullopt;
    for (double& v : out.p) v /= total;
    return out;
}

// argmax over the belief; ties break to the lowest row-major index
inline GridState infer_state(const Belief& bel) {
    size_t best = 0;
    for (size_t i = 1; i < bel.size(); ++i)
        if (bel.p[i] > bel.p[best]) best = i;
    return {static_cast<int>(best % bel.w), static_cast<int>(best / bel.w)};
}

inline double belief_entropy(const Belief& bel) {
    double h = 0;
    for (double v : bel.p)
        if (v > 0) h -= v * std::log(v);
    return h;
}

// u32 H, u32 W, then row-major little-endian f32 probabilities
inline void write_belief(std::ostream& os, const Belief& bel) {
    auto put_u32 = [&](uint32_t v) {
        unsigned char b[4];
        for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
        os.write(reinterpret_cast<const char*>(b), 4);
    };
    put_u32(static_cast<uint32_t>(bel.h));
    put_u32(static_cast<uint32_t>(bel.w));
    for (double v : bel.p) {
        const float f = static_cast<float>(v);
        uint32_t u;
        std::memcpy(&u, &f, 4);
        put_u32(u);
    }
}

inline Belief read_belief(std::istream& is) {
    auto get_u32 = [&](uint32_t& v) {
        unsigned char b[4];
        if (!is.read(reinterpret_cast<char*>(b), 4)) return false;
        v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
        return true;
    };
    uint32_t h, w;
    if (!get_u32(h) || !get_u32(w)) throw ContractViolation("read_belief: truncated header");
    Belief bel(static_cast<int>(h), static_cast<int>(w));
    for (auto& v : bel.p) {
        uint32_t u;
        if (!get_u32(u)) throw ContractViolation("read_belief: truncated payload");
        float f;
        std::memcpy(&f, &u, 4);
        v = f;
    }
    return bel;
}

}  // namespace tloc
