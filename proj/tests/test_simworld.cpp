#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <sstream>

#include "test_util.hpp"
#include "tloc/simworld.hpp"

using namespace tloc;
using Catch::Approx;

namespace {

bool scenes_equal(const SceneConfig& a, const SceneConfig& b) {
    std::ostringstream sa, sb;
    write_scene(sa, a);
    write_scene(sb, b);
    return sa.str() == sb.str();
}

}  // namespace

TEST_CASE("generate_scene determinism and constraints") {
    const SceneGenParams params;
    SECTION("same seed gives identical scenes") {
        const SceneConfig a = generate_scene(uint64_t(99), ObjectFamily::Primitive, 32, 32, params);
        const SceneConfig b = generate_scene(uint64_t(99), ObjectFamily::Primitive, 32, 32, params);
        REQUIRE(scenes_equal(a, b));
    }
    SECTION("object count in [1,4] and footprints inside the table") {
        for (uint64_t seed = 0; seed < 200; ++seed) {
            const SceneConfig cfg =
                generate_scene_retry(split_seed(5, seed), ObjectFamily::Primitive, 32, 32, params);
            REQUIRE(cfg.objects.size() >= 1);
            REQUIRE(cfg.objects.size() <= 4);
            for (const auto& o : cfg.objects) {
                REQUIRE(o.cx - o.reach() >= 0.0);
                REQUIRE(o.cx + o.reach() <= 31.0);
                REQUIRE(o.cy - o.reach() >= 0.0);
                REQUIRE(o.cy + o.reach() <= 31.0);
            }
        }
    }
    SECTION("composite family produces fused multi-part objects") {
        const SceneConfig cfg =
            generate_scene(uint64_t(7), ObjectFamily::Composite, 32, 32, params);
        for (const auto& o : cfg.objects) {
            REQUIRE(o.shape == ObjectShape::Composite);
            REQUIRE(o.parts.size() >= 2);
            REQUIRE(o.parts.size() <= 3);
        }
    }
    SECTION("grids below 16 cells are rejected") {
        Rng rng(1);
        REQUIRE_THROWS_AS(generate_scene(rng, ObjectFamily::Primitive, 8, 8, params),
                          ContractViolation);
    }
}

TEST_CASE("object centers are uniform over the placement region (chi-square)") {
    // The position sampler is uniform; the non-overlap rejection conditions
    // later placements, so the sampler is checked on the first-placed object,
    // whose center is unconstrained.
    const SceneGenParams params;
    const double lo = params.margin, hi = 31.0 - params.margin;
    const int bins = 4;
    std::vector<double> counts(bins * bins, 0.0);
    double n = 0;
    for (uint64_t seed = 0; seed < 1000; ++seed) {
        const SceneConfig cfg =
            generate_scene_retry(split_seed(31337, seed), ObjectFamily::Primitive, 32, 32, params);
        const auto& o = cfg.objects.front();
        int bx = static_cast<int>((o.cx - lo) / (hi - lo) * bins);
        int by = static_cast<int>((o.cy - lo) / (hi - lo) * bins);
        bx = std::clamp(bx, 0, bins - 1);
        by = std::clamp(by, 0, bins - 1);
        counts[by * bins + bx] += 1.0;
        n += 1.0;
    }
    const double expected = n / (bins * bins);
    double chi2 = 0;
    for (double c : counts) chi2 += (c - expected) * (c - expected) / expected;
    // chi-square critical value, df = 15, significance 0.01
    REQUIRE(chi2 < 30.578);
}

TEST_CASE("rasterize") {
    SECTION("empty scene is all zeros") {
        SceneConfig cfg;
        cfg.h = cfg.w = 16;
        const HeightMap hm = rasterize(cfg);
        for (double v : hm.z) REQUIRE(v == 0.0);
    }
    SECTION("box covers exactly its half-extent footprint") {
        SceneConfig cfg;
        cfg.h = cfg.w = 24;
        cfg.objects.push_back(ObjectSpec::box(10, 10, 2, 3, 1.0));
        const HeightMap hm = rasterize(cfg);
        int covered = 0;
        for (int y = 0; y < 24; ++y)
            for (int x = 0; x < 24; ++x) {
                const bool inside = std::abs(x - 10) <= 2 && std::abs(y - 10) <= 3;
                REQUIRE(hm.at(y, x) == (inside ? 1.0 : 0.0));
                covered += inside;
            }
        REQUIRE(covered == 5 * 7);
    }
    SECTION("sphere has a spherical-cap profile") {
        SceneConfig cfg;
        cfg.h = cfg.w = 20;
        const double h = 0.8, r = 3.0;
        cfg.objects.push_back(ObjectSpec::sphere(10, 10, r, h));
        const HeightMap hm = rasterize(cfg);
        REQUIRE(hm.at(10, 10) == Approx(h));
        for (int d = 1; d <= 3; ++d)
            REQUIRE(hm.at(10, 10 + d) == Approx(h * std::sqrt(1.0 - (d / r) * (d / r))).margin(1e-12));
        REQUIRE(hm.at(10, 14) == 0.0);
    }
    SECTION("cylinder is a constant-height disk") {
        SceneConfig cfg;
        cfg.h = cfg.w = 20;
        cfg.objects.push_back(ObjectSpec::cylinder(10, 10, 2.5, 0.6));
        const HeightMap hm = rasterize(cfg);
        REQUIRE(hm.at(10, 10) == 0.6);
        REQUIRE(hm.at(10, 12) == 0.6);
        REQUIRE(hm.at(10, 13) == 0.0);
        REQUIRE(hm.at(8, 8) == 0.0);  // distance ~2.83 > 2.5
    }
    SECTION("capsule profile peaks along the core segment") {
        SceneConfig cfg;
        cfg.h = cfg.w = 24;
        cfg.objects.push_back(ObjectSpec::capsule(12, 12, 0, 3.0, 2.0, 1.0));
        const HeightMap hm = rasterize(cfg);
        REQUIRE(hm.at(12, 12) == Approx(1.0));
        REQUIRE(hm.at(12, 15) == Approx(1.0));   // still on the core
        REQUIRE(hm.at(12, 17) == Approx(0.0));   // beyond the hemispherical end
        REQUIRE(hm.at(14, 12) == Approx(0.0).margin(1e-12));
        REQUIRE(hm.at(13, 12) == Approx(std::sqrt(1.0 - 0.25)).margin(1e-12));
    }
    SECTION("adding an object never lowers any cell") {
        SceneConfig cfg = generate_scene(uint64_t(12), ObjectFamily::Primitive, 32, 32, {});
        const HeightMap before = rasterize(cfg);
        cfg.objects.push_back(ObjectSpec::sphere(16, 16, 4, 0.9));
        const HeightMap after = rasterize(cfg);
        for (size_t i = 0; i < before.z.size(); ++i) REQUIRE(after.z[i] >= before.z[i]);
    }
}

TEST_CASE("render_depth") {
    SECTION("flat table gives a constant image") {
        SceneConfig cfg;
        cfg.h = cfg.w = 16;
        const DepthImage img = render_depth(rasterize(cfg), CameraModel::top_down(10.0));
        for (double v : img.d) REQUIRE(v == 10.0);
    }
    SECTION("a box of height 1 reads depth 9 over its footprint") {
        SceneConfig cfg;
        cfg.h = cfg.w = 16;
        cfg.objects.push_back(ObjectSpec::box(8, 8, 2, 2, 1.0));
        const DepthImage img = render_depth(rasterize(cfg), CameraModel::top_down(10.0));
        REQUIRE(img.at(8, 8) == 9.0);
        REQUIRE(img.at(8, 10) == 9.0);
        REQUIRE(img.at(0, 0) == 10.0);
    }
}

TEST_CASE("project_world_to_pixel") {
    SECTION("identity pipeline") {
        CameraModel cam;  // identity intrinsics and extrinsics
        const auto [px, py] = project_world_to_pixel(3, 4, 1, cam);
        REQUIRE(px == 3);
        REQUIRE(py == 4);
    }
    SECTION("point on the optical axis maps to the principal point") {
        const CameraModel cam = CameraModel::top_down_pinhole(2, 2, 16, 16, 10);
        const auto [px, py] = project_world_to_pixel(0, 0, 0, cam);
        REQUIRE(px == 16);
        REQUIRE(py == 16);
    }
    SECTION("hand-evaluated pinhole formula") {
        const CameraModel cam = CameraModel::top_down_pinhole(2, 2, 16, 16, 10);
        // point (1, 2) on the table: u = 16 + 2*1/10, v = 16 + 2*2/10
        const auto [px, py] = project_world_to_pixel(1, 2, 0, cam);
        REQUIRE(px == static_cast<int>(std::lround(16.2)));
        REQUIRE(py == static_cast<int>(std::lround(16.4)));
    }
    SECTION("non-positive depth throws") {
        CameraModel cam;
        REQUIRE_THROWS_AS(project_world_to_pixel(0, 0, 0, cam), ProjectionError);
        REQUIRE_THROWS_AS(project_world_to_pixel(0, 0, -1, cam), ProjectionError);
    }
    SECTION("default camera is an exact cell-to-pixel identity") {
        const CameraModel cam = CameraModel::top_down(10.0);
        for (int y = 0; y < 32; ++y)
            for (int x = 0; x < 32; ++x) {
                const auto [px, py] = project_world_to_pixel(x, y, 0, cam);
                REQUIRE(px == x);
                REQUIRE(py == y);
            }
    }
    SECTION("pinhole depth render agrees with reprojected cell centers") {
        SceneConfig cfg;
        cfg.h = cfg.w = 32;
        cfg.objects.push_back(ObjectSpec::box(16, 14, 3, 2, 0.7));
        const HeightMap hm = rasterize(cfg);
        const CameraModel cam = CameraModel::top_down_pinhole(10, 10, 0, 0, 10);
        const DepthImage img = render_depth(hm, cam);
        for (int y = 0; y < 32; ++y)
            for (int x = 0; x < 32; ++x) {
                const auto [px, py] = project_world_to_pixel(x, y, 0, cam);
                if (px < 0 || px >= 32 || py < 0 || py >= 32) continue;
                REQUIRE(img.at(py, px) <= 10.0 - hm.at(y, x) + 1e-12);
            }
    }
}

TEST_CASE("step") {
    Rng rng(1);
    SECTION("eps 0 moves east by one column") {
        const GridState s = step({5, 5}, ActionDir::East, rng, 0.0, 32, 32);
        REQUIRE(s.x == 6);
        REQUIRE(s.y == 5);
    }
    SECTION("west at the left edge clamps to staying") {
        const GridState s = step({0, 5}, ActionDir::West, rng, 0.0, 32, 32);
        REQUIRE(s.x == 0);
        REQUIRE(s.y == 5);
    }
    SECTION("stay fraction matches eps over many trials") {
        Rng mc(777);
        int stays = 0;
        const int trials = 10000;
        for (int i = 0; i < trials; ++i) {
            const GridState s = step({16, 16}, ActionDir::North, mc, 0.1, 32, 32);
            if (s.y == 16) ++stays;
        }
        const double frac = static_cast<double>(stays) / trials;
        REQUIRE(frac == Approx(0.1).margin(0.02));
    }
    SECTION("never leaves the grid") {
        Rng walk(5);
        GridState s{0, 0};
        for (int t = 0; t < 2000; ++t) {
            const ActionDir a = kAllActions[static_cast<size_t>(walk.uniform_int(0, 3))];
            s = step(s, a, walk, 0.05, 8, 8);
            REQUIRE(s.x >= 0);
            REQUIRE(s.x < 8);
            REQUIRE(s.y >= 0);
            REQUIRE(s.y < 8);
        }
    }
    SECTION("out-of-bounds state throws") {
        REQUIRE_THROWS_AS(step({40, 0}, ActionDir::East, rng, 0.0, 32, 32), ContractViolation);
    }
}

TEST_CASE("sense") {
    Rng rng(2);
    SECTION("flat table reads all zeros") {
        SceneConfig cfg;
        cfg.h = cfg.w = 16;
        const HeightMap hm = rasterize(cfg);
        const TactileObservation o = sense(hm, {8, 8}, 0.0, rng);
        REQUIRE(o.readings.size() == 25);
        for (double r : o.readings) REQUIRE(r == 0.0);
        REQUIRE_FALSE(o.any_contact());
    }
    SECTION("footprint fully on a large box reads the box height everywhere") {
        SceneConfig cfg;
        cfg.h = cfg.w = 24;
        cfg.objects.push_back(ObjectSpec::box(12, 12, 5, 5, 1.0));
        const HeightMap hm = rasterize(cfg);
        const TactileObservation o = sense(hm, {12, 12}, 0.0, rng);
        for (double r : o.readings) REQUIRE(r == 1.0);
    }
    SECTION("straddling an edge reproduces the underlying height pattern") {
        SceneConfig cfg;
        cfg.h = cfg.w = 24;
        cfg.objects.push_back(ObjectSpec::box(12, 12, 2, 2, 0.5));
        const HeightMap hm = rasterize(cfg);
        const GridState s{14, 12};  // footprint straddles the box's east edge
        const TactileObservation o = sense(hm, s, 0.0, rng);
        size_t i = 0;
        for (int dy = -2; dy <= 2; ++dy)
            for (int dx = -2; dx <= 2; ++dx, ++i)
                REQUIRE(o.readings[i] == hm.at(s.y + dy, s.x + dx));
    }
    SECTION("cells beyond the table read zero") {
        SceneConfig cfg;
        cfg.h = cfg.w = 16;
        cfg.objects.push_back(ObjectSpec::box(1, 1, 1, 1, 0.9));
        const HeightMap hm = rasterize(cfg);
        const TactileObservation o = sense(hm, {0, 0}, 0.0, rng);
        REQUIRE(o.readings[0] == 0.0);             // off-table corner taxel
        REQUIRE(o.readings[12] == 0.9);            // center taxel, on the box
        REQUIRE(o.readings[18] == 0.9);            // (dy=1, dx=1) taxel, on the box
    }
    SECTION("sigma 0 is pure: no randomness consumed, repeatable") {
        SceneConfig cfg;
        cfg.h = cfg.w = 16;
        cfg.objects.push_back(ObjectSpec::sphere(8, 8, 3, 1.0));
        const HeightMap hm = rasterize(cfg);
        Rng r1(42), r2(42);
        const TactileObservation a = sense(hm, {8, 8}, 0.0, r1);
        const TactileObservation b = sense(hm, {8, 8}, 0.0, r1);
        REQUIRE(a.readings == b.readings);
        REQUIRE(r1.next_u64() == r2.next_u64());  // stream untouched by sensing
    }
    SECTION("noise is clamped to [0, h_max]") {
        SceneConfig cfg;
        cfg.h = cfg.w = 16;
        cfg.objects.push_back(ObjectSpec::box(8, 8, 4, 4, 1.0));
        const HeightMap hm = rasterize(cfg);
        Rng noisy(3);
        for (int t = 0; t < 200; ++t) {
            const TactileObservation o = sense(hm, {8, 8}, 0.5, noisy);
            for (double r : o.readings) {
                REQUIRE(r >= 0.0);
                REQUIRE(r <= 1.0);
            }
        }
    }
}

TEST_CASE("scene files round-trip") {
    const SceneGenParams params;
    for (uint64_t seed : {1ull, 2ull, 3ull}) {
        const SceneConfig cfg =
            generate_scene(split_seed(88, seed), ObjectFamily::Composite, 32, 32, params);
        std::stringstream ss;
        write_scene(ss, cfg);
        const SceneConfig back = read_scene(ss);
        REQUIRE(scenes_equal(cfg, back));
        REQUIRE(back.seed == cfg.seed);
        const HeightMap a = rasterize(cfg), b = rasterize(back);
        REQUIRE(a.z == b.z);
    }
    SECTION("bad header throws") {
        std::stringstream ss("nonsense\n");
        REQUIRE_THROWS_AS(read_scene(ss), SceneFormatError);
    }
}
