#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "tloc/datagen.hpp"
#include "tloc/filter.hpp"
#include "tloc/models.hpp"
#include "tloc/rng.hpp"
#include "tloc/simworld.hpp"

namespace tloc {

enum class ObsModelKind : uint8_t { Uniform = 0, Naive = 1, Full = 2, Oracle = 3 };

inline const char* obs_model_name(ObsModelKind k) {
    switch (k) {
        case ObsModelKind::Uniform: return "uniform";
        case ObsModelKind::Naive: return "naive";
        case ObsModelKind::Full: return "full";
        case ObsModelKind::Oracle: return "oracle";
    }
    return "?";
}

// Observation models available to an episode. The motion net is optional;
// without it the filter uses the exact generator kernel for the scene's
// motion noise.
struct EvalModels {
    const ObservationNet<float>* full = nullptr;
    const ObservationNet<float>* naive = nullptr;
    const MotionNet* motion = nullptr;
    DecodeMode decode = DecodeMode::ExpectedBin;
};

// Ground-truth likelihood from an exhaustive scan: distances from the current
// observation to every state's recorded observation, min-max normalized so
// the closest state maps to 1.
inline LikelihoodMap oracle_likelihood(const ScanRecord& rec, const TactileObservation& obs) {
    const int n = rec.h * rec.w;
    const int kk = rec.k * rec.k;
    std::vector<float> o(obs.readings.begin(), obs.readings.end());
    if (static_cast<int>(o.size()) != kk)
        throw ContractViolation("oracle_likelihood: observation length " +
                                std::to_string(o.size()) + " does not match scan k^2 = " +
                                std::to_string(kk));
    std::vector<double> dist(static_cast<size_t>(n));
    double dmin = 0, dmax = 0;
    for (int i = 0; i < n; ++i) {
        dist[i] = observation_distance(o.data(), rec.obs.data() + static_cast<size_t>(i) * kk, kk);
        if (i == 0)
            dmin = dmax = dist[0];
        else {
            dmin = std::min(dmin, dist[i]);
            dmax = std::max(dmax, dist[i]);
        }
    }
    LikelihoodMap map(rec.h, rec.w);
    if (dmax == dmin) {
        std::fill(map.v.begin(), map.v.end(), 1.0);
        return map;
    }
    for (int i = 0; i < n; ++i) map.v[i] = 1.0 - (dist[i] - dmin) / (dmax - dmin);
    return map;
}

// ---------------------------------------------------------------------------
// episodes
// ---------------------------------------------------------------------------

struct StepRecord {
    GridState true_state;
    int action = -1;  // -1 for the t = 0 record
    TactileObservation obs;
    GridState inferred;
    int l1 = 0;
    double entropy = 0;
};

struct EpisodeTrace {
    int scene_id = 0;
    GridState start;
    ActionDir dir = ActionDir::East;
    int threshold = 4;
    std::vector<StepRecord> steps;  // episode length + 1 records, including t = 0
    bool success = false;
    int final_error = 0;
    int resets = 0;  // degenerate corrections handled by uniform reset
    Belief final_belief;
    std::vector<Belief> beliefs;  // per-step snapshots when requested
};

namespace detail {

struct LikelihoodSource {
    ObsModelKind kind;
    const EvalModels* models;
    const ScanRecord* oracle;
    const std::vector<float>* depth;
    int h, w;

    LikelihoodMap operator()(const TactileObservation& obs) const {
        switch (kind) {
            case ObsModelKind::Uniform: return uniform_likelihood(h, w);
            case ObsModelKind::Oracle: return oracle_likelihood(*oracle, obs);
            case ObsModelKind::Naive:
            case ObsModelKind::Full: {
                const ObservationNet<float>* net =
                    kind == ObsModelKind::Naive ? models->naive : models->full;
                if (!net)
                    throw ContractViolation(std::string("run_episode: no ") +
                                            obs_model_name(kind) + " model loaded");
                std::vector<float> o(obs.readings.begin(), obs.readings.end());
                return net->likelihood(*depth, o, models->decode);
            }
        }
        return uniform_likelihood(h, w);
    }
};

}  // namespace detail

// One filtering episode under the linear-traversal policy: uniform prior, a
// correction on the first observation, then predict + correct per step. The
// traversal is complete when the gripper reaches the far edge, so the episode
// ends there (executed length <= `length`). Degenerate corrections reset the
// belief to uniform and are counted.
inline EpisodeTrace run_episode(const SceneConfig& scene, const HeightMap& hm,
                                const std::vector<float>& depth, ObsModelKind kind,
                                const EvalModels& models, const ScanRecord* oracle,
                                GridState start, ActionDir dir, int length, int threshold,
                                Rng& rng, int k = 5, bool collect_beliefs = false) {
    if (start.x < 0 || start.x >= hm.w || start.y < 0 || start.y >= hm.h)
        throw ContractViolation("run_episode: start (" + std::to_string(start.x) + ", " +
                                std::to_string(start.y) + ") outside " + std::to_string(hm.h) +
                                "x" + std::to_string(hm.w));
    if (oracle) k = oracle->k;
    const detail::LikelihoodSource likelihood{kind, &models, oracle, &depth, hm.h, hm.w};

    EpisodeTrace trace;
    trace.scene_id = static_cast<int>(scene.seed);
    trace.start = start;
    trace.dir = dir;
    trace.threshold = threshold;

    MotionKernel kernel =
        models.motion ? models.motion->kernel(dir) : MotionKernel::from_action(dir, scene.motion_eps);

    Belief bel = init_uniform(hm.h, hm.w);
    GridState state = start;
    auto apply_correction = [&](const TactileObservation& obs) {
        auto corrected = correct(bel, likelihood(obs));
        if (corrected) {
            bel = std::move(*corrected);
        } else {
            bel = init_uniform(hm.h, hm.w);
            ++trace.resets;
        }
    };
    auto record = [&](int action, const TactileObservation& obs) {
        StepRecord r;
        r.true_state = state;
        r.action = action;
        r.obs = obs;
        r.inferred = infer_state(bel);
        r.l1 = l1_error(state, r.inferred);
        r.entropy = belief_entropy(bel);
        trace.steps.push_back(std::move(r));
        if (collect_beliefs) trace.beliefs.push_back(bel);
    };

    const TactileObservation obs0 = sense(hm, state, scene.sensor_sigma, rng, k);
    apply_correction(obs0);
    record(-1, obs0);

    const Offset off = action_offset(dir);
    for (int t = 1; t <= length; ++t) {
        const GridState ahead{state.x + off.dx, state.y + off.dy};
        if (ahead.x < 0 || ahead.x >= hm.w || ahead.y < 0 || ahead.y >= hm.h)
            break;  // far edge reached; the traversal is complete
        state = step(state, dir, rng, scene.motion_eps, hm.h, hm.w);
        const TactileObservation obs = sense(hm, state, scene.sensor_sigma, rng, k);
        bel = predict(bel, kernel);
        apply_correction(obs);
        record(static_cast<int>(dir), obs);
    }
    trace.final_belief = bel;
    trace.final_error = trace.steps.back().l1;
    trace.success = trace.final_error < threshold;
    return trace;
}

// ---------------------------------------------------------------------------
// episode planning (the linear-traversal policy)
// ---------------------------------------------------------------------------

struct EpisodePlan {
    GridState start;
    ActionDir dir = ActionDir::East;
};

// True when the straight-line traversal's footprint overlaps any object. The
// path line is noise-invariant: stay events never change the traversed row or
// column.
inline bool path_touches_object(const HeightMap& hm, GridState start, ActionDir dir, int length,
                                int k) {
    GridState s = start;
    const Offset o = action_offset(dir);
    for (int t = 0; t <= length; ++t) {
        if (footprint_contacts(hm, s, k)) return true;
        s.x = std::clamp(s.x + o.dx, 0, hm.w - 1);
        s.y = std::clamp(s.y + o.dy, 0, hm.h - 1);
    }
    return false;
}

// Random start and traversal axis; direction points toward the farther edge.
// Starts whose traversal touches nothing are resampled.
inline std::optional<EpisodePlan> sample_episode_plan(const HeightMap& hm, int length, int k,
                                                      Rng& rng, int retries = 50) {
    for (int attempt = 0; attempt < retries; ++attempt) {
        EpisodePlan plan;
        plan.start = {rng.uniform_int(0, hm.w - 1), rng.uniform_int(0, hm.h - 1)};
        if (rng.coin())
            plan.dir = plan.start.x <= (hm.w - 1) / 2 ? ActionDir::East : ActionDir::West;
        else
            plan.dir = plan.start.y <= (hm.h - 1) / 2 ? ActionDir::South : ActionDir::North;
        if (path_touches_object(hm, plan.start, plan.dir, length, k)) return plan;
    }
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// quantitative evaluation
// ---------------------------------------------------------------------------

struct ModelRunStats {
    int successes = 0;
    int episodes = 0;
    double final_error_sum = 0;
    int resets = 0;

    double rate_percent() const {
        return episodes == 0 ? 0.0 : 100.0 * successes / static_cast<double>(episodes);
    }
    double mean_final_error() const {
        return episodes == 0 ? 0.0 : final_error_sum / static_cast<double>(episodes);
    }
};

struct EvalRow {
    ObjectFamily family = ObjectFamily::Primitive;
    ObsModelKind kind = ObsModelKind::Uniform;
    ModelRunStats stats;
};

struct EvalReport {
    std::vector<EvalRow> rows;
    int skipped_scenes = 0;
    double wall_seconds = 0;  // stderr diagnostics only, never serialized
};

struct EvalWorld {
    int h = 32, w = 32, k = 5;
    double motion_eps = 0.1;
    double sensor_sigma = 0.0;
    int episode_len = 0;  // 0 -> defaults to grid width
    CameraModel cam = CameraModel::top_down(10.0);

    int length() const { return episode_len > 0 ? episode_len : w; }
};

namespace detail {

inline void parallel_scenes(int n, int threads, const std::function<void(int)>& fn) {
    if (threads <= 1 || n <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t)
        pool.emplace_back([&, t] {
            for (int i = t; i < n; i += threads) fn(i);
        });
    for (auto& th : pool) th.join();
}

}  // namespace detail

// Runs the full per-family protocol: n_configs random scenes, episodes_per_config
// episodes each, identical true trajectories across the compared models.
// Scenes whose episodes cannot find an object-touching start are regenerated
// up to 3 times, then skipped and counted.
inline EvalReport evaluate(const EvalModels& models, const std::vector<ObsModelKind>& kinds,
                           ObjectFamily family, int n_configs, int episodes_per_config,
                           int threshold, uint64_t seed, const EvalWorld& world, int threads = 1,
                           std::vector<EpisodeTrace>* trace_sink_full = nullptr) {
    const auto t0 = std::chrono::steady_clock::now();
    const int length = world.length();
    const SceneGenParams gen = SceneGenParams::for_grid(world.h, world.w);

    struct SceneResult {
        std::vector<ModelRunStats> per_kind;
        std::vector<EpisodeTrace> full_traces;
        bool skipped = false;
    };
    std::vector<SceneResult> results(static_cast<size_t>(n_configs));

    detail::parallel_scenes(n_configs, threads, [&](int i) {
        SceneResult& res = results[static_cast<size_t>(i)];
        res.per_kind.resize(kinds.size());
        for (int scene_attempt = 0; scene_attempt < 3; ++scene_attempt) {
            SceneConfig scene = generate_scene_retry(
                split_seed(seed, static_cast<uint64_t>(i) + static_cast<uint64_t>(scene_attempt) *
                                                                0x10000000ull),
                family, world.h, world.w, gen);
            scene.motion_eps = world.motion_eps;
            scene.sensor_sigma = world.sensor_sigma;
            const HeightMap hm = rasterize(scene);
            const DepthImage depth = render_depth(hm, world.cam);
            std::vector<float> depth_f32(depth.d.begin(), depth.d.end());
            std::optional<ScanRecord> scan;
            for (ObsModelKind kind : kinds)
                if (kind == ObsModelKind::Oracle && !scan)
                    scan = scan_scene(scene, world.cam, world.k);

            std::vector<EpisodePlan> plans;
            bool planned = true;
            for (int j = 0; j < episodes_per_config; ++j) {
                const uint64_t ep_seed =
                    split_seed(seed, 0xEE000000ull + static_cast<uint64_t>(i) * 1000003ull +
                                         static_cast<uint64_t>(j) +
                                         static_cast<uint64_t>(scene_attempt) * 0x40000000ull);
                Rng plan_rng(split_seed(ep_seed, 0));
                const auto plan = sample_episode_plan(hm, length, world.k, plan_rng);
                if (!plan) {
                    planned = false;
                    break;
                }
                plans.push_back(*plan);
            }
            if (!planned) continue;  // regenerate the scene

            std::vector<ModelRunStats> stats(kinds.size());
            std::vector<EpisodeTrace> full_traces;
            for (int j = 0; j < episodes_per_config; ++j) {
                const uint64_t ep_seed =
                    split_seed(seed, 0xEE000000ull + static_cast<uint64_t>(i) * 1000003ull +
                                         static_cast<uint64_t>(j) +
                                         static_cast<uint64_t>(scene_attempt) * 0x40000000ull);
                for (size_t m = 0; m < kinds.size(); ++m) {
                    // fresh rng per model: identical trajectories for fairness
                    Rng ep_rng(split_seed(ep_seed, 1));
                    EpisodeTrace trace = run_episode(
                        scene, hm, depth_f32, kinds[m], models, scan ? &*scan : nullptr,
                        plans[static_cast<size_t>(j)].start, plans[static_cast<size_t>(j)].dir,
                        length, threshold, ep_rng, world.k);
                    trace.scene_id = i;
                    stats[m].episodes += 1;
                    stats[m].successes += trace.success ? 1 : 0;
                    stats[m].final_error_sum += trace.final_error;
                    stats[m].resets += trace.resets;
                    if (kinds[m] == ObsModelKind::Full && trace_sink_full)
                        full_traces.push_back(std::move(trace));
                }
            }
            res.per_kind = std::move(stats);
            res.full_traces = std::move(full_traces);
            return;
        }
        res.skipped = true;
    });

    EvalReport report;
    for (size_t m = 0; m < kinds.size(); ++m) {
        EvalRow row;
        row.family = family;
        row.kind = kinds[m];
        for (const auto& res : results) {
            if (res.skipped) continue;
            row.stats.successes += res.per_kind[m].successes;
            row.stats.episodes += res.per_kind[m].episodes;
            row.stats.final_error_sum += res.per_kind[m].final_error_sum;
            row.stats.resets += res.per_kind[m].resets;
        }
        report.rows.push_back(row);
    }
    for (auto& res : results) {
        if (res.skipped) ++report.skipped_scenes;
        if (trace_sink_full)
            for (auto& t : res.full_traces) trace_sink_full->push_back(std::move(t));
    }
    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
}

inline void write_report(std::ostream& os, const EvalReport& report) {
    os << "tloc-eval v1\n";
    for (const auto& row : report.rows) {
        char rate[32], err[32];
        std::snprintf(rate, sizeof(rate), "%.2f", row.stats.rate_percent());
        std::snprintf(err, sizeof(err), "%.4f", row.stats.mean_final_error());
        os << "row " << family_name(row.family) << " " << obs_model_name(row.kind)
           << " successes " << row.stats.successes << " episodes " << row.stats.episodes
           << " rate " << rate << " mean_final_error " << err << " resets " << row.stats.resets
           << "\n";
    }
    os << "skipped_scenes " << report.skipped_scenes << "\n";
}

// ---------------------------------------------------------------------------
// failure taxonomy
// ---------------------------------------------------------------------------

enum class FailureMode : uint8_t { EarlyDrift = 0, Ambiguity = 1, Other = 2 };

struct FailureTaxonomy {
    int early_drift = 0;
    int ambiguity = 0;
    int other = 0;
    int failures() const { return early_drift + ambiguity + other; }
};

// Number of distinct local maxima (8-neighborhood, plateaus merged) above
// half the global maximum.
inline int count_belief_modes(const Belief& bel) {
    const double cutoff = 0.5 * bel.p[static_cast<size_t>(infer_state(bel).y) * bel.w +
                                      infer_state(bel).x];
    auto is_peak = [&](int y, int x) {
        const double v = bel.at(y, x);
        if (!(v > cutoff)) return false;
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
                if (dy == 0 && dx == 0) continue;
                const int yy = y + dy, xx = x + dx;
                if (yy < 0 || yy >= bel.h || xx < 0 || xx >= bel.w) continue;
                if (bel.at(yy, xx) > v) return false;
            }
        return true;
    };
    std::vector<char> peak(bel.size(), 0), seen(bel.size(), 0);
    for (int y = 0; y < bel.h; ++y)
        for (int x = 0; x < bel.w; ++x)
            peak[static_cast<size_t>(y) * bel.w + x] = is_peak(y, x) ? 1 : 0;
    int modes = 0;
    std::deque<int> queue;
    for (int start = 0; start < static_cast<int>(bel.size()); ++start) {
        if (!peak[static_cast<size_t>(start)] || seen[static_cast<size_t>(start)]) continue;
        ++modes;
        seen[static_cast<size_t>(start)] = 1;
        queue.push_back(start);
        while (!queue.empty()) {
            const int cur = queue.front();
            queue.pop_front();
            const int cy = cur / bel.w, cx = cur % bel.w;
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    const int yy = cy + dy, xx = cx + dx;
                    if (yy < 0 || yy >= bel.h || xx < 0 || xx >= bel.w) continue;
                    const int idx = yy * bel.w + xx;
                    if (peak[static_cast<size_t>(idx)] && !seen[static_cast<size_t>(idx)]) {
                        seen[static_cast<size_t>(idx)] = 1;
                        queue.push_back(idx);
                    }
                }
        }
    }
    return modes;
}

inline FailureMode classify_failure(const EpisodeTrace& trace) {
    for (const auto& s : trace.steps)
        if (s.l1 < trace.threshold && &s != &trace.steps.back())
            return FailureMode::EarlyDrift;  // localized at some point, drifted away
    if (count_belief_modes(trace.final_belief) >= 2) return FailureMode::Ambiguity;
    return FailureMode::Other;
}

inline FailureTaxonomy failure_taxonomy(const std::vector<EpisodeTrace>& traces) {
    FailureTaxonomy tax;
    for (const auto& t : traces) {
        if (t.success) continue;
        switch (classify_failure(t)) {
            case FailureMode::EarlyDrift: ++tax.early_drift; break;
            case FailureMode::Ambiguity: ++tax.ambiguity; break;
            case FailureMode::Other: ++tax.other; break;
        }
    }
    return tax;
}

}  // namespace tloc
