// tloc: tactile grid localization pipeline.
//
// Subcommands: gen (build a dataset), train (observation / motion models),
// eval (success-rate protocol), run (single episode with belief heatmaps),
// inspect (print file headers). Exit codes: 0 success, 1 usage or config
// error, 2 missing input, 3 runtime failure.

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <thread>

#include "tloc/config.hpp"
#include "tloc/datagen.hpp"
#include "tloc/evalharness.hpp"
#include "tloc/models.hpp"
#include "tloc/pgm.hpp"
#include "tloc/training.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitMissingInput = 2;
constexpr int kExitRuntime = 3;

namespace fs = std::filesystem;
using namespace tloc;

struct GlobalOpts {
    std::string config_path;
    std::optional<uint64_t> seed;
    std::optional<int> threads;
    bool force = false;
    std::string out;
};

RunConfig effective_config(const GlobalOpts& g) {
    RunConfig cfg;
    if (!g.config_path.empty()) {
        if (!fs::exists(g.config_path))
            throw ConfigError("config file not found: " + g.config_path);
        cfg = load_config(g.config_path);
    }
    if (g.seed) cfg.seed = *g.seed;
    if (g.threads) cfg.threads = *g.threads;
    cfg.validate();
    return cfg;
}

int effective_threads(const RunConfig& cfg) {
    if (cfg.threads > 0) return cfg.threads;
    const unsigned hw = std::thread::hardware_concurrency();
    return hw > 0 ? static_cast<int>(hw) : 1;
}

class MissingInput : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

void require_file(const std::string& path, const std::string& what) {
    if (!fs::exists(path)) throw MissingInput(what + " not found: " + path);
}

// ---------------------------------------------------------------------------
// gen
// ---------------------------------------------------------------------------

int cmd_gen(const GlobalOpts& g) {
    const RunConfig cfg = effective_config(g);
    const std::string dir = g.out.empty() ? cfg.data_dir : g.out;
    if (fs::exists(dir + "/manifest.txt") && !g.force) {
        std::cerr << "dataset already exists at " << dir << " (use --force to overwrite)\n";
        return kExitUsage;
    }
    const DatasetManifest m = build_dataset(dir, cfg.dataset_config(),
                                            CameraModel::top_down(cfg.camera_height));
    std::cout << "dataset " << dir << "\n";
    std::cout << "grid " << m.h << " " << m.w << " k " << m.k << " classes " << m.n_classes
              << "\n";
    std::cout << "scenes " << m.scenes.size() << " samples " << m.samples << "\n";
    std::cout << "transitions " << m.transition_count << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

int cmd_train(const GlobalOpts& g, const std::string& which, bool naive, bool resume) {
    const RunConfig cfg = effective_config(g);
    require_file(cfg.data_dir + "/manifest.txt", "dataset manifest");
    const Dataset ds = Dataset::open(cfg.data_dir);
    fs::create_directories(cfg.ckpt_dir);

    if (which == "motion") {
        if (ds.manifest.transitions_file.empty()) {
            std::cerr << "dataset at " << cfg.data_dir << " has no transitions\n";
            return kExitMissingInput;
        }
        const auto transitions = ds.transitions();
        MotionNet net;
        std::ofstream log(cfg.motion_ckpt() + ".log", std::ios::trunc);
        const MotionTrainResult result =
            train_motion_model(net, transitions, cfg.grid_h, cfg.grid_w, cfg.hyper, &log);
        net.save(cfg.motion_ckpt());
        std::cout << "motion checkpoint " << cfg.motion_ckpt() << "\n";
        std::cout << "final loss " << result.loss_history.back() << "\n";
        for (ActionDir a : kAllActions) {
            const MotionKernel kern = net.kernel(a);
            std::printf("kernel %-5s:", action_name(a));
            for (int i = 0; i < 9; ++i) std::printf(" %.4f", kern.w[static_cast<size_t>(i)]);
            std::printf("\n");
        }
        return kExitOk;
    }

    const std::string ckpt = naive ? cfg.naive_ckpt() : cfg.obs_ckpt();
    if (resume) require_file(ckpt, "checkpoint to resume");
    Rng init(split_seed(cfg.seed, naive ? 0xA11B00ull : 0xA110C8ull));
    ObservationNet<float> net(cfg.net_config(naive), init);
    std::ofstream log(ckpt + ".log", std::ios::app);
    const ObsTrainResult result = train_observation_model(net, ds, cfg.hyper, ckpt, &log, resume);
    std::cout << (naive ? "naive" : "full") << " observation checkpoint " << ckpt << "\n";
    std::cout << "initial val ce " << result.initial_val_ce << "\n";
    std::cout << "best val ce " << result.best_val_ce << " at epoch " << result.best_epoch << "\n";
    std::cout << "epochs " << result.epochs_run << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

int cmd_eval(const GlobalOpts& g) {
    const RunConfig cfg = effective_config(g);
    std::vector<std::string> missing;
    for (const std::string& p : {cfg.obs_ckpt(), cfg.naive_ckpt(), cfg.motion_ckpt()})
        if (!fs::exists(p)) missing.push_back(p);
    if (!missing.empty()) {
        std::cerr << "missing checkpoints:";
        for (const auto& p : missing) std::cerr << " " << p;
        std::cerr << "\n";
        return kExitMissingInput;
    }
    const ObservationNet<float> full = ObservationNet<float>::load(cfg.obs_ckpt());
    const ObservationNet<float> naive = ObservationNet<float>::load(cfg.naive_ckpt());
    const MotionNet motion = MotionNet::load(cfg.motion_ckpt());
    EvalModels models;
    models.full = &full;
    models.naive = &naive;
    models.motion = &motion;
    models.decode = cfg.decode;

    const std::vector<ObsModelKind> kinds = {ObsModelKind::Uniform, ObsModelKind::Naive,
                                             ObsModelKind::Full};
    EvalReport combined;
    for (ObjectFamily family : {ObjectFamily::Primitive, ObjectFamily::Composite}) {
        const EvalReport r =
            evaluate(models, kinds, family, cfg.eval_configs, cfg.eval_episodes,
                     cfg.eval_threshold, split_seed(cfg.seed, 0xE7A1ull), cfg.eval_world(),
                     effective_threads(cfg));
        for (const auto& row : r.rows) combined.rows.push_back(row);
        combined.skipped_scenes += r.skipped_scenes;
        std::cerr << family_name(family) << " family wall time " << r.wall_seconds << " s\n";
    }

    std::printf("localization success rate (percent), threshold %d\n", cfg.eval_threshold);
    std::printf("%-10s %10s %10s %10s\n", "family", "uniform", "naive", "full");
    for (size_t f = 0; f < 2; ++f) {
        std::printf("%-10s", family_name(f == 0 ? ObjectFamily::Primitive : ObjectFamily::Composite));
        for (size_t m = 0; m < 3; ++m)
            std::printf(" %10.2f", combined.rows[f * 3 + m].stats.rate_percent());
        std::printf("\n");
    }

    const std::string out_dir = g.out.empty() ? "." : g.out;
    fs::create_directories(out_dir);
    const std::string report_path = out_dir + "/eval_report.txt";
    std::ofstream os(report_path, std::ios::trunc);
    write_report(os, combined);
    std::cout << "report " << report_path << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------
// run
// ---------------------------------------------------------------------------

int cmd_run(const GlobalOpts& g, const std::string& scene_path, const std::string& start_str,
            const std::string& dir_str, const std::string& model_override) {
    const RunConfig cfg = effective_config(g);
    require_file(scene_path, "scene file");
    std::ifstream scene_is(scene_path);
    const SceneConfig scene = read_scene(scene_is);

    GridState start;
    if (std::sscanf(start_str.c_str(), "%d,%d", &start.x, &start.y) != 2)
        throw ConfigError("--start must be X,Y, got '" + start_str + "'");
    if (start.x < 0 || start.x >= scene.w || start.y < 0 || start.y >= scene.h)
        throw ConfigError("start (" + start_str + ") outside the " + std::to_string(scene.h) +
                          "x" + std::to_string(scene.w) + " grid");

    const std::string model = model_override.empty() ? cfg.run_model : model_override;
    ObsModelKind kind;
    if (model == "uniform") kind = ObsModelKind::Uniform;
    else if (model == "naive") kind = ObsModelKind::Naive;
    else if (model == "full") kind = ObsModelKind::Full;
    else if (model == "oracle") kind = ObsModelKind::Oracle;
    else throw ConfigError("unknown model '" + model + "'");

    std::optional<ObservationNet<float>> full, naive;
    std::optional<MotionNet> motion;
    if (kind == ObsModelKind::Full) {
        require_file(cfg.obs_ckpt(), "full observation checkpoint");
        full.emplace(ObservationNet<float>::load(cfg.obs_ckpt()));
    }
    if (kind == ObsModelKind::Naive) {
        require_file(cfg.naive_ckpt(), "naive observation checkpoint");
        naive.emplace(ObservationNet<float>::load(cfg.naive_ckpt()));
    }
    if (fs::exists(cfg.motion_ckpt())) motion.emplace(MotionNet::load(cfg.motion_ckpt()));

    const HeightMap hm = rasterize(scene);
    const DepthImage depth_img = render_depth(hm, CameraModel::top_down(cfg.camera_height));
    std::vector<float> depth(depth_img.d.begin(), depth_img.d.end());
    std::optional<ScanRecord> scan;
    if (kind == ObsModelKind::Oracle) scan = scan_scene(scene, CameraModel::top_down(cfg.camera_height), cfg.k);

    ActionDir dir;
    if (dir_str == "north") dir = ActionDir::North;
    else if (dir_str == "south") dir = ActionDir::South;
    else if (dir_str == "east") dir = ActionDir::East;
    else if (dir_str == "west") dir = ActionDir::West;
    else if (dir_str == "auto")
        dir = start.x <= (scene.w - 1) / 2 ? ActionDir::East : ActionDir::West;
    else throw ConfigError("--dir must be north|south|east|west|auto");

    EvalModels models;
    models.full = full ? &*full : nullptr;
    models.naive = naive ? &*naive : nullptr;
    models.motion = motion ? &*motion : nullptr;
    models.decode = cfg.decode;

    const int length = cfg.eval_episode_len > 0 ? cfg.eval_episode_len : scene.w;
    Rng rng(split_seed(cfg.seed, 0x4117ull));
    const EpisodeTrace trace =
        run_episode(scene, hm, depth, kind, models, scan ? &*scan : nullptr, start, dir, length,
                    cfg.eval_threshold, rng, cfg.k, true);

    const std::string out_dir = g.out.empty() ? "run_out" : g.out;
    fs::create_directories(out_dir);
    for (size_t t = 0; t < trace.beliefs.size(); ++t) {
        char name[64];
        std::snprintf(name, sizeof(name), "%s/belief_%03zu.pgm", out_dir.c_str(), t);
        write_pgm(name, scene.w, scene.h,
                  belief_heatmap(trace.beliefs[t], trace.steps[t].true_state), cfg.run_scale);
    }
    std::ofstream trace_os(out_dir + "/trace.txt", std::ios::trunc);
    trace_os << "tloc-trace v1\n";
    trace_os << "scene " << scene_path << "\n";
    trace_os << "model " << model << "\n";
    trace_os << "start " << start.x << "," << start.y << " dir " << action_name(dir) << "\n";
    for (size_t t = 0; t < trace.steps.size(); ++t) {
        const auto& s = trace.steps[t];
        trace_os << "step " << t << " true " << s.true_state.x << "," << s.true_state.y
                 << " action " << (s.action < 0 ? "none" : action_name(static_cast<ActionDir>(s.action)))
                 << " inferred " << s.inferred.x << "," << s.inferred.y << " l1 " << s.l1
                 << " entropy " << s.entropy << "\n";
    }
    trace_os << "success " << (trace.success ? 1 : 0) << " final_error " << trace.final_error
             << " resets " << trace.resets << "\n";

    std::cout << "episode steps " << trace.steps.size() - 1 << " final-error "
              << trace.final_error << " success " << (trace.success ? 1 : 0) << "\n";
    std::cout << "frames " << trace.beliefs.size() << " -> " << out_dir << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------
// inspect
// ---------------------------------------------------------------------------

int cmd_inspect(const std::string& path) {
    if (!fs::exists(path)) {
        std::cerr << "no such path: " << path << "\n";
        return kExitMissingInput;
    }
    std::string manifest_path = path;
    if (fs::is_directory(path)) manifest_path = path + "/manifest.txt";
    if (fs::is_directory(path) || path.ends_with("manifest.txt")) {
        if (!fs::exists(manifest_path)) {
            std::cerr << "no manifest.txt under " << path << "\n";
            return kExitMissingInput;
        }
        const DatasetManifest m = load_manifest(fs::path(manifest_path).parent_path().string());
        std::cout << "dataset v" << m.version << " grid " << m.h << "x" << m.w << " k " << m.k
                  << " classes " << m.n_classes << "\n";
        std::cout << "scenes " << m.scenes.size() << " samples " << m.samples << " transitions "
                  << m.transition_count << "\n";
        int train = 0, val = 0, test = 0;
        for (const auto& e : m.scenes) {
            if (e.split == "train") ++train;
            else if (e.split == "val") ++val;
            else ++test;
        }
        std::cout << "splits train " << train << " val " << val << " test " << test << "\n";
        return kExitOk;
    }

    std::ifstream is(path, std::ios::binary);
    char magic[4] = {0, 0, 0, 0};
    is.read(magic, 4);
    if (std::memcmp(magic, "TLOC", 4) == 0) {
        const auto entries = read_checkpoint(path);
        size_t total = 0;
        std::cout << "checkpoint " << path << " entries " << entries.size() << "\n";
        for (const auto& e : entries) {
            std::cout << "  " << e.name << " " << shape_str(e.dims) << "\n";
            if (e.name.rfind("param/", 0) == 0) total += e.values.size();
        }
        std::cout << "parameters " << total << "\n";
        return kExitOk;
    }
    if (std::memcmp(magic, "TTRN", 4) == 0) {
        const auto ts = load_transitions(path);
        std::cout << "transitions " << ts.size() << "\n";
        return kExitOk;
    }
    is.seekg(0);
    std::string first;
    std::getline(is, first);
    if (first == "tloc-scene v1") {
        is.seekg(0);
        const SceneConfig scene = read_scene(is);
        std::cout << "scene grid " << scene.h << "x" << scene.w << " seed " << scene.seed
                  << " objects " << scene.objects.size() << "\n";
        for (const auto& o : scene.objects)
            std::cout << "  " << shape_name(o.shape) << " at (" << o.cx << ", " << o.cy << ")\n";
        return kExitOk;
    }
    std::cerr << "unrecognized file format: " << path << "\n";
    return kExitUsage;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"tactile grid localization pipeline"};
    app.require_subcommand(1);
    app.fallthrough();  // global flags are accepted after the subcommand too

    GlobalOpts g;
    app.add_option("--config", g.config_path, "configuration file (key = value lines)");
    uint64_t seed_opt = 0;
    int threads_opt = 0;
    auto* seed_flag = app.add_option("--seed", seed_opt, "override the master seed");
    auto* threads_flag = app.add_option("--threads", threads_opt, "worker threads (0 = all cores)");
    app.add_flag("--force", g.force, "overwrite existing outputs");
    app.add_option("--out", g.out, "output directory override");

    auto* gen = app.add_subcommand("gen", "generate a dataset (scenes, scans, transitions)");
    auto* train = app.add_subcommand("train", "train a model");
    std::string which;
    bool naive = false, resume = false;
    train->add_option("which", which, "obs | motion")->required()
        ->check(CLI::IsMember({"obs", "motion"}));
    train->add_flag("--naive", naive, "train the image-free naive observation model");
    train->add_flag("--resume", resume, "continue from the saved checkpoint");
    auto* eval_cmd = app.add_subcommand("eval", "run the success-rate protocol");
    auto* run = app.add_subcommand("run", "run one episode and emit belief heatmaps");
    std::string scene_path, start_str, dir_str = "auto", model_override;
    run->add_option("--scene", scene_path, "scene file")->required();
    run->add_option("--start", start_str, "start position X,Y")->required();
    run->add_option("--dir", dir_str, "traversal direction (north|south|east|west|auto)");
    run->add_option("--model", model_override, "observation model (full|naive|uniform|oracle)");
    auto* inspect = app.add_subcommand("inspect", "print dataset/checkpoint/scene headers");
    std::string inspect_path;
    inspect->add_option("path", inspect_path, "file or dataset directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }
    if (*seed_flag) g.seed = seed_opt;
    if (*threads_flag) g.threads = threads_opt;

    try {
        if (*gen) return cmd_gen(g);
        if (*train) return cmd_train(g, which, naive, resume);
        if (*eval_cmd) return cmd_eval(g);
        if (*run) return cmd_run(g, scene_path, start_str, dir_str, model_override);
        if (*inspect) return cmd_inspect(inspect_path);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const ContractViolation& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const MissingInput& e) {
        std::cerr << "missing input: " << e.what() << "\n";
        return kExitMissingInput;
    } catch (const std::exception& e) {
        std::cerr << "runtime error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitUsage;
}
