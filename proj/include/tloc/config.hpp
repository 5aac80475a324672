#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tloc/evalharness.hpp"
#include "tloc/models.hpp"
#include "tloc/simworld.hpp"
#include "tloc/training.hpp"

namespace tloc {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Run configuration: a flat key = value file with '#' comments. Every key is
// validated against the known set before any subcommand executes; environment
// variables are never consulted.
struct RunConfig {
    uint64_t seed = 1;
    int threads = 0;  // 0 = all available cores

    int grid_h = 32, grid_w = 32;
    int k = 5;
    int n_classes = kLikelihoodClasses;
    double camera_height = 10.0;
    double motion_eps = 0.1;
    double sensor_sigma = 0.0;

    std::string data_dir = "data";
    ObjectFamily family = ObjectFamily::Primitive;
    int train_scenes = 300, val_scenes = 30, test_scenes = 50;
    uint64_t transitions = 100000;

    HyperParams hyper;

    std::string ckpt_dir = "ckpt";

    int eval_configs = 50;
    int eval_episodes = 10;
    int eval_threshold = 4;
    int eval_episode_len = 0;  // 0 -> grid width
    DecodeMode decode = DecodeMode::ExpectedBin;

    std::string run_model = "full";
    int run_scale = 8;

    std::string obs_ckpt() const { return ckpt_dir + "/obs.tloc"; }
    std::string naive_ckpt() const { return ckpt_dir + "/naive.tloc"; }
    std::string motion_ckpt() const { return ckpt_dir + "/motion.tloc"; }

    ObservationNetConfig net_config(bool naive) const {
        ObservationNetConfig cfg;
        cfg.h = grid_h;
        cfg.w = grid_w;
        cfg.k = k;
        cfg.n_classes = n_classes;
        cfg.naive = naive;
        return cfg;
    }

    DatasetGenConfig dataset_config() const {
        DatasetGenConfig cfg;
        cfg.h = grid_h;
        cfg.w = grid_w;
        cfg.k = k;
        cfg.train_scenes = train_scenes;
        cfg.val_scenes = val_scenes;
        cfg.test_scenes = test_scenes;
        cfg.family = family;
        cfg.seed = seed;
        cfg.motion_eps = motion_eps;
        cfg.sensor_sigma = sensor_sigma;
        cfg.transition_count = transitions;
        return cfg;
    }

    EvalWorld eval_world() const {
        EvalWorld world;
        world.h = grid_h;
        world.w = grid_w;
        world.k = k;
        world.motion_eps = motion_eps;
        world.sensor_sigma = sensor_sigma;
        world.episode_len = eval_episode_len;
        world.cam = CameraModel::top_down(camera_height);
        return world;
    }

    void validate() const {
        if (grid_h < 8 || grid_w < 8 || grid_h % 4 != 0 || grid_w % 4 != 0)
            throw ConfigError("grid dims must be divisible by 4 and at least 8, got " +
                              std::to_string(grid_h) + "x" + std::to_string(grid_w));
        if (k < 1 || k % 2 == 0) throw ConfigError("world.k must be odd and positive");
        if (motion_eps < 0 || motion_eps >= 1) throw ConfigError("world.motion_eps must be in [0, 1)");
        if (sensor_sigma < 0) throw ConfigError("world.sensor_sigma must be non-negative");
        if (train_scenes < 0 || val_scenes < 0 || test_scenes < 0)
            throw ConfigError("scene counts must be non-negative");
        if (eval_threshold < 1) throw ConfigError("eval.threshold must be at least 1");
        if (eval_configs < 1 || eval_episodes < 1)
            throw ConfigError("eval.configs and eval.episodes_per_config must be at least 1");
        if (run_scale < 1) throw ConfigError("run.scale must be at least 1");
        if (run_model != "full" && run_model != "naive" && run_model != "uniform" &&
            run_model != "oracle")
            throw ConfigError("run.model must be one of full|naive|uniform|oracle");
        hyper.validate();
    }
};

namespace detail {

inline std::string trim(const std::string& s) {
    const size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& value) {
    std::istringstream is(value);
    T out;
    if (!(is >> out) || !(is >> std::ws).eof())
        throw ConfigError("invalid value '" + value + "' for key '" + key + "'");
    return out;
}

}  // namespace detail

inline void apply_config_entry(RunConfig& cfg, const std::string& key, const std::string& value) {
    using detail::parse_number;
    if (key == "seed") cfg.seed = parse_number<uint64_t>(key, value);
    else if (key == "threads") cfg.threads = parse_number<int>(key, value);
    else if (key == "grid.h") cfg.grid_h = parse_number<int>(key, value);
    else if (key == "grid.w") cfg.grid_w = parse_number<int>(key, value);
    else if (key == "world.k") cfg.k = parse_number<int>(key, value);
    else if (key == "world.camera_height") cfg.camera_height = parse_number<double>(key, value);
    else if (key == "world.motion_eps") cfg.motion_eps = parse_number<double>(key, value);
    else if (key == "world.sensor_sigma") cfg.sensor_sigma = parse_number<double>(key, value);
    else if (key == "data.dir") cfg.data_dir = value;
    else if (key == "data.family") {
        if (value == "primitive") cfg.family = ObjectFamily::Primitive;
        else if (value == "composite") cfg.family = ObjectFamily::Composite;
        else throw ConfigError("data.family must be primitive or composite, got '" + value + "'");
    }
    else if (key == "data.train_scenes") cfg.train_scenes = parse_number<int>(key, value);
    else if (key == "data.val_scenes") cfg.val_scenes = parse_number<int>(key, value);
    else if (key == "data.test_scenes") cfg.test_scenes = parse_number<int>(key, value);
    else if (key == "data.transitions") cfg.transitions = parse_number<uint64_t>(key, value);
    else if (key == "train.obs_lr") cfg.hyper.obs_lr = parse_number<double>(key, value);
    else if (key == "train.motion_lr") cfg.hyper.motion_lr = parse_number<double>(key, value);
    else if (key == "train.obs_batch") cfg.hyper.obs_batch = parse_number<int>(key, value);
    else if (key == "train.motion_batch") cfg.hyper.motion_batch = parse_number<int>(key, value);
    else if (key == "train.obs_epochs") cfg.hyper.obs_epochs = parse_number<int>(key, value);
    else if (key == "train.motion_epochs") cfg.hyper.motion_epochs = parse_number<int>(key, value);
    else if (key == "train.queries_per_scene")
        cfg.hyper.queries_per_scene = parse_number<int>(key, value);
    else if (key == "train.contact_fraction")
        cfg.hyper.contact_fraction = parse_number<double>(key, value);
    else if (key == "train.val_interval") cfg.hyper.val_interval = parse_number<int>(key, value);
    else if (key == "ckpt.dir") cfg.ckpt_dir = value;
    else if (key == "eval.configs") cfg.eval_configs = parse_number<int>(key, value);
    else if (key == "eval.episodes_per_config") cfg.eval_episodes = parse_number<int>(key, value);
    else if (key == "eval.threshold") cfg.eval_threshold = parse_number<int>(key, value);
    else if (key == "eval.episode_len") cfg.eval_episode_len = parse_number<int>(key, value);
    else if (key == "eval.decode") {
        if (value == "expected") cfg.decode = DecodeMode::ExpectedBin;
        else if (value == "argmax") cfg.decode = DecodeMode::ArgmaxBin;
        else throw ConfigError("eval.decode must be expected or argmax, got '" + value + "'");
    }
    else if (key == "run.model") cfg.run_model = value;
    else if (key == "run.scale") cfg.run_scale = parse_number<int>(key, value);
    else throw ConfigError("unknown config key '" + key + "'");
}

inline RunConfig parse_config(std::istream& is) {
    RunConfig cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(lineno) + ": expected key = value, got '" +
                              line + "'");
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string value = detail::trim(line.substr(eq + 1));
        if (key.empty() || value.empty())
            throw ConfigError("line " + std::to_string(lineno) + ": empty key or value");
        apply_config_entry(cfg, key, value);
    }
    return cfg;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file " + path);
    RunConfig cfg = parse_config(is);
    cfg.validate();
    return cfg;
}

}  // namespace tloc
