#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <list>
#include <ostream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "tloc/datagen.hpp"
#include "tloc/models.hpp"
#include "tloc/nn.hpp"
#include "tloc/rng.hpp"

namespace tloc {

struct HyperParams {
    double obs_lr = 3e-4;
    double motion_lr = 1e-3;
    int obs_batch = 64;
    int motion_batch = 64;
    int obs_epochs = 30;
    int motion_epochs = 6;
    uint64_t seed = 1;
    int val_interval = 1;
    int queries_per_scene = 16;     // query states sampled per scene per epoch
    double contact_fraction = 0.25; // stratification floor for contact states

    void validate() const {
        if (obs_lr <= 0 || motion_lr <= 0)
            throw ContractViolation("hyperparams: learning rates must be positive");
        if (obs_batch < 1 || motion_batch < 1)
            throw ContractViolation("hyperparams: batch sizes must be at least 1");
        if (queries_per_scene < 1)
            throw ContractViolation("hyperparams: queries per scene must be at least 1");
    }
};

struct ValidationMetrics {
    double ce = 0;
    double accuracy = 0;
    double scalar_mae = 0;
};

struct ObsTrainResult {
    std::vector<double> train_loss_history;  // one entry per epoch
    std::vector<double> val_ce_history;      // entry 0 is the pre-training value
    double initial_val_ce = 0;
    int best_epoch = 0;
    double best_val_ce = 0;
    int epochs_run = 0;
};

struct MotionTrainResult {
    std::vector<double> loss_history;
    std::array<uint64_t, 4> action_counts{};
};

// ---------------------------------------------------------------------------
// label cache
// ---------------------------------------------------------------------------

// LRU cache over (scene, query) label maps; labels are built on the fly.
class LabelCache {
public:
    explicit LabelCache(size_t capacity = 8192) : capacity_(capacity) {}

    const LikelihoodLabelMap& get(const ScanRecord& rec, int scene_index, GridState q) {
        const uint64_t key = (static_cast<uint64_t>(scene_index) << 32) |
                             (static_cast<uint64_t>(q.y) * rec.w + q.x);
        auto it = index_.find(key);
        if (it != index_.end()) {
            lru_.splice(lru_.begin(), lru_, it->second);
            return it->second->second;
        }
        auto [map, labels] = build_likelihood_map(rec, q);
        (void)map;
        lru_.emplace_front(key, std::move(labels));
        index_[key] = lru_.begin();
        if (lru_.size() > capacity_) {
            index_.erase(lru_.back().first);
            lru_.pop_back();
        }
        return lru_.front().second;
    }

private:
    size_t capacity_;
    std::list<std::pair<uint64_t, LikelihoodLabelMap>> lru_;
    std::unordered_map<uint64_t, std::list<std::pair<uint64_t, LikelihoodLabelMap>>::iterator>
        index_;
};

// ---------------------------------------------------------------------------
// in-memory training view of a dataset
// ---------------------------------------------------------------------------

struct TrainScene {
    int index = 0;
    ScanRecord record;
    std::vector<int> contact_states;  // flat state indices with nonzero observations
};

inline TrainScene make_train_scene(ScanRecord rec, int index) {
    TrainScene s;
    s.index = index;
    for (int y = 0; y < rec.h; ++y)
        for (int x = 0; x < rec.w; ++x)
            if (rec.contact_at(y, x)) s.contact_states.push_back(y * rec.w + x);
    s.record = std::move(rec);
    return s;
}

inline std::vector<TrainScene> load_split(const Dataset& ds, const std::string& split) {
    std::vector<TrainScene> out;
    for (int idx : ds.split_indices(split)) out.push_back(make_train_scene(ds.scan(idx), idx));
    return out;
}

namespace detail {

// Uniform query states, topped up with contact states until the stratification
// floor is met.
inline std::vector<int> sample_queries(const TrainScene& scene, int count, double contact_frac,
                                       Rng& rng) {
    const int n = scene.record.h * scene.record.w;
    std::vector<int> out(static_cast<size_t>(count));
    for (auto& q : out) q = rng.uniform_int(0, n - 1);
    if (scene.contact_states.empty()) return out;
    auto is_contact = [&](int s) {  // contact_states is sorted by construction
        return std::binary_search(scene.contact_states.begin(), scene.contact_states.end(), s);
    };
    const int need = static_cast<int>(std::ceil(count * contact_frac));
    int have = 0;
    for (int q : out) have += is_contact(q) ? 1 : 0;
    for (auto& q : out) {
        if (have >= need) break;
        if (!is_contact(q)) {
            q = scene.contact_states[static_cast<size_t>(
                rng.uniform_int(0, static_cast<int>(scene.contact_states.size()) - 1))];
            ++have;
        }
    }
    return out;
}

inline std::vector<float> observation_of(const ScanRecord& rec, int state) {
    const float* o = rec.obs.data() + static_cast<size_t>(state) * rec.k * rec.k;
    return std::vector<float>(o, o + rec.k * rec.k);
}

inline std::vector<int> labels_as_int(const LikelihoodLabelMap& m) {
    return std::vector<int>(m.cls.begin(), m.cls.end());
}

}  // namespace detail

// ---------------------------------------------------------------------------
// validation
// ---------------------------------------------------------------------------

// Metric accumulation over a set of per-pixel class distributions; exposed
// separately so the arithmetic is testable without a trained model.
inline ValidationMetrics metrics_from_probs(const Tensor<float>& probs,
                                            const std::vector<int>& labels,
                                            ValidationMetrics acc = {}) {
    const int n = probs.shape[0];
    const int hw = probs.shape[1] * probs.shape[2];
    double ce = 0, correct = 0, mae = 0;
    const LikelihoodMap scalar = likelihood_scalar(probs, DecodeMode::ExpectedBin);
    for (int i = 0; i < hw; ++i) {
        const double p = probs.value[static_cast<size_t>(labels[i]) * hw + i];
        ce -= std::log(std::max(p, kProbClamp));
        int best = 0;
        for (int c = 1; c < n; ++c)
            if (probs.value[static_cast<size_t>(c) * hw + i] >
                probs.value[static_cast<size_t>(best) * hw + i])
                best = c;
        if (best == labels[i]) correct += 1;
        mae += std::abs(scalar.v[i] - labels[i] / double(n - 1));
    }
    acc.ce += ce / hw;
    acc.accuracy += correct / hw;
    acc.scalar_mae += mae / hw;
    return acc;
}

// Mean cross-entropy, pixel-argmax accuracy and decoded-scalar MAE on a fixed
// deterministic query set; never mutates the model.
inline ValidationMetrics validate(const ObservationNet<float>& net,
                                  const std::vector<TrainScene>& scenes, int queries_per_scene,
                                  uint64_t seed, LabelCache& cache) {
    ValidationMetrics total;
    int count = 0;
    for (const auto& scene : scenes) {
        Rng rng(split_seed(seed, static_cast<uint64_t>(scene.index)));
        const auto queries = detail::sample_queries(scene, queries_per_scene, 0.25, rng);
        for (int q : queries) {
            const GridState qs{q % scene.record.w, q / scene.record.w};
            const auto& labels = cache.get(scene.record, scene.index, qs);
            const auto probs = net.forward(scene.record.depth,
                                           detail::observation_of(scene.record, q), false);
            total = metrics_from_probs(*probs, detail::labels_as_int(labels), total);
            ++count;
        }
    }
    if (count > 0) {
        total.ce /= count;
        total.accuracy /= count;
        total.scalar_mae /= count;
    }
    return total;
}

// ---------------------------------------------------------------------------
// observation model training
// ---------------------------------------------------------------------------

namespace detail {

inline void append_train_metadata(std::vector<CheckpointEntry>& entries,
                                  const ObsTrainResult& result, uint32_t config_hash,
                                  const AdamOptimizer<float>& opt,
                                  const std::vector<std::pair<std::string, TensorPtr<float>>>& named) {
    auto scalar_entry = [](const std::string& name, float v) {
        CheckpointEntry e;
        e.name = name;
        e.dims = {1};
        e.values = {v};
        return e;
    };
    entries.push_back(scalar_entry("train/epoch", static_cast<float>(result.epochs_run)));
    entries.push_back(scalar_entry("train/best_epoch", static_cast<float>(result.best_epoch)));
    entries.push_back(scalar_entry("train/best_val_ce", static_cast<float>(result.best_val_ce)));
    CheckpointEntry hist;
    hist.name = "train/val_history";
    hist.dims = {static_cast<int>(result.val_ce_history.size())};
    for (double v : result.val_ce_history) hist.values.push_back(static_cast<float>(v));
    entries.push_back(std::move(hist));
    CheckpointEntry hash;
    hash.name = "train/config_hash";
    hash.dims = {2};
    hash.values = {static_cast<float>(config_hash >> 16), static_cast<float>(config_hash & 0xffff)};
    entries.push_back(std::move(hash));
    entries.push_back(scalar_entry("adam/step", static_cast<float>(opt.step_count)));
    for (size_t i = 0; i < named.size(); ++i) {
        CheckpointEntry m, v;
        m.name = "adam/m/" + named[i].first;
        m.dims = named[i].second->shape;
        m.values.assign(opt.m[i].begin(), opt.m[i].end());
        v.name = "adam/v/" + named[i].first;
        v.dims = named[i].second->shape;
        v.values.assign(opt.v[i].begin(), opt.v[i].end());
        entries.push_back(std::move(m));
        entries.push_back(std::move(v));
    }
}

inline uint32_t stored_config_hash(const std::vector<CheckpointEntry>& entries,
                                   const std::string& path) {
    const auto& e = require_entry(entries, "train/config_hash", path);
    return (static_cast<uint32_t>(e.values.at(0)) << 16) | static_cast<uint32_t>(e.values.at(1));
}

}  // namespace detail

// Trains f_O with categorical cross-entropy against the self-supervised label
// maps. Batches group several scenes so each depth image is encoded once per
// step; the best-validation checkpoint (with optimizer state) is retained at
// ckpt_path while `net` is left in its final-epoch state. With resume = true
// and a matching config hash, continues from the saved epoch counter.
inline ObsTrainResult train_observation_model(ObservationNet<float>& net, const Dataset& ds,
                                              const HyperParams& hp, const std::string& ckpt_path,
                                              std::ostream* log = nullptr, bool resume = false) {
    const ObservationNetConfig& cfg = net.cfg;
    hp.validate();
    cfg.validate();
    if (cfg.h != ds.manifest.h || cfg.w != ds.manifest.w || cfg.k != ds.manifest.k)
        throw ContractViolation("train_observation_model: config grid " + std::to_string(cfg.h) +
                                "x" + std::to_string(cfg.w) + " k=" + std::to_string(cfg.k) +
                                " does not match dataset " + std::to_string(ds.manifest.h) + "x" +
                                std::to_string(ds.manifest.w) + " k=" +
                                std::to_string(ds.manifest.k));
    auto train_scenes = load_split(ds, "train");
    auto val_scenes = load_split(ds, "val");
    if (train_scenes.empty() || val_scenes.empty())
        throw ContractViolation("train_observation_model: dataset needs train and val splits");

    auto named = net.named_parameters();
    AdamOptimizer<float> opt(net.parameters(), static_cast<float>(hp.obs_lr));
    LabelCache cache;

    ObsTrainResult result;
    int start_epoch = 0;
    if (resume) {
        const auto entries = read_checkpoint(ckpt_path);
        if (detail::stored_config_hash(entries, ckpt_path) != cfg.hash())
            throw CheckpointError("resume: config hash mismatch in " + ckpt_path);
        net.load_state(entries, ckpt_path);
        start_epoch = static_cast<int>(require_entry(entries, "train/epoch", ckpt_path).values.at(0));
        result.best_epoch =
            static_cast<int>(require_entry(entries, "train/best_epoch", ckpt_path).values.at(0));
        result.best_val_ce = require_entry(entries, "train/best_val_ce", ckpt_path).values.at(0);
        for (float v : require_entry(entries, "train/val_history", ckpt_path).values)
            result.val_ce_history.push_back(v);
        result.initial_val_ce =
            result.val_ce_history.empty() ? 0.0 : result.val_ce_history.front();
        opt.step_count =
            static_cast<long long>(require_entry(entries, "adam/step", ckpt_path).values.at(0));
        for (size_t i = 0; i < named.size(); ++i) {
            const auto& m = require_entry(entries, "adam/m/" + named[i].first, ckpt_path);
            const auto& v = require_entry(entries, "adam/v/" + named[i].first, ckpt_path);
            opt.m[i].assign(m.values.begin(), m.values.end());
            opt.v[i].assign(v.values.begin(), v.values.end());
        }
    }

    auto save_checkpoint = [&](int epochs_run) {
        result.epochs_run = epochs_run;
        auto entries = net.state_entries();
        detail::append_train_metadata(entries, result, cfg.hash(), opt, named);
        write_checkpoint(ckpt_path, entries);
    };

    const auto t_start = std::chrono::steady_clock::now();
    auto wall = [&] {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    };

    if (!resume) {
        const ValidationMetrics m0 =
            validate(net, val_scenes, hp.queries_per_scene, split_seed(hp.seed, 0xFA11ull), cache);
        result.initial_val_ce = m0.ce;
        result.val_ce_history.push_back(m0.ce);
        result.best_val_ce = m0.ce;
        result.best_epoch = 0;
        if (log)
            *log << "epoch 0 split val loss " << m0.ce << " acc " << m0.accuracy << " wall "
                 << wall() << std::endl;
        save_checkpoint(0);
    }

    for (int epoch = start_epoch + 1; epoch <= hp.obs_epochs; ++epoch) {
        Rng rng(split_seed(hp.seed, 0xE000ull + static_cast<uint64_t>(epoch)));
        std::vector<int> order(train_scenes.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
        rng.shuffle(order);

        // per-epoch sample list, scene-major so batches share image encodings
        std::vector<std::pair<int, int>> samples;  // (scene order index, query state)
        for (size_t s = 0; s < order.size(); ++s) {
            const TrainScene& scene = train_scenes[static_cast<size_t>(order[s])];
            for (int q :
                 detail::sample_queries(scene, hp.queries_per_scene, hp.contact_fraction, rng))
                samples.emplace_back(order[s], q);
        }

        double epoch_loss = 0;
        uint64_t epoch_samples = 0;
        for (size_t g = 0; g < samples.size(); g += static_cast<size_t>(hp.obs_batch)) {
            const size_t end = std::min(samples.size(), g + static_cast<size_t>(hp.obs_batch));
            // the sample list is scene-contiguous, so each distinct scene's
            // image is encoded once per step
            std::vector<int> batch_scenes;
            for (size_t i = g; i < end; ++i)
                if (batch_scenes.empty() || batch_scenes.back() != samples[i].first)
                    batch_scenes.push_back(samples[i].first);
            std::vector<TensorPtr<float>> scene_feats;
            if (!cfg.naive) {
                std::vector<const std::vector<float>*> depths;
                for (int sidx : batch_scenes)
                    depths.push_back(&train_scenes[static_cast<size_t>(sidx)].record.depth);
                scene_feats = net.encode_image_batch(depths, true);
            }
            std::vector<TensorPtr<float>> img_feats, obs_feats;
            std::vector<std::vector<int>> batch_labels;
            for (size_t i = g; i < end; ++i) {
                const TrainScene& scene = train_scenes[static_cast<size_t>(samples[i].first)];
                if (!cfg.naive) {
                    size_t pos = 0;
                    while (batch_scenes[pos] != samples[i].first) ++pos;
                    img_feats.push_back(scene_feats[pos]);
                }
                const int q = samples[i].second;
                const GridState qs{q % scene.record.w, q / scene.record.w};
                batch_labels.push_back(
                    detail::labels_as_int(cache.get(scene.record, scene.index, qs)));
                obs_feats.push_back(
                    net.encode_observation(detail::observation_of(scene.record, q), true));
            }
            const auto probs = net.decode_likelihood_batch(img_feats, obs_feats, true);
            std::vector<TensorPtr<float>> losses;
            for (size_t i = 0; i < probs.size(); ++i)
                losses.push_back(cross_entropy_mean(probs[i], batch_labels[i]));
            auto loss = scale(add_n(losses), 1.0f / static_cast<float>(losses.size()));
            opt.zero_grad();
            backward(loss);
            opt.step();
            epoch_loss += static_cast<double>(loss->value[0]) * losses.size();
            epoch_samples += losses.size();
        }
        const double train_loss = epoch_loss / static_cast<double>(epoch_samples);
        result.train_loss_history.push_back(train_loss);
        if (log)
            *log << "epoch " << epoch << " split train loss " << train_loss << " acc -"
                 << " wall " << wall() << std::endl;

        if (epoch % hp.val_interval == 0 || epoch == hp.obs_epochs) {
            const ValidationMetrics m = validate(net, val_scenes, hp.queries_per_scene,
                                                 split_seed(hp.seed, 0xFA11ull), cache);
            result.val_ce_history.push_back(m.ce);
            if (log)
                *log << "epoch " << epoch << " split val loss " << m.ce << " acc " << m.accuracy
                     << " wall " << wall() << std::endl;
            if (m.ce < result.best_val_ce) {
                result.best_val_ce = m.ce;
                result.best_epoch = epoch;
                save_checkpoint(epoch);
            }
        }
    }
    result.epochs_run = hp.obs_epochs;
    return result;
}

// ---------------------------------------------------------------------------
// motion model training
// ---------------------------------------------------------------------------

// Trains the per-action kernels with binary cross-entropy between
// predict(one-hot(s), kernel(a)) and one-hot(s'). Missing actions keep their
// uniform initialization (reported via action_counts and a log warning).
inline MotionTrainResult train_motion_model(MotionNet& net, const std::vector<Transition>& ts,
                                            int h, int w, const HyperParams& hp,
                                            std::ostream* log = nullptr) {
    hp.validate();
    if (ts.empty()) throw ContractViolation("train_motion_model: no transitions");
    MotionTrainResult result;
    for (const auto& t : ts) ++result.action_counts[static_cast<size_t>(t.a)];
    for (size_t a = 0; a < 4; ++a)
        if (result.action_counts[a] == 0 && log)
            *log << "warning: action " << action_name(static_cast<ActionDir>(a))
                 << " absent from the transition data; its kernel stays at initialization\n";

    AdamOptimizer<float> opt(net.parameters(), static_cast<float>(hp.motion_lr));
    const int n = h * w;
    for (int epoch = 1; epoch <= hp.motion_epochs; ++epoch) {
        Rng rng(split_seed(hp.seed, 0x30000ull + static_cast<uint64_t>(epoch)));
        std::vector<int> order(ts.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
        rng.shuffle(order);
        double epoch_loss = 0;
        uint64_t batches = 0;
        for (size_t g = 0; g < order.size(); g += static_cast<size_t>(hp.motion_batch)) {
            std::array<TensorPtr<float>, 4> kernels;
            for (size_t a = 0; a < 4; ++a)
                kernels[a] = reshape(flip_hw(net.kernel_node(static_cast<ActionDir>(a))),
                                     {1, 1, 3, 3});
            std::vector<TensorPtr<float>> losses;
            for (size_t i = g; i < std::min(order.size(), g + hp.motion_batch); ++i) {
                const Transition& t = ts[static_cast<size_t>(order[i])];
                auto onehot = Tensor<float>::leaf({1, h, w});
                onehot->value[static_cast<size_t>(t.s.y) * w + t.s.x] = 1.0f;
                auto pred = normalize_sum(
                    conv2d(onehot, kernels[static_cast<size_t>(t.a)], TensorPtr<float>{}, 1));
                std::vector<float> target(static_cast<size_t>(n), 0.0f);
                target[static_cast<size_t>(t.s2.y) * w + t.s2.x] = 1.0f;
                losses.push_back(bce_mean(pred, target));
            }
            auto loss = scale(add_n(losses), 1.0f / static_cast<float>(losses.size()));
            opt.zero_grad();
            backward(loss);
            opt.step();
            epoch_loss += loss->value[0];
            ++batches;
        }
        result.loss_history.push_back(epoch_loss / static_cast<double>(batches));
        if (log)
            *log << "epoch " << epoch << " split train loss " << result.loss_history.back()
                 << std::endl;
    }
    return result;
}

}  // namespace tloc
