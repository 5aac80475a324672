#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <sstream>

#include "test_util.hpp"
#include "tloc/training.hpp"

using namespace tloc;
using Catch::Approx;

namespace {

// compact 16x16 dataset for fast training tests
std::string tiny_dataset(testutil::TempDir& tmp, int train, int val, uint64_t seed) {
    DatasetGenConfig cfg;
    cfg.h = cfg.w = 16;
    cfg.k = 3;
    cfg.train_scenes = train;
    cfg.val_scenes = val;
    cfg.test_scenes = 0;
    cfg.seed = seed;
    cfg.transition_count = 0;
    build_dataset(tmp.str(), cfg);
    return tmp.str();
}

ObservationNetConfig tiny_net_config() {
    ObservationNetConfig cfg;
    cfg.h = cfg.w = 16;
    cfg.k = 3;
    cfg.image_channels = {4, 4, 8, 8, 16, 16};
    cfg.obs_channels = {4, 8, 16};
    cfg.decoder_channels = {8, 8, 4, 4};
    cfg.tconv_channels = {16, 8};
    return cfg;
}

ObservationNet<float> make_net(uint64_t seed) {
    Rng rng(split_seed(seed, 0xA110C8ull));
    return ObservationNet<float>(tiny_net_config(), rng);
}

std::vector<Transition> shift_transitions(int h, int w, int count, double eps, uint64_t seed) {
    SceneConfig cfg;
    cfg.h = h;
    cfg.w = w;
    cfg.motion_eps = eps;
    Rng rng(seed);
    return collect_transitions(cfg, count / 32, 32, rng);
}

}  // namespace

TEST_CASE("metrics_from_probs closed forms") {
    SECTION("perfect one-hot predictions give ~0 CE and accuracy 1") {
        auto probs = Tensor<float>::leaf({16, 2, 2});
        std::vector<int> labels = {3, 7, 0, 15};
        for (int i = 0; i < 4; ++i) probs->value[labels[i] * 4 + i] = 1.0f;
        const ValidationMetrics m = metrics_from_probs(*probs, labels);
        REQUIRE(m.ce == Approx(0.0).margin(1e-5));
        REQUIRE(m.accuracy == 1.0);
        REQUIRE(m.scalar_mae == Approx(0.0).margin(1e-6));
    }
    SECTION("uniform predictions give CE = ln 16") {
        auto probs = Tensor<float>::leaf({16, 2, 2});
        std::fill(probs->value.begin(), probs->value.end(), 1.0f / 16);
        const ValidationMetrics m = metrics_from_probs(*probs, {0, 5, 10, 15});
        REQUIRE(m.ce == Approx(std::log(16.0)).epsilon(1e-4));
    }
}

TEST_CASE("motion model: BCE strictly decreases over the first 10 steps (lr 1e-2)") {
    const auto ts = shift_transitions(16, 16, 512, 0.0, 3);
    MotionNet net;
    AdamOptimizer<float> opt(net.parameters(), 1e-2f);
    std::vector<double> losses;
    for (int stepi = 0; stepi < 10; ++stepi) {
        std::array<TensorPtr<float>, 4> kernels;
        for (size_t a = 0; a < 4; ++a)
            kernels[a] = reshape(flip_hw(net.kernel_node(static_cast<ActionDir>(a))), {1, 1, 3, 3});
        std::vector<TensorPtr<float>> per_sample;
        for (const auto& t : ts) {
            auto onehot = Tensor<float>::leaf({1, 16, 16});
            onehot->value[static_cast<size_t>(t.s.y) * 16 + t.s.x] = 1.0f;
            auto pred =
                normalize_sum(conv2d(onehot, kernels[static_cast<size_t>(t.a)], TensorPtr<float>{}, 1));
            std::vector<float> target(256, 0.0f);
            target[static_cast<size_t>(t.s2.y) * 16 + t.s2.x] = 1.0f;
            per_sample.push_back(bce_mean(pred, target));
        }
        auto loss = scale(add_n(per_sample), 1.0f / static_cast<float>(per_sample.size()));
        opt.zero_grad();
        backward(loss);
        opt.step();
        losses.push_back(loss->value[0]);
    }
    for (size_t i = 1; i < losses.size(); ++i) REQUIRE(losses[i] < losses[i - 1]);
}

TEST_CASE("motion model recovers a deterministic shift") {
    const auto ts = shift_transitions(16, 16, 4096, 0.0, 7);
    MotionNet net;
    HyperParams hp;
    hp.motion_lr = 1e-2;
    hp.motion_epochs = 30;
    hp.seed = 9;
    const MotionTrainResult result = train_motion_model(net, ts, 16, 16, hp);
    for (size_t a = 0; a < 4; ++a) REQUIRE(result.action_counts[a] > 0);
    for (ActionDir a : kAllActions) {
        const MotionKernel k = net.kernel(a);
        const Offset o = action_offset(a);
        REQUIRE(k.at(o.dy, o.dx) > 0.99);
    }
    REQUIRE(result.loss_history.front() > result.loss_history.back());
}

TEST_CASE("motion model with eps-noise learns a stay component") {
    const auto ts = shift_transitions(16, 16, 20000, 0.1, 11);
    MotionNet net;
    HyperParams hp;
    hp.motion_lr = 1e-2;
    hp.motion_epochs = 10;
    hp.seed = 13;
    train_motion_model(net, ts, 16, 16, hp);
    for (ActionDir a : kAllActions) {
        const MotionKernel k = net.kernel(a);
        const Offset o = action_offset(a);
        REQUIRE(k.at(o.dy, o.dx) == Approx(0.9).margin(0.05));
        REQUIRE(k.at(0, 0) == Approx(0.1).margin(0.05));
    }
}

TEST_CASE("motion model warns when an action is missing") {
    auto ts = shift_transitions(16, 16, 1024, 0.0, 17);
    std::erase_if(ts, [](const Transition& t) { return t.a == ActionDir::West; });
    MotionNet net;
    HyperParams hp;
    hp.motion_epochs = 1;
    std::ostringstream log;
    const auto result = train_motion_model(net, ts, 16, 16, hp, &log);
    REQUIRE(result.action_counts[static_cast<size_t>(ActionDir::West)] == 0);
    REQUIRE(log.str().find("west") != std::string::npos);
    // untouched kernel stays uniform
    const MotionKernel k = net.kernel(ActionDir::West);
    for (double v : k.w) REQUIRE(v == Approx(1.0 / 9));
}

TEST_CASE("observation training beats the uniform-logits starting point") {
    testutil::TempDir tmp("train_small");
    const std::string dir = tiny_dataset(tmp, 4, 2, 21);
    const Dataset ds = Dataset::open(dir);
    HyperParams hp;
    hp.obs_epochs = 2;
    hp.queries_per_scene = 12;
    hp.seed = 5;
    const std::string ckpt = tmp.str() + "/obs.tloc";
    ObservationNet<float> net = make_net(hp.seed);
    const ObsTrainResult result = train_observation_model(net, ds, hp, ckpt);
    REQUIRE(result.initial_val_ce == Approx(std::log(16.0)).margin(0.3));
    REQUIRE(result.train_loss_history.size() == 2);
    REQUIRE(result.train_loss_history[0] < result.initial_val_ce);
    REQUIRE(result.train_loss_history[1] < result.train_loss_history[0]);
}

TEST_CASE("observation training is bitwise deterministic for a fixed seed") {
    testutil::TempDir tmp("train_det");
    const std::string dir = tiny_dataset(tmp, 3, 1, 23);
    const Dataset ds = Dataset::open(dir);
    HyperParams hp;
    hp.obs_epochs = 2;
    hp.queries_per_scene = 8;
    hp.seed = 77;
    ObservationNet<float> na = make_net(hp.seed);
    const ObsTrainResult a = train_observation_model(na, ds, hp, tmp.str() + "/a.tloc");
    ObservationNet<float> nb = make_net(hp.seed);
    const ObsTrainResult b = train_observation_model(nb, ds, hp, tmp.str() + "/b.tloc");
    REQUIRE(a.train_loss_history == b.train_loss_history);
    REQUIRE(a.val_ce_history == b.val_ce_history);
}

TEST_CASE("best-validation checkpoint reproduces its recorded metrics") {
    testutil::TempDir tmp("train_ckpt");
    const std::string dir = tiny_dataset(tmp, 3, 2, 29);
    const Dataset ds = Dataset::open(dir);
    HyperParams hp;
    hp.obs_epochs = 3;
    hp.queries_per_scene = 8;
    hp.seed = 31;
    const std::string ckpt = tmp.str() + "/obs.tloc";
    ObservationNet<float> trained = make_net(hp.seed);
    const ObsTrainResult result = train_observation_model(trained, ds, hp, ckpt);

    ObservationNet<float> net = ObservationNet<float>::load(ckpt);
    auto val_scenes = load_split(ds, "val");
    LabelCache cache;
    const ValidationMetrics m =
        validate(net, val_scenes, hp.queries_per_scene, split_seed(hp.seed, 0xFA11ull), cache);
    REQUIRE(m.ce == Approx(result.best_val_ce).epsilon(1e-9));
}

TEST_CASE("resume continues the epoch counter") {
    testutil::TempDir tmp("train_resume");
    const std::string dir = tiny_dataset(tmp, 3, 1, 37);
    const Dataset ds = Dataset::open(dir);
    HyperParams hp;
    hp.obs_epochs = 2;
    hp.queries_per_scene = 6;
    hp.seed = 41;
    const std::string ckpt = tmp.str() + "/obs.tloc";
    ObservationNet<float> net = make_net(hp.seed);
    train_observation_model(net, ds, hp, ckpt);
    const auto entries = read_checkpoint(ckpt);
    const int saved_epoch =
        static_cast<int>(require_entry(entries, "train/epoch", ckpt).values.at(0));

    HyperParams hp2 = hp;
    hp2.obs_epochs = 4;
    ObservationNet<float> net2 = make_net(hp2.seed);
    const ObsTrainResult resumed = train_observation_model(net2, ds, hp2, ckpt, nullptr, true);
    REQUIRE(resumed.epochs_run == 4);
    REQUIRE(static_cast<int>(resumed.train_loss_history.size()) == 4 - saved_epoch);

    SECTION("config hash mismatch is rejected") {
        ObservationNetConfig other = tiny_net_config();
        other.obs_channels = {4, 8, 8};
        Rng orng(1);
        ObservationNet<float> onet(other, orng);
        REQUIRE_THROWS_AS(train_observation_model(onet, ds, hp2, ckpt, nullptr, true),
                          CheckpointError);
    }
}

TEST_CASE("two-scene overfit reaches high pixel accuracy") {
    testutil::TempDir tmp("train_overfit");
    const std::string dir = tiny_dataset(tmp, 2, 1, 43);
    const Dataset ds = Dataset::open(dir);
    HyperParams hp;
    hp.obs_epochs = 200;
    hp.queries_per_scene = 32;
    hp.seed = 47;
    const std::string ckpt = tmp.str() + "/obs.tloc";
    ObservationNet<float> net = make_net(hp.seed);
    train_observation_model(net, ds, hp, ckpt);

    // accuracy over the full training query sweep (final-epoch net)
    auto train_scenes = load_split(ds, "train");
    LabelCache cache;
    double acc = 0;
    int count = 0;
    for (const auto& scene : train_scenes)
        for (int q = 0; q < 256; q += 2) {
            const GridState qs{q % 16, q / 16};
            const auto& labels = cache.get(scene.record, scene.index, qs);
            const auto probs =
                net.forward(scene.record.depth, detail::observation_of(scene.record, q), false);
            const ValidationMetrics m =
                metrics_from_probs(*probs, detail::labels_as_int(labels));
            acc += m.accuracy;
            ++count;
        }
    acc /= count;
    REQUIRE(acc > 0.95);
}
