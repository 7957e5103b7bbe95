#include <cmath>
#include <filesystem>
#include <limits>
#include <vector>

#include "distillseg/error.hpp"
#include "distillseg/phantom.hpp"
#include "distillseg/random.hpp"
#include "distillseg/training.hpp"
#include "doctest.h"

using namespace distillseg;
namespace fs = std::filesystem;

namespace {

NetworkConfig small_net() {
    auto c = default_network_config(NetworkKind::UNet3D);
    c.base_channels = 4;
    c.depth = 2;
    c.num_groups = 2;
    return c;
}

TrainConfig quick(int epochs) {
    TrainConfig t = default_config(NetworkKind::UNet3D);
    t.epochs = epochs;
    t.batch_size = 1;
    t.patch_size = 16;
    t.seed = 21;
    t.optimizer.initial_lr = 5e-3;
    t.optimizer.decay_interval_epochs = 1;
    t.checkpoint_every = 1;
    t.validate_every = 1;
    return t;
}

std::vector<MultiModalCase> cases(int n) {
    std::vector<MultiModalCase> v;
    for (int i = 0; i < n; ++i)
        v.push_back(normalize_case(generate_phantom(100 + std::uint64_t(i), {20, 20, 20}, {}, "p" + std::to_string(i))));
    return v;
}

DiceReport rep(double et, double tc, double wt) { return DiceReport::from_regions({et, tc, wt}, 4); }

}  // namespace

TEST_CASE("stepwise learning-rate decay") {
    OptimizerSpec s;
    s.initial_lr = 2e-4;
    s.decay_rate = 0.6;
    s.decay_interval_epochs = 50;
    CHECK(lr_at(s, 100) == doctest::Approx(7.2e-5).epsilon(1e-12));
    CHECK(lr_at(s, 0) == 2e-4);
    CHECK(lr_at(s, 49) == 2e-4);
    CHECK(lr_at(s, 50) == doctest::Approx(1.2e-4));
    double prev = lr_at(s, 0);
    for (int e = 1; e < 300; ++e) {
        CHECK(lr_at(s, e) <= prev);
        prev = lr_at(s, e);
    }
}

TEST_CASE("published training defaults") {
    for (auto kind : {NetworkKind::UNet3D, NetworkKind::ResidualUNet3D}) {
        const auto c = default_config(kind);
        CHECK(c.optimizer.kind == OptimizerKind::Adam);
        CHECK(c.optimizer.initial_lr == 2e-4);
        CHECK(c.optimizer.decay_rate == 0.60);
        CHECK(c.batch_size == 2);
        CHECK(c.epochs == 280);
        CHECK(c.patch_size == 128);
    }
    const auto c = default_config(NetworkKind::CascadedUNet3D);
    CHECK(c.optimizer.kind == OptimizerKind::SGD);
    CHECK(c.optimizer.initial_lr == 0.1);
    CHECK(c.optimizer.decay_rate == 0.85);
    CHECK(c.batch_size == 4);
    CHECK(c.epochs == 280);
}

TEST_CASE("train config JSON round trip and validation") {
    auto c = quick(3);
    c.augmentation.max_rotation_deg = 7;
    nlohmann::json j = c;
    const auto back = j.get<TrainConfig>();
    CHECK(back.epochs == 3);
    CHECK(back.augmentation.max_rotation_deg == 7);
    CHECK(back.optimizer == c.optimizer);
    c.epochs = 0;
    CHECK_THROWS_AS(validate(c), ConfigError);
}

TEST_CASE("best model: most outright region wins") {
    std::map<NetworkKind, DiceReport> r{{NetworkKind::UNet3D, rep(0.80, 0.80, 0.90)},
                                        {NetworkKind::ResidualUNet3D, rep(0.82, 0.81, 0.89)},
                                        {NetworkKind::CascadedUNet3D, rep(0.81, 0.70, 0.95)}};
    CHECK(select_best(r) == NetworkKind::ResidualUNet3D);
    // uniform rescaling changes nothing
    for (auto& [k, v] : r) v = DiceReport::from_regions({v[0] * 0.5, v[1] * 0.5, v[2] * 0.5}, 4);
    CHECK(select_best(r) == NetworkKind::ResidualUNet3D);
}

TEST_CASE("best model ties fall back to mean, then kind order") {
    std::map<NetworkKind, DiceReport> r{{NetworkKind::UNet3D, rep(0.9, 0.7, 0.8)},
                                        {NetworkKind::ResidualUNet3D, rep(0.7, 0.9, 0.85)}};
    CHECK(select_best(r) == NetworkKind::ResidualUNet3D);
    std::map<NetworkKind, DiceReport> same{{NetworkKind::CascadedUNet3D, rep(0.8, 0.8, 0.8)},
                                           {NetworkKind::ResidualUNet3D, rep(0.8, 0.8, 0.8)},
                                           {NetworkKind::UNet3D, rep(0.8, 0.8, 0.8)}};
    CHECK(select_best(same) == NetworkKind::UNet3D);
    CHECK_THROWS_AS(select_best({{NetworkKind::UNet3D, rep(1, 1, 1)}}), ContractError);
}

TEST_CASE("one optimizer step lowers the loss on a fixed batch") {
    auto cfg = small_net();
    for (std::uint64_t trial = 0; trial < 3; ++trial) {
        Network<double> net(cfg, 40 + trial);
        TensorD x(Shape{1, 4, 8, 8, 8}), y(Shape{1, 3, 8, 8, 8});
        Rng r(trial);
        for (auto& v : x) v = r.normal();
        for (auto& v : y) v = r.bernoulli(0.3);
        OptimizerSpec spec;
        spec.kind = OptimizerKind::SGD;
        spec.momentum = 0;
        Optimizer<double> opt(spec);
        net.zero_grad();
        TensorD g;
        const double before = total_loss_with_grad(net.forward(x), y, g).total;
        net.backward(g);
        opt.step(net.parameters(), 1e-3);
        const double after = total_loss(net.forward(x), y).total;
        CHECK(after < before);
    }
}

TEST_CASE("batches are deterministic and match their origins") {
    const auto cs = cases(3);
    const auto cfg = quick(1);
    const std::vector<std::size_t> idx{2, 0};
    const auto a = make_batch(cs, idx, cfg, 4, 1), b = make_batch(cs, idx, cfg, 4, 1), c = make_batch(cs, idx, cfg, 4, 2);
    CHECK(a.inputs.shape() == Shape{2, 4, 16, 16, 16});
    CHECK(a.targets.shape() == Shape{2, 3, 16, 16, 16});
    CHECK(a.case_ids == std::vector<std::string>{"p2", "p0"});
    CHECK(std::equal(a.inputs.begin(), a.inputs.end(), b.inputs.begin()));
    CHECK_FALSE(std::equal(a.inputs.begin(), a.inputs.end(), c.inputs.begin()));
    for (auto v : a.targets) CHECK((v == 0.0f || v == 1.0f));
}

TEST_CASE("training is deterministic in the seed") {
    const auto cs = cases(2);
    const auto a = train_model(small_net(), cs, {}, quick(1));
    const auto b = train_model(small_net(), cs, {}, quick(1));
    CHECK(a.history.at(0).train.total == b.history.at(0).train.total);
    auto other = quick(1);
    other.seed = 22;
    CHECK(train_model(small_net(), cs, {}, other).history.at(0).train.total != a.history.at(0).train.total);
}

TEST_CASE("resuming from a checkpoint continues bit-identically") {
    const auto cs = cases(2);
    const auto val = cases(3);
    const std::vector<MultiModalCase> v{val[2]};
    const auto dir = fs::temp_directory_path() / "distillseg_resume";
    fs::remove_all(dir);

    const auto full = train_model(small_net(), cs, v, quick(3));

    TrainOptions opts;
    opts.checkpoint_dir = dir;
    opts.stop_after_epoch = 2;
    const auto first = train_model(small_net(), cs, v, quick(3), opts);
    CHECK(first.history.size() == 2);
    CHECK(fs::exists(checkpoint_path(dir, 2)));
    CHECK(latest_checkpoint(dir)->first == 2);

    opts.stop_after_epoch = -1;
    const auto resumed = train_model(small_net(), cs, v, quick(3), opts);
    REQUIRE(resumed.history.size() == 3);
    CHECK(resumed.history[2].train.total == full.history[2].train.total);
    CHECK(resumed.history[0].train.total == full.history[0].train.total);
    REQUIRE(resumed.history[2].validation.has_value());
    CHECK(*resumed.history[2].validation == *full.history[2].validation);
    CHECK(resumed.final_checkpoint == checkpoint_path(dir, 3));
    fs::remove_all(dir);
}

TEST_CASE("learning rate in the history follows the schedule") {
    const auto cs = cases(1);
    const auto t = train_model(small_net(), cs, {}, quick(3));
    for (const auto& rec : t.history) CHECK(rec.lr == lr_at(quick(3).optimizer, rec.epoch));
    CHECK(t.history[2].lr < t.history[0].lr);
}

TEST_CASE("a non-finite loss aborts with the case ids") {
    auto cs = cases(1);
    auto vols = cs[0].modalities();
    TensorF bad = vols[1].data();
    for (auto& v : bad) v = std::numeric_limits<float>::max();  // finite, but overflows the first conv
    vols[1] = ModalityVolume(Modality::T1Gd, bad);
    const std::vector<MultiModalCase> broken{cs[0].with_modalities(vols)};
    try {
        train_model(small_net(), broken, {}, quick(1));
        FAIL("expected TrainingError");
    } catch (const TrainingError& e) {
        CHECK(std::string(e.what()).find("p0") != std::string::npos);
    }
}

TEST_CASE("training rejects unusable inputs") {
    const auto cs = cases(1);
    CHECK_THROWS_AS(train_model(small_net(), {}, {}, quick(1)), ContractError);
    const std::vector<MultiModalCase> unlabeled{cs[0].without_label()};
    CHECK_THROWS_AS(train_model(small_net(), unlabeled, {}, quick(1)), ContractError);
    auto odd = quick(1);
    odd.patch_size = 15;
    CHECK_THROWS_AS(train_model(small_net(), cs, {}, odd), ConfigError);
}
