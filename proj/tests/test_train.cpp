#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "melrefine/checkpoint.hpp"
#include "melrefine/ops.hpp"
#include "melrefine/train.hpp"

using namespace melrefine;
namespace fs = std::filesystem;

namespace {

fs::path temp_path(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "melrefine_test_train";
    fs::create_directories(dir);
    return dir / name;
}

Tensor random_tensor(const Shape& shape, std::uint64_t seed, double scale = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, scale);
    Tensor t(shape);
    for (double& v : t.values()) v = n(rng);
    return t;
}

EstimatorConfig small_model(std::size_t mels = 16) {
    EstimatorConfig c;
    c.n_blocks = 1;
    c.model_dim = 16;
    c.n_heads = 2;
    c.time_embed_dim = 8;
    c.n_mels = mels;
    c.head_channels = 4;
    c.ff_mult = 2;
    return c;
}

std::vector<TrainingPair> toy_pairs(std::size_t count, std::size_t mels) {
    std::vector<TrainingPair> pairs;
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t frames = 8 + 3 * i;
        Tensor clean = random_tensor({frames, mels}, 100 + i);
        Tensor distorted = clean;
        const Tensor noise = random_tensor({frames, mels}, 200 + i, 0.5);
        for (std::size_t k = 0; k < distorted.size(); ++k) distorted[k] += noise[k];
        pairs.push_back({clean, distorted});
    }
    return pairs;
}

TrainConfig toy_train_config(std::size_t steps) {
    TrainConfig c;
    c.batch_size = 2;
    c.total_steps = steps;
    c.seed = 42;
    c.model = small_model();
    return c;
}

}  // namespace

TEST_CASE("adamw: fixed point, first step and decoupled decay") {
    EstimatorParams params;
    params.add("w", Tensor({1}, 0.0));
    AdamWConfig config;
    OptimizerState state = OptimizerState::fresh(params, config);
    adamw_update(params, {Tensor({1}, 0.0)}, state);
    CHECK(params.at("w")[0] == 0.0);

    state = OptimizerState::fresh(params, config);
    adamw_update(params, {Tensor({1}, 1.0)}, state);
    // Bias correction makes m_hat = v_hat = 1 after one step.
    CHECK(params.at("w")[0] == doctest::Approx(-config.lr / (1.0 + config.eps)).epsilon(1e-14));
    CHECK(params.at("w")[0] == doctest::Approx(-1.0e-4).epsilon(1e-6));
    CHECK(state.step == 1);

    EstimatorParams decaying;
    decaying.add("w", Tensor({3}, 1.0));
    OptimizerState s2 = OptimizerState::fresh(decaying, config);
    double expected = 1.0;
    for (int k = 0; k < 50; ++k) {
        adamw_update(decaying, {Tensor({3}, 0.0)}, s2);
        expected *= 1.0 - config.lr * config.weight_decay;
    }
    for (double v : decaying.at("w").values()) CHECK(v == expected);
    for (const Tensor& v : s2.v) {
        for (double x : v.values()) CHECK(x >= 0.0);
    }
}

TEST_CASE("adamw: error paths") {
    EstimatorParams params;
    params.add("layer.weight", Tensor({2}, 1.0));
    OptimizerState state = OptimizerState::fresh(params, AdamWConfig{});
    Tensor bad({2}, 0.0);
    bad[1] = std::nan("");
    try {
        adamw_update(params, {bad}, state);
        FAIL("expected NonFiniteGradient");
    } catch (const NonFiniteGradient& e) {
        CHECK(std::string(e.what()).find("layer.weight") != std::string::npos);
    }
    CHECK_THROWS_AS(adamw_update(params, {Tensor({3})}, state), std::invalid_argument);
    CHECK_THROWS_AS(adamw_update(params, {}, state), std::invalid_argument);
}

TEST_CASE("training batch: padding, determinism and target replay") {
    const auto pairs = toy_pairs(2, 4);
    TrainingPair a{random_tensor({50, 4}, 1), random_tensor({50, 4}, 2)};
    TrainingPair b{random_tensor({94, 4}, 3), random_tensor({94, 4}, 4)};
    std::mt19937_64 r1(7), r2(7);
    const TrainingBatch batch = make_training_batch({&a, &b}, r1, FlowConfig{});
    CHECK(batch.xt.shape() == Shape{2, 94, 4});
    double row0 = 0.0;
    for (std::size_t f = 0; f < 94; ++f) row0 += batch.mask[f];
    CHECK(row0 == 50.0);
    for (std::size_t f = 0; f < 94; ++f) CHECK(batch.mask[94 + f] == 1.0);

    const TrainingBatch again = make_training_batch({&a, &b}, r2, FlowConfig{});
    CHECK(again.t == batch.t);
    CHECK(again.x0 == batch.x0);

    CHECK(target_field(batch.x0, batch.x1) == batch.target);
    for (std::size_t item = 0; item < 2; ++item) {
        for (std::size_t i = 0; i < 94 * 4; ++i) {
            const std::size_t k = item * 94 * 4 + i;
            const double t = batch.t[item];
            CHECK(batch.xt[k] == doctest::Approx((1.0 - t) * batch.x0[k] + t * batch.x1[k]).epsilon(1e-15));
        }
    }
    // Padding cells carry no prior draw and no data.
    for (std::size_t i = 50 * 4; i < 94 * 4; ++i) {
        CHECK(batch.x0[i] == 0.0);
        CHECK(batch.cond[i] == 0.0);
    }

    TrainingPair mismatched{random_tensor({5, 4}, 5), random_tensor({6, 4}, 6)};
    CHECK_THROWS_AS(make_training_batch({&mismatched}, r1, FlowConfig{}), std::invalid_argument);
    CHECK_THROWS_AS(make_training_batch({}, r1, FlowConfig{}), std::invalid_argument);
}

TEST_CASE("training step: reported loss is the pre-update cfm_loss") {
    const EstimatorConfig config = small_model(8);
    EstimatorParams params = EstimatorParams::initialize(config, 3);
    for (auto& e : params.entries()) {
        const Tensor noise = random_tensor(e.value.shape(), e.value.size(), 0.1);
        for (std::size_t i = 0; i < e.value.size(); ++i) e.value[i] += noise[i];
    }
    TrainingPair p{random_tensor({6, 8}, 1), random_tensor({6, 8}, 2)};
    TrainingPair q{random_tensor({4, 8}, 3), random_tensor({4, 8}, 4)};
    std::mt19937_64 rng(5);
    const TrainingBatch batch = make_training_batch({&p, &q}, rng, FlowConfig{});

    ad::Tape tape;
    BoundParams bound(tape, params, false);
    const Tensor pred = estimator_forward(tape, bound, batch.xt, batch.cond, batch.mask, batch.t, config).value();
    const double expected = cfm_loss(pred, batch.target, batch.mask);

    OptimizerState state = OptimizerState::fresh(params, AdamWConfig{});
    const EstimatorParams before = params;
    const StepResult r = training_step(batch, params, state, config);
    CHECK(r.loss == doctest::Approx(expected).epsilon(1e-12));
    CHECK(!(params == before));
}

TEST_CASE("training step: 200 steps on one fixed tiny batch") {
    EstimatorConfig config = small_model(16);
    EstimatorParams params = EstimatorParams::initialize(config, 1);
    TrainingPair p{random_tensor({16, 16}, 1), random_tensor({16, 16}, 2)};
    std::mt19937_64 rng(3);
    const TrainingBatch batch = make_training_batch({&p}, rng, FlowConfig{});
    AdamWConfig optim;
    optim.lr = 1e-3;
    OptimizerState state = OptimizerState::fresh(params, optim);
    double first = 0.0, last = 0.0;
    for (int k = 0; k < 200; ++k) {
        last = training_step(batch, params, state, config).loss;
        if (k == 0) first = last;
    }
    MESSAGE("fixed-batch loss " << first << " -> " << last);
    CHECK(last < 0.2 * first);
}

TEST_CASE("trainer: identical seeds give identical loss traces") {
    auto run = [] {
        Trainer t(toy_train_config(6), toy_pairs(3, 16), MelNormalization{});
        std::vector<double> losses;
        t.run([&](std::uint64_t, double l) { losses.push_back(l); });
        return std::make_pair(losses, t.params());
    };
    const auto a = run();
    const auto b = run();
    CHECK(a.first.size() == 6);
    CHECK(a.first == b.first);
    CHECK(a.second == b.second);

    Trainer t(toy_train_config(6), toy_pairs(3, 16), MelNormalization{});
    // Every pair appears once per epoch.
    std::vector<std::size_t> seen;
    for (std::uint64_t s = 0; s < 3; ++s) {
        for (std::size_t i : t.batch_indices(s)) seen.push_back(i);
    }
    std::vector<std::size_t> first_epoch(seen.begin(), seen.begin() + 3);
    std::sort(first_epoch.begin(), first_epoch.end());
    CHECK(first_epoch == std::vector<std::size_t>{0, 1, 2});
}

TEST_CASE("checkpoint: exact round trip, corruption and config guard") {
    Trainer t(toy_train_config(3), toy_pairs(2, 16), MelNormalization{-4.5, 2.25});
    t.run();
    const Checkpoint ck{t.model(), t.optimizer(), t.steps_done()};
    const fs::path path = temp_path("roundtrip.ckpt");
    save_checkpoint(ck, path);
    const Checkpoint loaded = load_checkpoint(path, toy_train_config(3).model);
    CHECK(loaded == ck);

    EstimatorConfig other = toy_train_config(3).model;
    other.n_blocks = 2;
    CHECK_THROWS_AS(load_checkpoint(path, other), ConfigMismatch);

    std::string bytes;
    {
        std::ifstream in(path, std::ios::binary);
        bytes.assign(std::istreambuf_iterator<char>(in), {});
    }
    const fs::path corrupt = temp_path("corrupt.ckpt");
    std::string flipped = bytes;
    flipped[bytes.size() / 2] ^= 0x20;
    std::ofstream(corrupt, std::ios::binary) << flipped;
    CHECK_THROWS_AS(load_checkpoint(corrupt), CheckpointError);
    std::ofstream(corrupt, std::ios::binary | std::ios::trunc) << bytes.substr(0, bytes.size() / 3);
    CHECK_THROWS_AS(load_checkpoint(corrupt), CheckpointError);
    std::ofstream(corrupt, std::ios::binary | std::ios::trunc) << "not a checkpoint";
    CHECK_THROWS_AS(load_checkpoint(corrupt), CheckpointError);
    CHECK_THROWS_AS(load_checkpoint(temp_path("missing.ckpt")), CheckpointError);
}

TEST_CASE("checkpoint: resuming matches an uninterrupted run") {
    const auto pairs = toy_pairs(3, 16);
    Trainer straight(toy_train_config(13), pairs, MelNormalization{});
    std::vector<double> straight_losses;
    straight.run([&](std::uint64_t, double l) { straight_losses.push_back(l); });

    Trainer first(toy_train_config(3), pairs, MelNormalization{});
    first.run();
    const fs::path path = temp_path("resume.ckpt");
    save_checkpoint({first.model(), first.optimizer(), first.steps_done()}, path);

    const Checkpoint ck = load_checkpoint(path);
    Trainer resumed(toy_train_config(13), pairs, MelNormalization{});
    resumed.restore(ck.model.params, ck.optimizer, ck.step);
    std::vector<double> resumed_losses;
    resumed.run([&](std::uint64_t, double l) { resumed_losses.push_back(l); });
    REQUIRE(resumed_losses.size() == 10);
    CHECK(resumed_losses.back() == straight_losses.back());
    CHECK(resumed.params() == straight.params());
    CHECK(resumed.optimizer() == straight.optimizer());
}

TEST_CASE("normalization: fit, apply and invert") {
    MelSpectrogram a, b;
    a.values = Tensor({2, 2}, {1.0, 3.0, 5.0, 7.0});
    b.values = Tensor({1, 2}, {9.0, 11.0});
    const MelNormalization n = MelNormalization::fit({&a, &b});
    CHECK(n.shift == doctest::Approx(6.0));
    CHECK(n.scale == doctest::Approx(std::sqrt(35.0 / 3.0)));
    const Tensor back = n.invert(n.apply(a.values));
    for (std::size_t i = 0; i < 4; ++i) CHECK(back[i] == doctest::Approx(a.values[i]).epsilon(1e-14));
    MelSpectrogram flat;
    flat.values = Tensor({3, 2}, -11.5);
    CHECK(MelNormalization::fit({&flat}).scale == 1.0);
}
