#include <doctest.h>

#include <cmath>
#include <functional>
#include <random>
#include <stdexcept>

#include "melrefine/ops.hpp"

using namespace melrefine;
using melrefine::ad::Tape;
using melrefine::ad::Var;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> normal(0.0, scale);
    Tensor t(std::move(shape));
    for (double& v : t.values()) v = normal(rng);
    return t;
}

// Builds a scalar from the inputs: sum(w .* f(inputs)) with a fixed random w.
using Builder = std::function<Var(Tape&, const std::vector<Var>&)>;

double scalar_of(const Builder& build, const std::vector<Tensor>& inputs, const Tensor& weights) {
    Tape tape;
    std::vector<Var> vars;
    for (const auto& t : inputs) vars.push_back(tape.constant(t));
    const Tensor out = build(tape, vars).value();
    double s = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) s += weights[i] * out[i];
    return s;
}

// Compares the tape gradient of every input entry against central differences.
double max_gradient_error(const Builder& build, std::vector<Tensor> inputs, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    Tensor weights;
    {
        Tape probe;
        std::vector<Var> vars;
        for (const auto& t : inputs) vars.push_back(probe.constant(t));
        weights = random_tensor(build(probe, vars).shape(), rng);
    }

    Tape tape;
    std::vector<Var> vars;
    for (const auto& t : inputs) vars.push_back(tape.parameter(t));
    Var out = build(tape, vars);
    // sum(weights .* out) on the tape: mul_const, then a ones-vector linear map.
    Var weighted = ad::mul_const(out, weights);
    Var flat = ad::reshape(weighted, Shape{1, weighted.value().size()});
    Var total = ad::linear(flat, tape.constant(Tensor(Shape{weighted.value().size(), 1}, 1.0)),
                           tape.constant(Tensor(Shape{1})));
    tape.backward(total);

    const double h = 1e-5;
    double worst = 0.0;
    for (std::size_t a = 0; a < inputs.size(); ++a) {
        const Tensor analytic = tape.grad(vars[a]);
        for (std::size_t i = 0; i < inputs[a].size(); ++i) {
            const double saved = inputs[a][i];
            inputs[a][i] = saved + h;
            const double up = scalar_of(build, inputs, weights);
            inputs[a][i] = saved - h;
            const double down = scalar_of(build, inputs, weights);
            inputs[a][i] = saved;
            const double numeric = (up - down) / (2 * h);
            const double err = std::abs(numeric - analytic[i]) / std::max(1.0, std::abs(numeric));
            worst = std::max(worst, err);
        }
    }
    return worst;
}

}  // namespace

TEST_CASE("linear, layer_norm and activations match finite differences") {
    std::mt19937_64 rng(1);
    auto x = random_tensor({2, 3, 5}, rng);
    CHECK(max_gradient_error(
              [](Tape&, const std::vector<Var>& v) { return ad::linear(v[0], v[1], v[2]); },
              {x, random_tensor({5, 4}, rng), random_tensor({4}, rng)}, 2) < 1e-7);
    CHECK(max_gradient_error(
              [](Tape&, const std::vector<Var>& v) { return ad::layer_norm(v[0], v[1], v[2]); },
              {x, random_tensor({5}, rng), random_tensor({5}, rng)}, 3) < 1e-7);
    CHECK(max_gradient_error([](Tape&, const std::vector<Var>& v) { return ad::silu(v[0]); }, {x}, 4) < 1e-7);
    CHECK(max_gradient_error([](Tape&, const std::vector<Var>& v) { return ad::leaky_relu(v[0], 0.01); },
                             {x}, 5) < 1e-7);
    CHECK(max_gradient_error([](Tape&, const std::vector<Var>& v) { return ad::glu(v[0]); },
                             {random_tensor({2, 3, 6}, rng)}, 6) < 1e-7);
}

TEST_CASE("structural ops match finite differences") {
    std::mt19937_64 rng(7);
    auto a = random_tensor({2, 3, 4}, rng);
    auto b = random_tensor({2, 3, 4}, rng);
    CHECK(max_gradient_error(
              [](Tape&, const std::vector<Var>& v) { return ad::concat_last({v[0], v[1]}); }, {a, b}, 8) < 1e-7);
    CHECK(max_gradient_error(
              [](Tape&, const std::vector<Var>& v) { return ad::stack_channels({v[0], v[1], v[0]}); }, {a, b},
              9) < 1e-7);
    CHECK(max_gradient_error(
              [](Tape&, const std::vector<Var>& v) {
                  return ad::take_channel(ad::stack_channels({v[0], v[1]}), 1);
              },
              {a, b}, 10) < 1e-7);
    CHECK(max_gradient_error([](Tape&, const std::vector<Var>& v) { return ad::rope(v[0], 2, 10000.0); },
                             {random_tensor({2, 5, 8}, rng)}, 11) < 1e-7);
}

TEST_CASE("attention gradients respect the key mask") {
    std::mt19937_64 rng(12);
    Tensor mask(Shape{2, 5}, 1.0);
    mask[3] = 0.0;
    mask[4] = 0.0;
    mask[9] = 0.0;
    auto build = [mask](Tape&, const std::vector<Var>& v) { return ad::attention(v[0], v[1], v[2], mask, 2); };
    CHECK(max_gradient_error(build, {random_tensor({2, 5, 8}, rng), random_tensor({2, 5, 8}, rng),
                                     random_tensor({2, 5, 8}, rng)},
                             13) < 1e-7);
}

TEST_CASE("attention output ignores masked keys and zeroes masked queries") {
    std::mt19937_64 rng(14);
    Tensor mask(Shape{1, 4}, 1.0);
    mask[3] = 0.0;
    auto q = random_tensor({1, 4, 4}, rng);
    auto k = random_tensor({1, 4, 4}, rng);
    auto v = random_tensor({1, 4, 4}, rng);
    Tape tape;
    const Tensor base = ad::attention(tape.constant(q), tape.constant(k), tape.constant(v), mask, 1).value();
    for (std::size_t j = 0; j < 4; ++j) {
        k[12 + j] += 5.0;
        v[12 + j] -= 3.0;
    }
    const Tensor moved = ad::attention(tape.constant(q), tape.constant(k), tape.constant(v), mask, 1).value();
    for (std::size_t i = 0; i < 12; ++i) CHECK(moved[i] == doctest::Approx(base[i]).epsilon(1e-12));
    for (std::size_t i = 12; i < 16; ++i) CHECK(moved[i] == 0.0);
}

TEST_CASE("convolutions match finite differences") {
    std::mt19937_64 rng(15);
    CHECK(max_gradient_error(
              [](Tape&, const std::vector<Var>& v) { return ad::depthwise_conv1d(v[0], v[1], v[2]); },
              {random_tensor({2, 6, 3}, rng), random_tensor({3, 3}, rng), random_tensor({3}, rng)}, 16) < 1e-7);
    CHECK(max_gradient_error(
              [](Tape&, const std::vector<Var>& v) { return ad::conv2d(v[0], v[1], v[2]); },
              {random_tensor({2, 2, 4, 5}, rng), random_tensor({3, 2, 3, 3}, rng), random_tensor({3}, rng)},
              17) < 1e-7);
}

TEST_CASE("conv2d with a centered unit kernel is the identity") {
    Tensor w(Shape{1, 1, 3, 3});
    w[4] = 1.0;
    std::mt19937_64 rng(18);
    auto x = random_tensor({1, 1, 4, 6}, rng);
    Tape tape;
    const Tensor y = ad::conv2d(tape.constant(x), tape.constant(w), tape.constant(Tensor(Shape{1}))).value();
    CHECK(y == x);
}

TEST_CASE("masked_mse counts only valid frames") {
    Tensor mask(Shape{1, 4}, 1.0);
    mask[2] = 0.0;
    mask[3] = 0.0;
    Tensor target(Shape{1, 4, 2});
    Tensor pred(Shape{1, 4, 2});
    for (std::size_t i = 4; i < 8; ++i) pred[i] = 10.0;
    Tape tape;
    Var p = tape.parameter(pred);
    Var loss = ad::masked_mse(p, target, mask);
    CHECK(loss.value()[0] == 0.0);
    tape.backward(loss);
    const Tensor grad = tape.grad(p);
    for (double g : grad.values()) CHECK(g == 0.0);

    CHECK_THROWS_AS(ad::masked_mse(p, target, Tensor(Shape{1, 4})), std::invalid_argument);
}

TEST_CASE("backward accumulates through shared inputs") {
    Tape tape;
    Var x = tape.parameter(Tensor(Shape{1, 1}, std::vector<double>{3.0}));
    Var y = ad::add(x, x);
    Var z = ad::linear(y, tape.constant(Tensor(Shape{1, 1}, 1.0)), tape.constant(Tensor(Shape{1})));
    tape.backward(z);
    CHECK(tape.grad(x)[0] == 2.0);
}
