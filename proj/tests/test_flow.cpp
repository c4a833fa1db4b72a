#include <doctest.h>

#include <cmath>
#include <random>

#include "melrefine/flow.hpp"

using namespace melrefine;

namespace {

Tensor random_tensor(const Shape& shape, std::uint64_t seed, double scale = 1.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-scale, scale);
    Tensor t(shape);
    for (double& v : t.values()) v = u(rng);
    return t;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

double relative_error(const Tensor& got, const Tensor& want) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < got.size(); ++i) {
        num += (got[i] - want[i]) * (got[i] - want[i]);
        den += want[i] * want[i];
    }
    return std::sqrt(num / den);
}

}  // namespace

TEST_CASE("sample_prior: shape, determinism and moments") {
    std::mt19937_64 a(5), b(5);
    const Tensor x = sample_prior({2, 94, 128}, a);
    CHECK(x.shape() == Shape{2, 94, 128});
    CHECK(x == sample_prior({2, 94, 128}, b));

    std::mt19937_64 rng(11);
    const Tensor big = sample_prior({100000}, rng);
    double mean = 0.0;
    for (double v : big.values()) mean += v;
    mean /= big.size();
    double var = 0.0;
    for (double v : big.values()) var += (v - mean) * (v - mean);
    var /= big.size();
    CHECK(std::abs(mean) < 0.02);
    CHECK(var > 0.97);
    CHECK(var < 1.03);
}

TEST_CASE("phi_t: endpoints and worked values") {
    const Tensor x0 = random_tensor({3, 5}, 1);
    const Tensor x1 = random_tensor({3, 5}, 2);
    CHECK(phi_t(x0, x1, 0.0) == x0);
    CHECK(phi_t(x0, x1, 1.0) == x1);
    CHECK(phi_t(Tensor({1}, 2.0), Tensor({1}, 6.0), 0.25)[0] == doctest::Approx(3.0).epsilon(1e-15));
    CHECK(phi_t(Tensor({1}, 1.0), Tensor({1}, 0.0), 0.5, 0.1)[0] == doctest::Approx(0.55).epsilon(1e-15));
    CHECK_THROWS_AS(phi_t(x0, Tensor({5, 3}), 0.5), std::invalid_argument);
}

TEST_CASE("target_field: worked values and derivative of phi_t") {
    const Tensor f = target_field(Tensor({2}, {1.0, 2.0}), Tensor({2}, {3.0, 5.0}));
    CHECK(f[0] == 2.0);
    CHECK(f[1] == 3.0);
    const Tensor same = random_tensor({4}, 3);
    CHECK(max_abs_diff(target_field(same, same), Tensor({4})) == 0.0);

    for (double sigma : {0.0, 0.1}) {
        const Tensor x0 = random_tensor({6, 7}, 4);
        const Tensor x1 = random_tensor({6, 7}, 5);
        const Tensor u = target_field(x0, x1, sigma);
        // d/dt of (1 - (1 - s) t) x0 + t x1, written out by hand.
        Tensor analytic(x0.shape());
        for (std::size_t i = 0; i < x0.size(); ++i) analytic[i] = x1[i] - (1.0 - sigma) * x0[i];
        CHECK(max_abs_diff(u, analytic) < 1e-12);
        for (double h : {1e-1, 1e-3}) {
            const Tensor plus = phi_t(x0, x1, 0.3 + h, sigma);
            const Tensor minus = phi_t(x0, x1, 0.3 - h, sigma);
            Tensor fd(x0.shape());
            for (std::size_t i = 0; i < fd.size(); ++i) fd[i] = (plus[i] - minus[i]) / (2.0 * h);
            CHECK(relative_error(fd, u) < 1e-6);
        }
    }
}

TEST_CASE("cfm_loss: offsets and masking") {
    const Tensor target = random_tensor({2, 4, 3}, 6);
    const Tensor full({2, 4}, 1.0);
    CHECK(cfm_loss(target, target, full) == 0.0);
    Tensor shifted = target;
    for (double& v : shifted.values()) v += 0.5;
    CHECK(cfm_loss(shifted, target, full) == doctest::Approx(0.25).epsilon(1e-12));

    Tensor half({2, 4});
    Tensor wrong_in_padding = target;
    for (std::size_t b = 0; b < 2; ++b) {
        for (std::size_t f = 0; f < 2; ++f) half[b * 4 + f] = 1.0;
        for (std::size_t f = 2; f < 4; ++f) {
            for (std::size_t m = 0; m < 3; ++m) wrong_in_padding[(b * 4 + f) * 3 + m] += 7.0;
        }
    }
    CHECK(cfm_loss(wrong_in_padding, target, half) == 0.0);
    CHECK_THROWS_AS(cfm_loss(target, target, Tensor({2, 4})), std::invalid_argument);
}

TEST_CASE("euler_integrate: constant field, closed-form product and oracle recovery") {
    const Tensor x0 = random_tensor({3, 4}, 7);
    const Tensor u = random_tensor({3, 4}, 8);
    for (std::size_t n : {1, 3, 64}) {
        const Tensor out = euler_integrate([&](const Tensor&, double, const Tensor&) { return u; }, x0, Tensor(), n);
        for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == doctest::Approx(x0[i] + u[i]).epsilon(1e-14));
    }

    const Tensor one({1}, 1.0);
    const Tensor grown = euler_integrate([](const Tensor& x, double, const Tensor&) { return x; }, one, Tensor(), 64);
    CHECK(std::abs(grown[0] - std::pow(1.0 + 1.0 / 64.0, 64.0)) < 1e-9);
    CHECK(std::abs(grown[0] - 2.697344952565099) < 1e-9);

    std::mt19937_64 rng(9);
    const Tensor x1 = random_tensor({2, 10, 8}, 10, 3.0);
    for (std::size_t n : {1, 8, 64}) {
        const Tensor start = sample_prior(x1.shape(), rng);
        const Tensor u_true = target_field(start, x1);
        const Tensor out = euler_integrate([&](const Tensor&, double, const Tensor&) { return u_true; }, start,
                                           Tensor(), n);
        CHECK(relative_error(out, x1) < 1e-6);
    }
}

TEST_CASE("euler_integrate: time grid and non-finite guard") {
    std::vector<double> seen;
    euler_integrate(
        [&](const Tensor& x, double t, const Tensor&) {
            seen.push_back(t);
            return Tensor(x.shape());
        },
        Tensor({1}), Tensor(), 4);
    CHECK(seen == std::vector<double>{0.0, 0.25, 0.5, 0.75});

    try {
        euler_integrate(
            [](const Tensor& x, double t, const Tensor&) {
                return Tensor(x.shape(), t >= 0.5 ? std::nan("") : 0.0);
            },
            Tensor({2}), Tensor(), 4);
        FAIL("expected NonFiniteTrajectory");
    } catch (const NonFiniteTrajectory& e) {
        CHECK(e.step() == 2);
    }
    CHECK_THROWS_AS(euler_integrate([](const Tensor& x, double, const Tensor&) { return x; }, Tensor({1}), Tensor(), 0),
                    std::invalid_argument);
}
