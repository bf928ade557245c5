#include <cmath>

#include "doctest.h"
#include "gradcheck.hpp"
#include "taprune/error.hpp"
#include "taprune/gates/hard_concrete.hpp"

using namespace taprune;

namespace {

// Independent evaluation of the open probability in long double.
long double closed_form(long double la)
{
    const long double beta = 2.0L / 3.0L;
    return 1.0L / (1.0L + std::exp(-(la - beta * std::log(0.1L / 1.1L))));
}

}  // namespace

TEST_SUITE("gates") {

TEST_CASE("sample_gate examples")
{
    CHECK(gates::sample_gate(0.0, 0.5) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(gates::sample_gate(30.0, 0.5) == 1.0);
    CHECK(gates::sample_gate(-30.0, 0.5) == 0.0);
    CHECK_THROWS_AS((void)gates::sample_gate(0.0, 0.0), ConfigError);
    CHECK_THROWS_AS((void)gates::sample_gate(0.0, 1.0), ConfigError);
}

TEST_CASE("deterministic_gate examples")
{
    CHECK(gates::deterministic_gate(0.0) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(gates::deterministic_gate(30.0) == 1.0);
    CHECK(gates::deterministic_gate(-30.0) == 0.0);
}

TEST_CASE("prob_nonzero limits and closed form")
{
    CHECK(gates::prob_nonzero(-200.0) < 1e-80);
    for (double la : {-3.0, -1.0, 0.0, 1.0, 3.0, 5.0}) {
        CHECK(gates::prob_nonzero(la) == doctest::Approx(static_cast<double>(closed_form(la))).epsilon(1e-14));
    }
    CHECK(gates::prob_nonzero(0.0) == doctest::Approx(0.832).epsilon(1e-3));
}

TEST_CASE("config validation")
{
    gates::HardConcreteConfig bad;
    bad.stretch_lo = 0.1;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = {};
    bad.beta = 0.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    CHECK_NOTHROW(gates::HardConcreteConfig{}.validate());
}

TEST_CASE("monotone in log_alpha and bounded")
{
    Rng rng(2);
    for (int rep = 0; rep < 50; ++rep) {
        const double u = rng.uniform_open();
        double prev_s = -1, prev_p = -1, prev_d = -1;
        for (double la = -8.0; la <= 8.0; la += 0.25) {
            const double s = gates::sample_gate(la, u);
            const double p = gates::prob_nonzero(la);
            const double d = gates::deterministic_gate(la);
            CHECK(s >= prev_s);
            CHECK(p >= prev_p);
            CHECK(d >= prev_d);
            CHECK(s >= 0.0);
            CHECK(s <= 1.0);
            CHECK(d >= 0.0);
            CHECK(d <= 1.0);
            prev_s = s;
            prev_p = p;
            prev_d = d;
        }
    }
}

TEST_CASE("closed form agrees with monte carlo")
{
    Rng rng(123);
    const int n = 1'000'000;
    for (double la : {-3.0, -1.0, 0.0, 1.0, 3.0, 5.0}) {
        int open = 0;
        for (int i = 0; i < n; ++i) open += gates::sample_gate(la, rng.uniform_open()) > 0.0;
        const double p = gates::prob_nonzero(la);
        const double emp = static_cast<double>(open) / n;
        INFO("log_alpha " << la << " empirical " << emp << " closed " << p);
        CHECK(std::abs(emp - p) < 4.0 * std::sqrt(p * (1 - p) / n));
        if (la == 5.0) CHECK(std::abs(emp - p) < 1e-3);
    }
}

TEST_CASE("pathwise gradient of the monte-carlo mean")
{
    Rng rng(9);
    const std::size_t n = 100'000;
    const auto u = gates::draw_uniforms(rng, n);
    for (double la0 : {-1.0, 0.0, 1.5}) {
        auto la = ad::Tensor::full({n}, la0, true);
        auto mean = ad::mean(gates::sample_gates(la, u));
        mean.backward();
        double pathwise = 0.0;
        for (double g : la.grad()) pathwise += g;

        const double eps = 1e-4;
        double up = 0.0;
        double down = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            up += gates::sample_gate(la0 + eps, u[i]);
            down += gates::sample_gate(la0 - eps, u[i]);
        }
        const double fd = (up - down) / (2 * eps * static_cast<double>(n));
        CHECK(std::abs(pathwise - fd) / std::abs(fd) < 1e-2);
    }
}

TEST_CASE("tensor forms agree with the scalar forms")
{
    Rng rng(4);
    auto la = testing::random_tensor({20}, rng, -4, 4);
    auto u = gates::draw_uniforms(rng, 20);
    auto z = gates::sample_gates(la, u);
    auto p = gates::prob_nonzero(la);
    auto d = gates::deterministic_gates(la.data());
    for (std::size_t i = 0; i < 20; ++i) {
        CHECK(z.data()[i] == doctest::Approx(gates::sample_gate(la.data()[i], u[i])).epsilon(1e-14));
        CHECK(p.data()[i] == doctest::Approx(gates::prob_nonzero(la.data()[i])).epsilon(1e-14));
        CHECK(d[i] == gates::deterministic_gate(la.data()[i]));
    }
}

TEST_CASE("initialization starts near open")
{
    Rng rng(8);
    auto params = gates::GateParams::initialize(1000, rng);
    double sum = 0.0;
    for (double v : params.log_alpha.data()) {
        CHECK(std::abs(v - 2.0) < 0.06);
        sum += v;
    }
    CHECK(sum / 1000.0 == doctest::Approx(2.0).epsilon(1e-3));
    CHECK(params.log_alpha.requires_grad());
}

TEST_CASE("sample gradient passes the finite-difference check")
{
    Rng rng(21);
    for (const auto& c : testing::composite_gradient_cases()) {
        if (c.name != "hard_concrete_sample") continue;
        for (int rep = 0; rep < 20; ++rep) CHECK(c.run(rng) < 1e-4);
    }
}

}
