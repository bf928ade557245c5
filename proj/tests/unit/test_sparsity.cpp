#include <cmath>

#include "closed_loop.hpp"
#include "doctest.h"
#include "fixtures.hpp"
#include "gradcheck.hpp"
#include "taprune/error.hpp"
#include "taprune/pipeline/compact.hpp"
#include "taprune/sparsity/controller.hpp"

using namespace taprune;

namespace {

// Counts every parameter a masked dense model still uses, straight from the
// weight shapes, independent of UnitCosts.
std::size_t brute_force_retained(const model::ModelConfig& c, const model::GateValues& m)
{
    std::size_t h = 0;
    for (std::size_t k = 0; k < c.hidden_dim; ++k) h += m.hidden(k) == 1.0;
    const std::size_t dh = c.head_dim();
    std::size_t n = 0;
    for (std::size_t i = 0; i < c.num_layers; ++i) {
        if (m.mha(i) == 1.0) {
            std::size_t heads = 0;
            for (std::size_t j = 0; j < c.num_heads; ++j) heads += m.head(i, j) == 1.0;
            const std::size_t w = heads * dh;
            n += 3 * (h * w + w) + w * h + h;  // q/k/v weights and biases, wo, bo
            if (heads > 0) n += 2 * h;         // ln1
        }
        if (m.ffn(i) == 1.0) {
            std::size_t units = 0;
            for (std::size_t u = 0; u < c.ffn_dim; ++u) units += m.fc(i, u) == 1.0;
            n += h * units + units + units * h + h;
            if (units > 0) n += 2 * h;
        }
    }
    return n;
}

std::size_t full_count(const model::ModelConfig& c)
{
    const std::size_t d = c.hidden_dim;
    return c.num_layers * (4 * d * d + 4 * d + 2 * d + 2 * d * c.ffn_dim + c.ffn_dim + d + 2 * d);
}

}  // namespace

TEST_SUITE("sparsity") {

TEST_CASE("prunable count excludes embeddings and heads")
{
    for (auto c : {testing::tiny_config(), testing::small_config(), testing::toy_config()}) {
        CHECK(sparsity::prunable_parameter_count(c) == full_count(c));
    }
}

TEST_CASE("extreme probabilities")
{
    for (auto c : {testing::tiny_config(), testing::toy_config()}) {
        const auto lay = model::GateLayout::of(c);
        auto ones = model::GateSet::constant(model::GateValues::filled(lay, 1.0));
        auto zeros = model::GateSet::constant(model::GateValues::filled(lay, 0.0));
        CHECK(sparsity::expected_sparsity(ones, c).item() == doctest::Approx(0.0).epsilon(1e-15));
        CHECK(sparsity::expected_sparsity(zeros, c).item() == doctest::Approx(1.0).epsilon(1e-15));
    }
}

TEST_CASE("half the heads closed matches a brute-force count")
{
    for (auto c : {testing::tiny_config(), testing::small_config(), testing::toy_config()}) {
        if (c.num_heads % 2 != 0) continue;
        auto g = model::GateValues::ones(c);
        for (std::size_t i = 0; i < c.num_layers; ++i) {
            for (std::size_t j = 0; j < c.num_heads / 2; ++j) g.head(i, (i + j) % c.num_heads) = 0.0;
        }
        const double zeroed = static_cast<double>(full_count(c) - brute_force_retained(c, g));
        CHECK(sparsity::expected_sparsity(g, c) == doctest::Approx(zeroed / full_count(c)).epsilon(1e-12));
    }
}

TEST_CASE("binary masks give the exact compacted parameter count")
{
    Rng rng(31);
    for (auto c : {testing::tiny_config(), testing::small_config()}) {
        auto m = testing::random_model(c, 2);
        for (int rep = 0; rep < 100; ++rep) {
            auto mask = testing::random_binary_mask(c, rng, 0.2 + 0.7 * rng.uniform_open());
            const double M = static_cast<double>(full_count(c));
            const double brute = 1.0 - brute_force_retained(c, mask) / M;
            const double compacted = 1.0 - pipeline::compact(m, mask).prunable_parameter_count() / M;
            const double tensor_route =
                sparsity::expected_sparsity(model::GateSet::constant(mask), c).item();
            CHECK(std::abs(sparsity::expected_sparsity(mask, c) - brute) < 1e-12);
            CHECK(std::abs(tensor_route - brute) < 1e-12);
            CHECK(std::abs(compacted - brute) < 1e-12);
        }
    }
}

TEST_CASE("expected sparsity is monotone in every probability")
{
    Rng rng(8);
    auto c = testing::tiny_config();
    for (int rep = 0; rep < 20; ++rep) {
        auto g = testing::random_gate_values(c, rng, 0.0, 1.0);
        const double base = sparsity::expected_sparsity(g, c);
        for (std::size_t k = 0; k < g.size(); ++k) {
            auto up = g;
            up.values()[k] = std::min(1.0, up.values()[k] + 0.1);
            CHECK(sparsity::expected_sparsity(up, c) <= base + 1e-15);
        }
    }
}

TEST_CASE("penalty examples")
{
    sparsity::SparsityTarget t;
    t.target = 0.9;
    t.lambda1 = 3.0;
    t.lambda2 = 5.0;
    CHECK(sparsity::lagrangian_penalty(0.9, t) == 0.0);
    t.lambda1 = 0.0;
    t.lambda2 = 1.0;
    CHECK(sparsity::lagrangian_penalty(1.0, t) == doctest::Approx(0.01).epsilon(1e-12));
    t.lambda1 = 1.0;
    t.lambda2 = 0.0;
    CHECK(sparsity::lagrangian_penalty(0.85, t) == doctest::Approx(-0.05).epsilon(1e-12));
    auto tensor_form = sparsity::lagrangian_penalty(ad::Tensor::scalar(0.85), t);
    CHECK(tensor_form.item() == doctest::Approx(-0.05).epsilon(1e-12));
}

TEST_CASE("multiplier ascent")
{
    sparsity::SparsityTarget t;
    t.target = 0.7;
    t.lambda1 = 0.3;
    t.lambda2 = 0.2;
    sparsity::update_multipliers(t, 0.7);
    CHECK(t.lambda1 == 0.3);
    CHECK(t.lambda2 == 0.2);
    t.multiplier_lr = 1.0;
    sparsity::update_multipliers(t, 0.5);
    CHECK(t.lambda1 == doctest::Approx(0.3 - 0.2).epsilon(1e-14));
}

TEST_CASE("penalty gradient passes the finite-difference check")
{
    Rng rng(5);
    for (const auto& c : testing::composite_gradient_cases()) {
        if (c.name != "lagrangian_penalty") continue;
        for (int rep = 0; rep < 20; ++rep) CHECK(c.run(rng) < 1e-4);
    }
}

TEST_CASE("warmup ramps linearly")
{
    CHECK(sparsity::warmup_target(0.9, 0, 100, 0.2) == 0.0);
    CHECK(sparsity::warmup_target(0.9, 10, 100, 0.2) == doctest::Approx(0.45));
    CHECK(sparsity::warmup_target(0.9, 20, 100, 0.2) == 0.9);
    CHECK(sparsity::warmup_target(0.9, 70, 100, 0.2) == 0.9);
    CHECK(sparsity::warmup_target(0.9, 0, 100, 0.0) == 0.9);
}

TEST_CASE("binarize at zero target keeps everything")
{
    auto c = testing::small_config();
    std::vector<double> la(model::GateLayout::of(c).count(), 2.0);
    auto r = sparsity::binarize_to_target(la, c, 0.0);
    CHECK(r.achieved_sparsity == 0.0);
    for (double v : r.mask.values()) CHECK(v == 1.0);
    CHECK_FALSE(r.warning);
}

TEST_CASE("binarize tie-break is lexicographic")
{
    auto c = testing::tiny_config();
    const auto lay = model::GateLayout::of(c);
    auto scores = model::GateValues::filled(lay, 0.7);
    auto r = sparsity::binarize_scores(scores, c, 0.5);
    // With equal scores the order is layer 0 heads, layer 0 fc units, layer 1 ...
    const auto costs = sparsity::UnitCosts::of(c, c.hidden_dim);
    std::size_t used = 0;
    auto expected = model::GateValues::filled(lay, 0.0);
    for (std::size_t k = 0; k < c.hidden_dim; ++k) expected.hidden(k) = 1.0;
    // Units that do not fit are skipped; cheaper ones later in the order may still fit.
    for (std::size_t i = 0; i < c.num_layers; ++i) {
        for (int kind = 0; kind < 2; ++kind) {
            const std::size_t n = kind == 0 ? c.num_heads : c.ffn_dim;
            bool open = false;
            for (std::size_t j = 0; j < n; ++j) {
                std::size_t cost = kind == 0 ? costs.head : costs.fc_unit;
                if (!open) cost += costs.block_bias + costs.block_norm;
                if (used + cost > r.budget) continue;
                used += cost;
                open = true;
                if (kind == 0) {
                    expected.mha(i) = 1.0;
                    expected.head(i, j) = 1.0;
                } else {
                    expected.ffn(i) = 1.0;
                    expected.fc(i, j) = 1.0;
                }
            }
        }
    }
    CHECK(r.mask == expected);
    CHECK(r.retained_parameters == used);
    CHECK(r.budget == static_cast<std::size_t>(std::floor(0.5 * full_count(c))));
}

TEST_CASE("binarize respects the budget within one unit")
{
    Rng rng(44);
    for (auto c : {testing::small_config(), testing::toy_config()}) {
        auto m = testing::random_model(c, 1);
        const auto lay = model::GateLayout::of(c);
        for (double t : {0.4, 0.7, 0.9, 0.95, 0.98}) {
            for (int rep = 0; rep < 5; ++rep) {
                std::vector<double> la(lay.count());
                for (auto& v : la) v = rng.normal(0.5, 2.0);
                auto r = sparsity::binarize_to_target(la, c, t);
                auto again = sparsity::binarize_to_target(la, c, t);
                CHECK(r.mask == again.mask);
                CHECK(r.retained_parameters <= r.budget);
                const auto costs = sparsity::UnitCosts::of(c, r.mask.retained_hidden());
                const double M = static_cast<double>(full_count(c));
                const double granularity = (costs.head + costs.block_bias + costs.block_norm) / M;
                const double counted = 1.0 - pipeline::compact(m, r.mask).prunable_parameter_count() / M;
                CHECK(counted == doctest::Approx(r.achieved_sparsity).epsilon(1e-12));
                CHECK(counted >= t);
                CHECK(counted <= t + granularity + 1e-12);
            }
        }
    }
}

TEST_CASE("binarize warns when nothing fits")
{
    auto c = testing::tiny_config();
    std::vector<double> la(model::GateLayout::of(c).count(), 1.0);
    auto r = sparsity::binarize_to_target(la, c, 0.999);
    REQUIRE(r.warning);
    CHECK(r.retained_parameters == 0);
    CHECK(r.achieved_sparsity == 1.0);
    CHECK_THROWS_AS((void)sparsity::binarize_to_target(la, c, 1.0), ConfigError);
}

TEST_CASE("controller closes the loop on gate parameters alone")
{
    auto r = testing::run_closed_loop(testing::toy_config(), 0.95, 4000, 3);
    CHECK(std::abs(r.final_sparsity - 0.95) <= 0.02);
}

}
