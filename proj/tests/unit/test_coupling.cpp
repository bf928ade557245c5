#include <algorithm>

#include "doctest.h"
#include "fixtures.hpp"
#include "gradcheck.hpp"
#include "taprune/error.hpp"
#include "taprune/transfer/coupling.hpp"

using namespace taprune;
using transfer::CouplingKind;
using transfer::TaskRole;

namespace {

bool all_zero(std::span<const double> v)
{
    return std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; });
}

bool any_nonzero(const ad::Tensor& t) { return t.has_grad() && !all_zero(t.grad()); }

// Task loss of a role through its resolved gates; depends on every gate.
ad::Tensor role_loss(const transfer::CoupledGateParams& p, TaskRole role, const ad::Tensor& weights)
{
    return ad::sum(ad::mul(gates::prob_nonzero(transfer::resolve_task_gates(p, role)), weights));
}

}  // namespace

TEST_SUITE("coupling") {

TEST_CASE("zero offsets reduce delta to a single mask")
{
    Rng a(3);
    Rng b(3);
    auto delta = transfer::CoupledGateParams::create({CouplingKind::delta, 1e-2}, 12, a);
    auto single = transfer::CoupledGateParams::create({CouplingKind::single_mask, 1e-2}, 12, b);
    for (auto role : {TaskRole::target, TaskRole::auxiliary}) {
        auto x = transfer::resolve_task_gates(delta, role);
        auto y = transfer::resolve_task_gates(single, role);
        CHECK(std::equal(x.data().begin(), x.data().end(), y.data().begin()));
    }
}

TEST_CASE("delta addends live in log-alpha space")
{
    Rng rng(1);
    auto p = transfer::CoupledGateParams::create({CouplingKind::delta, 1e-2}, 4, rng);
    for (auto& v : p.base().mutable_data()) v = 0.0;
    for (auto& v : p.delta(TaskRole::target).mutable_data()) v = 2.0;
    const auto t = transfer::resolve_task_gates(p, TaskRole::target);
    const auto a = transfer::resolve_task_gates(p, TaskRole::auxiliary);
    for (double v : t.data()) CHECK(v == 2.0);
    for (double v : a.data()) CHECK(v == 0.0);
}

TEST_CASE("strategy-specific accessors are rejected elsewhere")
{
    Rng rng(1);
    auto single = transfer::CoupledGateParams::create({CouplingKind::single_mask, 1e-2}, 4, rng);
    CHECK_THROWS_AS((void)single.delta(TaskRole::target), ConfigError);
    CHECK_THROWS_AS((void)single.independent(TaskRole::target), ConfigError);
    CHECK(single.parameters().size() == 1);
    auto multi = transfer::CoupledGateParams::create({CouplingKind::multi_mask, 1e-2}, 4, rng);
    CHECK_THROWS_AS((void)multi.base(), ConfigError);
    CHECK(multi.parameters().size() == 2);
    CHECK_THROWS_AS(transfer::CouplingStrategy({CouplingKind::delta, -1.0}).validate(), ConfigError);
    CHECK_THROWS_AS(transfer::parse_coupling_kind("shared"), ConfigError);
    CHECK(transfer::parse_coupling_kind("multi_mask") == CouplingKind::multi_mask);
    CHECK(transfer::parse_task_role("A") == TaskRole::auxiliary);
}

TEST_CASE("multi-mask gradients stay task-local")
{
    Rng rng(2);
    auto p = transfer::CoupledGateParams::create({CouplingKind::multi_mask, 1e-2}, 10, rng);
    auto w = testing::random_tensor({10}, rng, 0.5, 1.5, false);
    role_loss(p, TaskRole::auxiliary, w).backward();
    const auto& t = p.independent(TaskRole::target);
    CHECK((!t.has_grad() || all_zero(t.grad())));
    CHECK(any_nonzero(p.independent(TaskRole::auxiliary)));
}

TEST_CASE("delta gradients reach the shared base from either task")
{
    Rng rng(3);
    auto w = testing::random_tensor({10}, rng, 0.5, 1.5, false);
    for (auto role : {TaskRole::target, TaskRole::auxiliary}) {
        auto p = transfer::CoupledGateParams::create({CouplingKind::delta, 1e-2}, 10, rng);
        role_loss(p, role, w).backward();
        CHECK(any_nonzero(p.base()));
        CHECK(any_nonzero(p.delta(role)));
        const auto other = role == TaskRole::target ? TaskRole::auxiliary : TaskRole::target;
        CHECK((!p.delta(other).has_grad() || all_zero(p.delta(other).grad())));
    }
}

TEST_CASE("delta regularizer examples")
{
    Rng rng(4);
    auto p = transfer::CoupledGateParams::create({CouplingKind::delta, 1e-2}, 4, rng);
    CHECK(transfer::delta_regularizer(p, 1e-2).item() == 0.0);
    p.delta(TaskRole::target).mutable_data()[0] = 2.0;  // squared norm 4
    CHECK(transfer::delta_regularizer(p, 1e-2).item() == doctest::Approx(0.04).epsilon(1e-14));

    for (auto& v : p.delta(TaskRole::auxiliary).mutable_data()) v = rng.normal(0, 1);
    auto reg = transfer::delta_regularizer(p, 0.3);
    reg.backward();
    for (auto role : {TaskRole::target, TaskRole::auxiliary}) {
        const auto& d = p.delta(role);
        for (std::size_t i = 0; i < d.numel(); ++i) {
            CHECK(d.grad()[i] == doctest::Approx(2 * 0.3 * d.data()[i]).epsilon(1e-14));
        }
    }
    for (const auto& c : testing::composite_gradient_cases()) {
        if (c.name != "delta_regularizer") continue;
        for (int rep = 0; rep < 20; ++rep) CHECK(c.run(rng) < 1e-4);
    }
    auto single = transfer::CoupledGateParams::create({CouplingKind::single_mask, 1e-2}, 4, rng);
    CHECK(transfer::delta_regularizer(single, 1.0).item() == 0.0);
}

TEST_CASE("multitask loss examples")
{
    auto s = [](double v) { return ad::Tensor::scalar(v); };
    auto zero = s(0.0);
    CHECK(transfer::multitask_loss(s(0.5), s(0.3), {1, 1}, zero, zero).item() == doctest::Approx(0.8));
    CHECK(transfer::multitask_loss(s(0.5), s(0.3), {2, 1}, zero, zero).item() == doctest::Approx(1.3));
    CHECK(transfer::multitask_loss(s(0.5), std::nullopt, {2, 1}, s(0.25), zero).item() == doctest::Approx(1.25));
    CHECK_THROWS_AS((void)transfer::multitask_loss(ad::Tensor::zeros({2}), std::nullopt, {}, zero, zero), ShapeError);
}

TEST_CASE("multitask loss is linear in each task loss")
{
    auto lt = ad::Tensor::scalar(0.7, true);
    auto la = ad::Tensor::scalar(1.1, true);
    transfer::multitask_loss(lt, la, {2.0, 1.0}, ad::Tensor::scalar(0.1), ad::Tensor::scalar(0.2)).backward();
    CHECK(lt.grad()[0] == 2.0);
    CHECK(la.grad()[0] == 1.0);
}

}
