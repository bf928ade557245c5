#include "taprune/transfer/coupling.hpp"

#include <utility>

#include "taprune/autodiff/ops.hpp"
#include "taprune/error.hpp"

namespace taprune::transfer {

std::string to_string(TaskRole role) { return role == TaskRole::target ? "T" : "A"; }

TaskRole parse_task_role(const std::string& text)
{
    if (text == "T" || text == "target") return TaskRole::target;
    if (text == "A" || text == "auxiliary") return TaskRole::auxiliary;
    throw ConfigError("unknown task role '" + text + "' (expected T or A)");
}

std::string to_string(CouplingKind kind)
{
    switch (kind) {
    case CouplingKind::single_mask: return "single_mask";
    case CouplingKind::multi_mask: return "multi_mask";
    case CouplingKind::delta: return "delta";
    }
    return "?";
}

CouplingKind parse_coupling_kind(const std::string& text)
{
    if (text == "single_mask") return CouplingKind::single_mask;
    if (text == "multi_mask") return CouplingKind::multi_mask;
    if (text == "delta") return CouplingKind::delta;
    throw ConfigError("unknown coupling strategy '" + text + "'");
}

void CouplingStrategy::validate() const
{
    if (!(delta_reg_weight >= 0.0)) throw ConfigError("delta_reg_weight must be non-negative");
}

void TaskWeights::validate() const
{
    if (!(target > 0.0) || !(auxiliary > 0.0)) throw ConfigError("task weights must be positive");
}

CoupledGateParams CoupledGateParams::create(const CouplingStrategy& strategy, std::size_t count, Rng& rng,
                                            const gates::HardConcreteConfig& hc)
{
    strategy.validate();
    CoupledGateParams p;
    p.strategy_ = strategy;
    p.hc_ = hc;
    switch (strategy.kind) {
    case CouplingKind::single_mask:
        p.base_ = gates::GateParams::initialize(count, rng, hc).log_alpha;
        break;
    case CouplingKind::multi_mask:
        p.target_ = gates::GateParams::initialize(count, rng, hc).log_alpha;
        p.auxiliary_ = gates::GateParams::initialize(count, rng, hc).log_alpha;
        break;
    case CouplingKind::delta:
        p.base_ = gates::GateParams::initialize(count, rng, hc).log_alpha;
        p.delta_target_ = ad::Tensor::zeros({count}, true);
        p.delta_auxiliary_ = ad::Tensor::zeros({count}, true);
        break;
    }
    return p;
}

std::size_t CoupledGateParams::size() const
{
    return strategy_.kind == CouplingKind::multi_mask ? target_.numel() : base_.numel();
}

std::vector<ad::Tensor> CoupledGateParams::parameters() const
{
    switch (strategy_.kind) {
    case CouplingKind::single_mask: return {base_};
    case CouplingKind::multi_mask: return {target_, auxiliary_};
    case CouplingKind::delta: return {base_, delta_target_, delta_auxiliary_};
    }
    return {};
}

const ad::Tensor& CoupledGateParams::base() const
{
    if (strategy_.kind == CouplingKind::multi_mask) throw ConfigError("multi_mask coupling has no shared base");
    return base_;
}

const ad::Tensor& CoupledGateParams::delta(TaskRole role) const
{
    if (strategy_.kind != CouplingKind::delta) {
        throw ConfigError("task offsets exist only under delta coupling, not " + to_string(strategy_.kind));
    }
    return role == TaskRole::target ? delta_target_ : delta_auxiliary_;
}

const ad::Tensor& CoupledGateParams::independent(TaskRole role) const
{
    if (strategy_.kind != CouplingKind::multi_mask) {
        throw ConfigError("independent task parameters exist only under multi_mask coupling");
    }
    return role == TaskRole::target ? target_ : auxiliary_;
}

ad::Tensor& CoupledGateParams::base() { return const_cast<ad::Tensor&>(std::as_const(*this).base()); }

ad::Tensor& CoupledGateParams::delta(TaskRole role)
{
    return const_cast<ad::Tensor&>(std::as_const(*this).delta(role));
}

ad::Tensor& CoupledGateParams::independent(TaskRole role)
{
    return const_cast<ad::Tensor&>(std::as_const(*this).independent(role));
}

ad::Tensor resolve_task_gates(const CoupledGateParams& coupled, TaskRole role)
{
    switch (coupled.strategy().kind) {
    case CouplingKind::single_mask: return coupled.base();
    case CouplingKind::multi_mask: return coupled.independent(role);
    case CouplingKind::delta: return ad::add(coupled.base(), coupled.delta(role));
    }
    throw ConfigError("unknown coupling strategy");
}

ad::Tensor delta_regularizer(const CoupledGateParams& coupled, double weight)
{
    if (coupled.strategy().kind != CouplingKind::delta) return ad::Tensor::scalar(0.0);
    auto norms = ad::add(ad::sum(ad::square(coupled.delta(TaskRole::target))),
                         ad::sum(ad::square(coupled.delta(TaskRole::auxiliary))));
    return ad::scale(norms, weight);
}

ad::Tensor multitask_loss(const std::optional<ad::Tensor>& loss_target, const std::optional<ad::Tensor>& loss_auxiliary,
                          const TaskWeights& weights, const ad::Tensor& penalty, const ad::Tensor& reg)
{
    for (const auto* t : {&penalty, &reg}) {
        if (t->numel() != 1) throw ShapeError("multitask_loss: penalty and regularizer must be scalars");
    }
    ad::Tensor total = ad::add(penalty, reg);
    if (loss_target) {
        if (loss_target->numel() != 1) throw ShapeError("multitask_loss: target loss must be scalar");
        total = ad::add(ad::scale(*loss_target, weights.target), total);
    }
    if (loss_auxiliary) {
        if (loss_auxiliary->numel() != 1) throw ShapeError("multitask_loss: auxiliary loss must be scalar");
        total = ad::add(total, ad::scale(*loss_auxiliary, weights.auxiliary));
    }
    return total;
}

}  // namespace taprune::transfer
