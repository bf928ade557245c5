#pragma once

#include <optional>
#include <string>
#include <vector>

#include "taprune/autodiff/tensor.hpp"
#include "taprune/gates/hard_concrete.hpp"
#include "taprune/random.hpp"

namespace taprune::transfer {

enum class TaskRole { target, auxiliary };

std::string to_string(TaskRole role);
TaskRole parse_task_role(const std::string& text);  // "T" / "A" (or full names)

enum class CouplingKind { single_mask, multi_mask, delta };

std::string to_string(CouplingKind kind);
CouplingKind parse_coupling_kind(const std::string& text);

struct CouplingStrategy {
    CouplingKind kind = CouplingKind::delta;
    double delta_reg_weight = 1e-2;

    void validate() const;
};

struct TaskWeights {
    double target = 1.0;
    double auxiliary = 1.0;

    void validate() const;
};

/// Structural parameters shared between the target and auxiliary task.
///
/// single_mask: one base vector used by both tasks.
/// multi_mask:  two independent vectors, no structural transfer.
/// delta:       base + per-task offsets, added in log-alpha space.
class CoupledGateParams {
public:
    static CoupledGateParams create(const CouplingStrategy& strategy, std::size_t count, Rng& rng,
                                    const gates::HardConcreteConfig& hc = {});

    [[nodiscard]] const CouplingStrategy& strategy() const { return strategy_; }
    [[nodiscard]] const gates::HardConcreteConfig& config() const { return hc_; }
    [[nodiscard]] std::size_t size() const;

    // Every leaf tensor an optimizer should update.
    [[nodiscard]] std::vector<ad::Tensor> parameters() const;

    // Shared base (single_mask, delta). Throws ConfigError under multi_mask.
    [[nodiscard]] const ad::Tensor& base() const;
    // Task offset (delta only). Throws ConfigError otherwise.
    [[nodiscard]] const ad::Tensor& delta(TaskRole role) const;
    // Independent per-task vector (multi_mask only).
    [[nodiscard]] const ad::Tensor& independent(TaskRole role) const;

    ad::Tensor& base();
    ad::Tensor& delta(TaskRole role);
    ad::Tensor& independent(TaskRole role);

private:
    CouplingStrategy strategy_;
    gates::HardConcreteConfig hc_;
    ad::Tensor base_;
    ad::Tensor delta_target_, delta_auxiliary_;
    ad::Tensor target_, auxiliary_;
};

// Differentiable log-alpha vector governing `role`'s structure.
ad::Tensor resolve_task_gates(const CoupledGateParams& coupled, TaskRole role);

// w * (||delta_T||^2 + ||delta_A||^2); zero scalar for the other strategies.
ad::Tensor delta_regularizer(const CoupledGateParams& coupled, double weight);

// w_T * loss_T + w_A * loss_A + penalty + reg; absent task losses drop out.
ad::Tensor multitask_loss(const std::optional<ad::Tensor>& loss_target,
                          const std::optional<ad::Tensor>& loss_auxiliary, const TaskWeights& weights,
                          const ad::Tensor& penalty, const ad::Tensor& reg);

}  // namespace taprune::transfer
