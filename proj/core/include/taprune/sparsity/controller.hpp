#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>

#include "taprune/autodiff/tensor.hpp"
#include "taprune/gates/hard_concrete.hpp"
#include "taprune/model/config.hpp"
#include "taprune/model/gate_set.hpp"

namespace taprune::sparsity {

/// Target fraction of removed prunable weights plus the Lagrange multipliers
/// that enforce it.
struct SparsityTarget {
    double target = 0.0;
    double lambda1 = 0.0;
    double lambda2 = 0.0;
    double multiplier_lr = 0.1;

    void validate() const;
};

// Parameters governed by gates with every gate open: attention and FFN
// weights and biases plus the layernorm in front of each sublayer. Embeddings,
// the final layernorm and task heads are excluded.
std::size_t prunable_parameter_count(const model::ModelConfig& config);

// Parameter cost of structural units given `retained_hidden` residual columns.
struct UnitCosts {
    std::size_t head;          // q/k/v/o slices of one head plus its q/k/v biases
    std::size_t fc_unit;       // one column of w1, its bias, one row of w2
    std::size_t block_bias;    // output bias of a sublayer (bo or b2)
    std::size_t block_norm;    // layernorm in front of a sublayer with live units

    static UnitCosts of(const model::ModelConfig& config, std::size_t retained_hidden);
};

// Expected retained prunable parameters for open probabilities `probs`, where
// the hidden-column probabilities enter through their sum. For binary input
// this is the exact parameter count of the compacted model.
ad::Tensor expected_retained(const model::GateSet& probs, const model::ModelConfig& config);
ad::Tensor expected_sparsity(const model::GateSet& probs, const model::ModelConfig& config);
double expected_sparsity(const model::GateValues& probs, const model::ModelConfig& config);

// lambda1 * (s_hat - t) + lambda2 * (s_hat - t)^2
ad::Tensor lagrangian_penalty(const ad::Tensor& s_hat, const SparsityTarget& target);
double lagrangian_penalty(double s_hat, const SparsityTarget& target);

// Gradient ascent on the multipliers for the penalty above.
void update_multipliers(SparsityTarget& target, double s_hat);

// Linear ramp 0 -> target over the first warmup_fraction of total_steps.
double warmup_target(double target, std::size_t step, std::size_t total_steps, double warmup_fraction);

struct BinarizeResult {
    model::GateValues mask;
    std::size_t retained_parameters = 0;
    std::size_t budget = 0;
    double achieved_sparsity = 1.0;
    std::optional<std::string> warning;  // set when not a single unit fits
};

// Ranks heads and fc units by their (coarse * fine) score and walks down the
// ranking, keeping every unit that still fits in the (1 - t) * M budget. Hidden columns are
// binarized first: those scoring >= 0.5 are kept, plus the next best while the
// budget could not otherwise be filled. Ties are broken by layer, then heads
// before fc units, then unit index.
BinarizeResult binarize_scores(const model::GateValues& scores, const model::ModelConfig& config,
                               double target);

// binarize_scores over the deterministic test-time gate values.
BinarizeResult binarize_to_target(std::span<const double> log_alpha, const model::ModelConfig& config,
                                  double target, const gates::HardConcreteConfig& hc = {});

/// Owns the multipliers and the warmup schedule for one gate set during a
/// pruning run.
class SparsityController {
public:
    SparsityController(const model::ModelConfig& config, double target, double multiplier_lr,
                       std::size_t total_steps, double warmup_fraction = 0.2);

    [[nodiscard]] double current_target() const;
    // s_hat is the differentiable expected sparsity for this step.
    [[nodiscard]] ad::Tensor penalty(const ad::Tensor& s_hat) const;
    // Ascent on the multipliers and advance to the next step.
    void update(double s_hat);

    [[nodiscard]] const SparsityTarget& state() const { return state_; }
    [[nodiscard]] double final_target() const { return final_target_; }
    [[nodiscard]] std::size_t step() const { return step_; }

private:
    SparsityTarget state_;
    double final_target_;
    std::size_t total_steps_;
    double warmup_fraction_;
    std::size_t step_ = 0;
};

}  // namespace taprune::sparsity
