#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "taprune/data/dataset.hpp"
#include "taprune/model/gate_set.hpp"
#include "taprune/model/transformer.hpp"
#include "taprune/pipeline/schedule.hpp"
#include "taprune/random.hpp"

namespace taprune::pipeline {

struct TrainingConfig {
    double model_lr = 1e-4;
    double structure_lr = 0.1;
    std::optional<double> finetune_lr;    // defaults to model_lr
    std::optional<double> multiplier_lr;  // defaults to structure_lr
    std::size_t batch_size = 32;
    double warmup_fraction = 0.2;
    bool freeze_embeddings = true;
    // Stop finetuning after this many epochs without a dev improvement; 0
    // runs every epoch. The best dev checkpoint is restored either way.
    std::size_t patience = 0;

    void validate() const;
    [[nodiscard]] double effective_finetune_lr() const { return finetune_lr.value_or(model_lr); }
    [[nodiscard]] double effective_multiplier_lr() const { return multiplier_lr.value_or(structure_lr); }
};

struct StageCounters {
    std::size_t steps = 0;
    std::size_t target_batches = 0;
    std::size_t auxiliary_batches = 0;

    [[nodiscard]] std::size_t batches(transfer::TaskRole role) const
    {
        return role == transfer::TaskRole::target ? target_batches : auxiliary_batches;
    }
};

/// Output of the pruning stage: shared weights, one head per task and the
/// binary mask each task is served with.
struct PrunedModel {
    model::GatedTransformer model;
    model::TaskHead target_head;
    model::TaskHead auxiliary_head;
    model::GateValues target_mask;
    model::GateValues auxiliary_mask;
    // Resolved log-alphas a task's mask was binarized from (copied from the
    // other task when the task did not take part in pruning).
    std::vector<double> target_log_alpha;
    std::vector<double> auxiliary_log_alpha;
    double target_expected_sparsity = 0.0;  // before binarization
    double auxiliary_expected_sparsity = 0.0;
    double target_achieved_sparsity = 0.0;  // of the binary mask
    double auxiliary_achieved_sparsity = 0.0;
    std::size_t gate_vectors = 0;           // structural parameter tensors trained
    std::vector<std::string> warnings;
    StageCounters counters;

    [[nodiscard]] const model::GateValues& mask(transfer::TaskRole role) const;
    [[nodiscard]] const model::TaskHead& head(transfer::TaskRole role) const;
    model::TaskHead& head(transfer::TaskRole role);
    // Deep copy (tensors are otherwise shared between copies).
    [[nodiscard]] PrunedModel clone() const;
};

// Runs spec.prune_steps joint steps of weight + structure learning on the
// tasks in spec.prune_tasks, then binarizes to spec.target_sparsity.
// Throws NumericError if the loss or a gradient becomes non-finite.
PrunedModel prune_stage(const model::GatedTransformer& pretrained, const data::TaskPair& tasks,
                        const ScheduleSpec& spec, const TrainingConfig& config, std::uint64_t seed);

struct FinetuneResult {
    std::size_t epochs_run = 0;
    std::size_t best_epoch = 0;  // 0: the state before finetuning
    double best_dev_score = 0.0;
    std::vector<double> dev_history;  // entry 0 is the pre-finetuning score
    StageCounters counters;
};

// Trains weights and heads of spec.finetune_tasks under the frozen masks for
// spec.finetune_epochs epochs (an epoch is one pass over the primary task's
// train split; the primary task is T when it takes part). Restores the
// weights that scored best on the primary task's dev split.
FinetuneResult finetune_stage(PrunedModel& pruned, const data::TaskPair& tasks, const ScheduleSpec& spec,
                              const TrainingConfig& config, std::uint64_t seed);

// Task metric of `role` on `split`, computed through the compacted model.
double evaluate(const PrunedModel& pruned, transfer::TaskRole role, const data::Dataset& split);

struct RunResult {
    PrunedModel pruned;
    FinetuneResult finetune;
    double target_dev = 0.0;
    double target_test = 0.0;
    std::optional<double> auxiliary_test;  // when A was finetuned
};

RunResult run_schedule(const model::GatedTransformer& pretrained, const data::TaskPair& tasks,
                       const ScheduleSpec& spec, const TrainingConfig& config, std::uint64_t seed);
// Finetunes and evaluates a copy of an already pruned model.
RunResult run_schedule(const PrunedModel& pruned, const data::TaskPair& tasks, const ScheduleSpec& spec,
                       const TrainingConfig& config, std::uint64_t seed);

enum class AblationMode { weights_only, masks_only, both };

std::string to_string(AblationMode mode);
AblationMode parse_ablation_mode(const std::string& text);

struct AblationResult {
    AblationMode mode = AblationMode::both;
    model::GateValues mask;
    PrunedModel pruned;  // final weights and masks
    double target_dev = 0.0;
    double target_test = 0.0;
    FinetuneResult finetune;
};

// Mask with uniformly random unit ranks, binarized to the parameter budget.
model::GateValues random_mask(const model::ModelConfig& config, double target, Rng& rng);

// Transfers A's weights, A's mask, or both to T and finetunes on T alone.
// `pruned_on_auxiliary` is the result of a Prune(A) stage; it is computed
// when absent. spec supplies sparsity, step and epoch counts.
AblationResult run_ablation(AblationMode mode, const model::GatedTransformer& pretrained,
                            const data::TaskPair& tasks, const ScheduleSpec& spec, const TrainingConfig& config,
                            std::uint64_t seed, const PrunedModel* pruned_on_auxiliary = nullptr);

}  // namespace taprune::pipeline
