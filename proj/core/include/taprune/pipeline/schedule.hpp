#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "taprune/transfer/coupling.hpp"

namespace taprune::pipeline {

struct TaskSet {
    bool target = false;
    bool auxiliary = false;

    [[nodiscard]] bool contains(transfer::TaskRole role) const
    {
        return role == transfer::TaskRole::target ? target : auxiliary;
    }
    [[nodiscard]] bool empty() const { return !target && !auxiliary; }
    [[nodiscard]] bool both() const { return target && auxiliary; }

    // "A", "T" or "A,T".
    [[nodiscard]] std::string to_string() const;
    static TaskSet parse(const std::string& text);

    friend bool operator==(const TaskSet&, const TaskSet&) = default;
};

/// Which tasks take part in pruning and in finetuning, and how.
struct ScheduleSpec {
    TaskSet prune_tasks;
    TaskSet finetune_tasks;
    transfer::CouplingStrategy coupling;
    transfer::TaskWeights weights;
    double target_sparsity = 0.95;
    std::size_t prune_steps = 10000;
    std::size_t finetune_epochs = 20;
    std::vector<std::uint64_t> seeds{0};

    void validate() const;
    // e.g. "Prune(A,T)->FT(T)"
    [[nodiscard]] std::string label() const;
    // Parses "A,T->T" style shorthand into the task sets of `base`.
    static ScheduleSpec parse(const std::string& text, const ScheduleSpec& base);
    static ScheduleSpec parse(const std::string& text) { return parse(text, ScheduleSpec{}); }
};

// Prune(A)->FT(T), Prune(T)->FT(A,T), Prune(A,T)->FT(T), Prune(A,T)->FT(A,T).
std::vector<ScheduleSpec> transfer_schedules(const ScheduleSpec& base);
// Prune(T)->FT(T).
ScheduleSpec no_transfer_baseline(const ScheduleSpec& base);

}  // namespace taprune::pipeline
