#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "taprune/workbench/experiment.hpp"

namespace taprune::workbench {

/// Cartesian grid over a base config. An empty axis keeps the base value.
/// Ablation modes are added as extra runs next to the schedules.
struct MatrixGrid {
    ExperimentConfig base;
    std::vector<std::string> schedules;  // "A,T->T" shorthand
    std::vector<pipeline::AblationMode> ablations;
    std::vector<transfer::CouplingKind> couplings;
    std::vector<transfer::TaskWeights> weights;
    std::vector<double> model_lrs;
    std::vector<double> structure_lrs;
    std::vector<double> sparsities;
    std::vector<TrainSizeCap> target_caps;
    std::vector<std::uint64_t> seeds;  // empty: base.schedule.seeds

    // One config per grid point, each carrying every seed.
    [[nodiscard]] std::vector<ExperimentConfig> expand() const;
    [[nodiscard]] std::size_t run_count() const;
};

// {"base": {...} | "base_config": "file.json", "schedules": [...], "ablations": [...],
//  "couplings": [...], "weights": [[w_T, w_A], ...], "model_lrs": [...],
//  "structure_lrs": [...], "sparsities": [...], "target_caps": [...], "seeds": [...]}
// A relative base_config resolves against `base_dir`. Every grid point is
// validated; ConfigError on the first bad one.
MatrixGrid parse_matrix_grid(const std::string& json_text, const std::filesystem::path& base_dir = {});
MatrixGrid load_matrix_grid(const std::filesystem::path& path);

struct MatrixOptions {
    std::size_t jobs = 1;
    bool resume = true;  // reuse successful records already in the sink
    std::function<void(const ExperimentRecord&, bool reused)> on_record;
};

struct MatrixResult {
    std::vector<ExperimentRecord> records;  // grid order, seeds innermost
    std::size_t reused = 0;
    std::size_t failed = 0;
};

// Throws ConfigError for an empty grid or an invalid point before any run
// starts. Failed runs are recorded and the matrix continues.
MatrixResult run_matrix(const MatrixGrid& grid, RecordSink& sink, RunCache& cache, const MatrixOptions& options = {});

}  // namespace taprune::workbench
