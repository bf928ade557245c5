#pragma once

#include <vector>

#include "taprune/workbench/matrix.hpp"

namespace taprune::workbench {

struct SweepPoint {
    double fraction = 1.0;
    double sparsity = 0.0;
    std::vector<double> target_test;  // one per seed
    [[nodiscard]] double mean() const;
};

struct SweepResult {
    std::vector<SweepPoint> points;  // fraction-major, sparsities in the given order
    std::vector<ExperimentRecord> records;

    [[nodiscard]] const SweepPoint& at(double fraction, double sparsity) const;
    // mean(at(fraction, low)) - mean(at(fraction, high))
    [[nodiscard]] double drop(double fraction, double low, double high) const;
    [[nodiscard]] std::string to_csv() const;
};

// No-transfer pruning (Prune(T)->FT(T)) of `base` for every train fraction of
// the target task and every sparsity. Fractions must lie in (0, 1].
SweepResult data_fraction_sweep(const ExperimentConfig& base, const std::vector<double>& fractions,
                                const std::vector<double>& sparsities, RecordSink& sink, RunCache& cache,
                                const MatrixOptions& options = {});

}  // namespace taprune::workbench
