#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "taprune/data/dataset.hpp"
#include "taprune/pipeline/compact.hpp"

namespace taprune::workbench {

struct BenchmarkOptions {
    std::size_t batch_size = 128;
    std::size_t passes = 5;  // timed full-dataset passes, at least 5
    std::size_t warmup = 1;  // untimed passes first, at least 1

    void validate() const;
};

struct LatencyReport {
    std::vector<double> pass_ms;
    double median_ms = 0.0;
    double p95_ms = 0.0;  // nearest-rank
    std::size_t examples = 0;
    std::size_t prunable_parameters = 0;
};

LatencyReport benchmark_inference(const pipeline::CompactModel& model, const model::TaskHead& head,
                                  const data::Dataset& dataset, const BenchmarkOptions& options = {});

// Loads a checkpoint directory and benchmarks it. A checkpoint with a
// "mask.target" gate vector is compacted under that mask; one without is run
// dense. The "target" head is used when present, otherwise the first head or
// a fresh binary head.
LatencyReport benchmark_checkpoint(const std::filesystem::path& dir, const data::Dataset& dataset,
                                   const BenchmarkOptions& options = {});

// reference median / candidate median.
double speedup(const LatencyReport& reference, const LatencyReport& candidate);

}  // namespace taprune::workbench
