#pragma once

#include <filesystem>
#include <string>

#include "taprune/pipeline/training.hpp"

namespace taprune::pipeline {

// Stores a pruned model as a checkpoint with heads "target" / "auxiliary" and
// gate vectors "mask.<role>" and "log_alpha.<role>", plus <dir>/provenance.json
// holding `provenance` (must be a JSON object).
void save_pruned_model(const std::filesystem::path& dir, const PrunedModel& pruned, const std::string& provenance);

// Inverse of save_pruned_model. Sparsity fields are recomputed from the
// stored masks; counters and warnings are not persisted.
PrunedModel load_pruned_model(const std::filesystem::path& dir);

// Raw contents of <dir>/provenance.json.
std::string read_provenance(const std::filesystem::path& dir);

}  // namespace taprune::pipeline
