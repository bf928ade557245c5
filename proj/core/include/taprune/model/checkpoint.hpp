#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "taprune/model/gate_set.hpp"
#include "taprune/model/transformer.hpp"

namespace taprune::model {

inline constexpr int checkpoint_format_version = 1;

/// Everything needed to rebuild a trained model: weights, task heads and any
/// number of named gate vectors (binary masks, log-alphas).
struct Checkpoint {
    GatedTransformer model;
    std::vector<TaskHead> heads;
    std::vector<std::pair<std::string, GateValues>> gates;

    [[nodiscard]] const TaskHead* find_head(const std::string& task_id) const;
    [[nodiscard]] const GateValues* find_gates(const std::string& name) const;
};

// Writes <dir>/manifest.json and <dir>/tensors.bin, creating dir if needed.
// The manifest holds the model config, head and gate metadata and, per tensor,
// its name, shape and element offset into tensors.bin (little-endian float64).
void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& checkpoint);

// Throws FormatError on a missing file, unknown format version, or any
// disagreement between the manifest and the tensor blob.
Checkpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace taprune::model
