#pragma once

#include <string>
#include <vector>

#include "taprune/model/config.hpp"
#include "taprune/model/gate_set.hpp"

namespace taprune::workbench {

struct LayerRetention {
    std::size_t layer = 0;
    double head_fraction = 0.0;  // retained heads / n_h, 0 when z_mha = 0
    double fc_fraction = 0.0;    // retained fc units / n_f, 0 when z_ffn = 0
    bool mha = false;
    bool ffn = false;
    std::size_t retained_hidden = 0;
};

struct StructureReport {
    std::vector<LayerRetention> layers;
    std::size_t retained_hidden = 0;
    double sparsity = 0.0;  // parameter sparsity of the mask

    [[nodiscard]] std::string to_csv() const;
    // {"layers": [...], "heatmap": {"rows": [...], "columns": ["heads","fc"], "values": [[...]]}, ...}
    [[nodiscard]] std::string to_json() const;
};

// Throws ConfigError for a non-binary or mismatched mask.
StructureReport structure_report(const model::GateValues& mask, const model::ModelConfig& config);

// Shannon entropy (nats) of the per-layer share of retained heads + fc units.
// An empty mask has entropy 0.
double layer_retention_entropy(const model::GateValues& mask, const model::ModelConfig& config);

}  // namespace taprune::workbench
