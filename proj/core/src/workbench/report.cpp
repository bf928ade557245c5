#include "taprune/workbench/report.hpp"

#include <cmath>
#include <sstream>

#include <json.hpp>

#include "taprune/error.hpp"
#include "taprune/sparsity/controller.hpp"

namespace taprune::workbench {

namespace {

std::vector<double> retained_units(const model::GateValues& mask, const model::ModelConfig& c)
{
    std::vector<double> out(c.num_layers, 0.0);
    for (std::size_t i = 0; i < c.num_layers; ++i) {
        if (mask.mha(i) == 1.0) {
            for (std::size_t h = 0; h < c.num_heads; ++h) out[i] += mask.head(i, h);
        }
        if (mask.ffn(i) == 1.0) {
            for (std::size_t u = 0; u < c.ffn_dim; ++u) out[i] += mask.fc(i, u);
        }
    }
    return out;
}

}  // namespace

StructureReport structure_report(const model::GateValues& mask, const model::ModelConfig& config)
{
    if (!(mask.layout() == model::GateLayout::of(config))) throw ConfigError("mask does not match the model layout");
    if (!mask.is_binary()) throw ConfigError("structure report needs a binary mask");
    StructureReport rep;
    rep.retained_hidden = mask.retained_hidden();
    rep.sparsity = sparsity::expected_sparsity(mask, config);
    for (std::size_t i = 0; i < config.num_layers; ++i) {
        LayerRetention row;
        row.layer = i;
        row.mha = mask.mha(i) == 1.0;
        row.ffn = mask.ffn(i) == 1.0;
        double heads = 0.0;
        double fc = 0.0;
        for (std::size_t h = 0; h < config.num_heads; ++h) heads += mask.head(i, h);
        for (std::size_t u = 0; u < config.ffn_dim; ++u) fc += mask.fc(i, u);
        row.head_fraction = row.mha ? heads / static_cast<double>(config.num_heads) : 0.0;
        row.fc_fraction = row.ffn ? fc / static_cast<double>(config.ffn_dim) : 0.0;
        row.retained_hidden = (row.mha || row.ffn) ? rep.retained_hidden : 0;
        rep.layers.push_back(row);
    }
    return rep;
}

double layer_retention_entropy(const model::GateValues& mask, const model::ModelConfig& config)
{
    const auto counts = retained_units(mask, config);
    double total = 0.0;
    for (double v : counts) total += v;
    if (total == 0.0) return 0.0;
    double h = 0.0;
    for (double v : counts) {
        if (v > 0.0) h -= (v / total) * std::log(v / total);
    }
    return h;
}

std::string StructureReport::to_csv() const
{
    std::ostringstream s;
    s << "layer,head_fraction,fc_fraction,mha,ffn,retained_hidden\n";
    for (const auto& r : layers) {
        s << r.layer << ',' << r.head_fraction << ',' << r.fc_fraction << ',' << (r.mha ? 1 : 0) << ','
          << (r.ffn ? 1 : 0) << ',' << r.retained_hidden << '\n';
    }
    return s.str();
}

std::string StructureReport::to_json() const
{
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    nlohmann::ordered_json labels = nlohmann::ordered_json::array();
    nlohmann::ordered_json values = nlohmann::ordered_json::array();
    for (const auto& r : layers) {
        rows.push_back({{"layer", r.layer},
                        {"head_fraction", r.head_fraction},
                        {"fc_fraction", r.fc_fraction},
                        {"mha", r.mha},
                        {"ffn", r.ffn},
                        {"retained_hidden", r.retained_hidden}});
        labels.push_back("layer " + std::to_string(r.layer));
        values.push_back({r.head_fraction, r.fc_fraction});
    }
    nlohmann::ordered_json j{{"layers", rows},
                             {"retained_hidden", retained_hidden},
                             {"sparsity", sparsity},
                             {"heatmap", {{"rows", labels}, {"columns", {"heads", "fc"}}, {"values", values}}}};
    return j.dump(2);
}

}  // namespace taprune::workbench
