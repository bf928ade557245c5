#include "taprune/pipeline/artifacts.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "taprune/error.hpp"
#include "taprune/gates/hard_concrete.hpp"
#include "taprune/model/checkpoint.hpp"
#include "taprune/sparsity/controller.hpp"

namespace taprune::pipeline {

namespace {


double expected_from_log_alpha(const std::vector<double>& log_alpha, const model::ModelConfig& config)
{
    std::vector<double> p(log_alpha.size());
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = gates::prob_nonzero(log_alpha[i]);
    return sparsity::expected_sparsity(model::GateValues(model::GateLayout::of(config), std::move(p)), config);
}

double achieved(const model::GateValues& mask, const model::ModelConfig& config)
{
    return sparsity::expected_sparsity(mask, config);
}

}  // namespace

void save_pruned_model(const std::filesystem::path& dir, const PrunedModel& pruned, const std::string& provenance)
{
    nlohmann::json sidecar;
    try {
        sidecar = nlohmann::json::parse(provenance);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("provenance is not valid JSON: " + std::string(e.what()));
    }
    if (!sidecar.is_object()) throw ConfigError("provenance must be a JSON object");

    const auto layout = model::GateLayout::of(pruned.model.config());
    model::Checkpoint ck;
    ck.model = pruned.model.clone();
    ck.heads = {pruned.target_head.clone(), pruned.auxiliary_head.clone()};
    ck.heads[0].task_id = "target";
    ck.heads[1].task_id = "auxiliary";
    ck.gates.emplace_back("mask.target", pruned.target_mask);
    ck.gates.emplace_back("mask.auxiliary", pruned.auxiliary_mask);
    ck.gates.emplace_back("log_alpha.target", model::GateValues(layout, pruned.target_log_alpha));
    ck.gates.emplace_back("log_alpha.auxiliary", model::GateValues(layout, pruned.auxiliary_log_alpha));
    model::save_checkpoint(dir, ck);

    std::ofstream out(dir / "provenance.json", std::ios::trunc);
    out << sidecar.dump(2) << '\n';
    if (!out) throw Error("failed to write " + (dir / "provenance.json").string());
}

PrunedModel load_pruned_model(const std::filesystem::path& dir)
{
    auto ck = model::load_checkpoint(dir);
    auto need_head = [&](const char* name) {
        const auto* h = ck.find_head(name);
        if (h == nullptr) throw FormatError(dir.string() + ": checkpoint lacks head '" + name + "'");
        return h->clone();
    };
    auto need_gates = [&](const char* name) -> const model::GateValues& {
        const auto* g = ck.find_gates(name);
        if (g == nullptr) throw FormatError(dir.string() + ": checkpoint lacks gate vector '" + name + "'");
        return *g;
    };
    PrunedModel p;
    p.model = std::move(ck.model);
    p.target_head = need_head("target");
    p.auxiliary_head = need_head("auxiliary");
    p.target_mask = need_gates("mask.target");
    p.auxiliary_mask = need_gates("mask.auxiliary");
    const auto la_t = need_gates("log_alpha.target").values();
    const auto la_a = need_gates("log_alpha.auxiliary").values();
    p.target_log_alpha.assign(la_t.begin(), la_t.end());
    p.auxiliary_log_alpha.assign(la_a.begin(), la_a.end());
    if (!p.target_mask.is_binary() || !p.auxiliary_mask.is_binary()) {
        throw FormatError(dir.string() + ": stored masks are not binary");
    }
    const auto& mc = p.model.config();
    p.target_expected_sparsity = expected_from_log_alpha(p.target_log_alpha, mc);
    p.auxiliary_expected_sparsity = expected_from_log_alpha(p.auxiliary_log_alpha, mc);
    p.target_achieved_sparsity = achieved(p.target_mask, mc);
    p.auxiliary_achieved_sparsity = achieved(p.auxiliary_mask, mc);
    return p;
}

std::string read_provenance(const std::filesystem::path& dir)
{
    std::ifstream in(dir / "provenance.json");
    if (!in) throw FormatError("cannot open " + (dir / "provenance.json").string());
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

}  // namespace taprune::pipeline
