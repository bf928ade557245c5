#include "taprune/workbench/matrix.hpp"

#include <atomic>
#include <fstream>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "taprune/error.hpp"

namespace taprune::workbench {

namespace {

using nlohmann::ordered_json;

template <typename T>
std::vector<std::optional<T>> axis(const std::vector<T>& values)
{
    if (values.empty()) return {std::nullopt};
    return {values.begin(), values.end()};
}

struct Job {
    std::size_t config = 0;
    std::uint64_t seed = 0;
};

}  // namespace

std::vector<ExperimentConfig> MatrixGrid::expand() const
{
    std::vector<std::optional<std::string>> runs;
    for (const auto& s : schedules) runs.emplace_back(s);
    if (schedules.empty() && ablations.empty()) runs.emplace_back(std::nullopt);
    std::vector<std::optional<pipeline::AblationMode>> modes(runs.size(), std::nullopt);
    for (auto m : ablations) {
        runs.emplace_back(std::nullopt);
        modes.emplace_back(m);
    }

    std::vector<ExperimentConfig> out;
    for (std::size_t r = 0; r < runs.size(); ++r) {
        for (const auto& coupling : axis(couplings)) {
            for (const auto& w : axis(weights)) {
                for (const auto& mlr : axis(model_lrs)) {
                    for (const auto& slr : axis(structure_lrs)) {
                        for (const auto& t : axis(sparsities)) {
                            for (const auto& cap : axis(target_caps)) {
                                ExperimentConfig c = base;
                                if (runs[r]) c.schedule = pipeline::ScheduleSpec::parse(*runs[r], c.schedule);
                                c.ablation = modes[r];
                                if (coupling) c.schedule.coupling.kind = *coupling;
                                if (w) c.schedule.weights = *w;
                                if (mlr) c.training.model_lr = *mlr;
                                if (slr) c.training.structure_lr = *slr;
                                if (t) c.schedule.target_sparsity = *t;
                                if (cap) c.data.target_cap = *cap;
                                if (!seeds.empty()) c.schedule.seeds = seeds;
                                out.push_back(std::move(c));
                            }
                        }
                    }
                }
            }
        }
    }
    return out;
}

std::size_t MatrixGrid::run_count() const
{
    std::size_t n = 0;
    for (const auto& c : expand()) n += c.schedule.seeds.size();
    return n;
}

MatrixGrid parse_matrix_grid(const std::string& json_text, const std::filesystem::path& base_dir)
{
    ordered_json j;
    try {
        j = ordered_json::parse(json_text);
    } catch (const ordered_json::exception& e) {
        throw ConfigError("matrix grid is not valid JSON: " + std::string(e.what()));
    }
    if (!j.is_object()) throw ConfigError("matrix grid must be a JSON object");
    for (const auto& [k, _] : j.items()) {
        static const char* known[] = {"base",        "base_config", "schedules",     "ablations",
                                      "couplings",   "weights",     "model_lrs",     "structure_lrs",
                                      "sparsities",  "target_caps", "seeds"};
        if (std::find(std::begin(known), std::end(known), k) == std::end(known)) {
            throw ConfigError("unknown matrix key '" + k + "'");
        }
    }
    try {
        MatrixGrid g;
        if (j.contains("base") && j.contains("base_config")) throw ConfigError("give either base or base_config");
        if (j.contains("base")) {
            g.base = parse_experiment_config(j.at("base").dump());
        } else if (j.contains("base_config")) {
            std::filesystem::path p = j.at("base_config").get<std::string>();
            if (p.is_relative()) p = base_dir / p;
            g.base = load_experiment_config(p);
        } else {
            throw ConfigError("matrix grid needs base or base_config");
        }
        if (j.contains("schedules")) g.schedules = j.at("schedules").get<std::vector<std::string>>();
        if (j.contains("ablations")) {
            for (const auto& m : j.at("ablations")) g.ablations.push_back(pipeline::parse_ablation_mode(m.get<std::string>()));
        }
        if (j.contains("couplings")) {
            for (const auto& c : j.at("couplings")) g.couplings.push_back(transfer::parse_coupling_kind(c.get<std::string>()));
        }
        if (j.contains("weights")) {
            for (const auto& w : j.at("weights")) {
                const auto v = w.get<std::vector<double>>();
                if (v.size() != 2) throw ConfigError("weights entries are [w_T, w_A] pairs");
                g.weights.push_back({v[0], v[1]});
            }
        }
        if (j.contains("model_lrs")) g.model_lrs = j.at("model_lrs").get<std::vector<double>>();
        if (j.contains("structure_lrs")) g.structure_lrs = j.at("structure_lrs").get<std::vector<double>>();
        if (j.contains("sparsities")) g.sparsities = j.at("sparsities").get<std::vector<double>>();
        if (j.contains("target_caps")) {
            for (const auto& c : j.at("target_caps")) {
                if (c.is_number_float()) {
                    g.target_caps.emplace_back(c.get<double>());
                } else if (c.is_number_unsigned()) {
                    g.target_caps.emplace_back(c.get<std::size_t>());
                } else {
                    throw ConfigError("target_caps entries are counts or fractions");
                }
            }
        }
        if (j.contains("seeds")) g.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
        for (const auto& c : g.expand()) c.validate();
        return g;
    } catch (const ordered_json::exception& e) {
        throw ConfigError("matrix grid: " + std::string(e.what()));
    }
}

MatrixGrid load_matrix_grid(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open matrix grid " + path.string());
    std::ostringstream s;
    s << in.rdbuf();
    return parse_matrix_grid(s.str(), path.parent_path());
}

MatrixResult run_matrix(const MatrixGrid& grid, RecordSink& sink, RunCache& cache, const MatrixOptions& options)
{
    const auto configs = grid.expand();
    std::vector<Job> jobs;
    for (std::size_t c = 0; c < configs.size(); ++c) {
        configs[c].validate();
        for (auto seed : configs[c].schedule.seeds) jobs.push_back({c, seed});
    }
    if (jobs.empty()) throw ConfigError("matrix grid is empty");

    MatrixResult result;
    result.records.resize(jobs.size());
    std::vector<char> reused(jobs.size(), 0);
    std::atomic<std::size_t> next{0};
    std::mutex callback_mutex;
    std::exception_ptr config_error;

    auto worker = [&] {
        while (true) {
            const std::size_t i = next.fetch_add(1);
            if (i >= jobs.size()) return;
            const auto& job = jobs[i];
            const auto& config = configs[job.config];
            if (options.resume) {
                if (auto prior = sink.find_success(config_hash(config, job.seed))) {
                    result.records[i] = std::move(*prior);
                    reused[i] = 1;
                    if (options.on_record) {
                        std::lock_guard lock(callback_mutex);
                        options.on_record(result.records[i], true);
                    }
                    continue;
                }
            }
            try {
                result.records[i] = run_experiment(config, job.seed, cache);
            } catch (...) {
                std::lock_guard lock(callback_mutex);
                if (!config_error) config_error = std::current_exception();
                next = jobs.size();
                return;
            }
            sink.append(result.records[i]);
            if (options.on_record) {
                std::lock_guard lock(callback_mutex);
                options.on_record(result.records[i], false);
            }
        }
    };

    const std::size_t n_threads = std::max<std::size_t>(1, std::min(options.jobs, jobs.size()));
    if (n_threads == 1) {
        worker();
    } else {
        std::vector<std::jthread> threads;
        for (std::size_t t = 0; t < n_threads; ++t) threads.emplace_back(worker);
    }
    if (config_error) std::rethrow_exception(config_error);

    for (std::size_t i = 0; i < jobs.size(); ++i) {
        result.reused += reused[i];
        if (!result.records[i].ok()) ++result.failed;
    }
    return result;
}

}  // namespace taprune::workbench
