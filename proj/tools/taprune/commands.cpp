#include "commands.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "taprune/error.hpp"
#include "taprune/model/checkpoint.hpp"
#include "taprune/pipeline/artifacts.hpp"
#include "taprune/pipeline/pretrain.hpp"
#include "taprune/pipeline/training.hpp"
#include "taprune/sparsity/controller.hpp"
#include "taprune/workbench/benchmark.hpp"
#include "taprune/workbench/experiment.hpp"
#include "taprune/workbench/matrix.hpp"
#include "taprune/workbench/report.hpp"
#include "taprune/workbench/sweep.hpp"
#include "taprune/workbench/synthetic.hpp"
#include "taprune/workbench/tasks.hpp"

namespace taprune::cli {

namespace {

namespace fs = std::filesystem;
using workbench::ExperimentConfig;
using workbench::ExperimentRecord;

struct ConfigArgs {
    std::string path;
    std::vector<std::string> overrides;
};

void add_config_options(CLI::App* cmd, ConfigArgs& args, bool required = true)
{
    auto* opt = cmd->add_option("-c,--config", args.path, "Run config (JSON)");
    if (required) opt->required();
    opt->check(CLI::ExistingFile);
    cmd->add_option("--set", args.overrides, "Override a config value, e.g. training.model_lr=3e-4");
}

ExperimentConfig load_config(const ConfigArgs& args)
{
    ExperimentConfig c = args.path.empty() ? ExperimentConfig{} : workbench::load_experiment_config(args.path);
    for (const auto& o : args.overrides) workbench::apply_override(c, o);
    c.validate();
    return c;
}

void write_file(const fs::path& path, const std::string& text)
{
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    out << text;
    if (!out) throw Error("cannot write " + path.string());
}

std::string fmt(double v, int digits = 4)
{
    std::ostringstream s;
    s << std::fixed << std::setprecision(digits) << v;
    return s.str();
}

void print_record(const ExperimentRecord& r, bool reused = false)
{
    std::cout << (reused ? "[cached] " : "") << r.label << " seed=" << r.seed << " " << r.config_hash << " ";
    if (!r.ok()) {
        std::cout << "FAILED: " << r.error << '\n';
        return;
    }
    std::cout << "target_test=" << fmt(r.target_test) << " target_dev=" << fmt(r.target_dev)
              << " sparsity=" << fmt(r.achieved_sparsity);
    if (r.auxiliary_test) std::cout << " auxiliary_test=" << fmt(*r.auxiliary_test);
    std::cout << " (" << fmt(r.wall_seconds, 1) << "s)\n";
}

double mean_of(const std::vector<double>& v)
{
    return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// Mean target_test per label over successful records.
std::map<std::string, std::vector<double>> by_label(const std::vector<ExperimentRecord>& records)
{
    std::map<std::string, std::vector<double>> out;
    for (const auto& r : records) {
        if (r.ok()) out[r.label].push_back(r.target_test);
    }
    return out;
}

void check_matrix(const workbench::MatrixResult& result, double min_gain)
{
    if (result.failed > 0) throw CheckFailed{std::to_string(result.failed) + " run(s) failed"};
    const auto means = by_label(result.records);
    auto mean = [&](const std::string& label) -> std::optional<double> {
        auto it = means.find(label);
        if (it == means.end()) return std::nullopt;
        return mean_of(it->second);
    };
    const auto base = mean("Prune(T)->FT(T)");
    const auto j1 = mean("Prune(A,T)->FT(T)");
    const auto j2 = mean("Prune(A,T)->FT(A,T)");
    if (base && (j1 || j2)) {
        const double best = std::max(j1.value_or(-1.0), j2.value_or(-1.0));
        if (!(best >= *base + min_gain)) {
            throw CheckFailed{"best joint-prune schedule " + fmt(best) + " does not beat the baseline " + fmt(*base) +
                              " by " + fmt(min_gain)};
        }
        for (const auto& j : {j1, j2}) {
            if (j && !(*j > *base)) throw CheckFailed{"a joint-prune schedule does not beat the baseline"};
        }
    }
    const auto both = mean("Ablation(both)");
    const auto masks = mean("Ablation(masks_only)");
    const auto weights = mean("Ablation(weights_only)");
    if (both && masks && !(*both >= *masks)) throw CheckFailed{"ablation: both < masks_only"};
    if (both && weights && !(*both >= *weights)) throw CheckFailed{"ablation: both < weights_only"};
}

std::vector<double> parse_list(const std::string& text)
{
    std::vector<double> out;
    std::stringstream s(text);
    std::string item;
    while (std::getline(s, item, ',')) {
        try {
            out.push_back(std::stod(item));
        } catch (const std::exception&) {
            throw ConfigError("'" + item + "' is not a number");
        }
    }
    return out;
}

data::Dataset bench_split(const ExperimentConfig& c, const std::string& split)
{
    const auto pair = workbench::materialize_tasks(c, c.schedule.seeds.front());
    if (split == "train") return pair.target.train;
    if (split == "dev") return pair.target.dev;
    if (split == "test") return pair.target.test;
    throw ConfigError("split must be train, dev or test");
}

void print_latency(const std::string& name, const workbench::LatencyReport& r)
{
    std::cout << name << ": median=" << fmt(r.median_ms, 3) << "ms p95=" << fmt(r.p95_ms, 3)
              << "ms passes=" << r.pass_ms.size() << " examples=" << r.examples
              << " prunable_params=" << r.prunable_parameters << '\n';
}

}  // namespace

void register_commands(CLI::App& app, int& exit_code)
{
    // synth ------------------------------------------------------------------
    {
        auto* cmd = app.add_subcommand("synth", "Generate the synthetic task pair and export it as JSONL");
        auto args = std::make_shared<ConfigArgs>();
        auto seed = std::make_shared<std::uint64_t>(0);
        auto out = std::make_shared<std::string>();
        add_config_options(cmd, *args, false);
        cmd->add_option("--seed", *seed, "Run seed (data seed = data.seed + seed)");
        cmd->add_option("-o,--out", *out, "Output directory")->required();
        cmd->callback([=, &exit_code] {
            const auto c = load_config(*args);
            const auto pair = workbench::materialize_tasks(c, *seed);
            workbench::export_task(pair.target, fs::path(*out) / "target.jsonl");
            workbench::export_task(pair.auxiliary, fs::path(*out) / "auxiliary.jsonl");
            std::cout << "target: " << pair.target.train.size() << "/" << pair.target.dev.size() << "/"
                      << pair.target.test.size() << "  auxiliary: " << pair.auxiliary.train.size() << "/"
                      << pair.auxiliary.dev.size() << "/" << pair.auxiliary.test.size() << " (train/dev/test)\n";
            exit_code = ok;
        });
    }

    // pretrain ---------------------------------------------------------------
    {
        auto* cmd = app.add_subcommand("pretrain", "Masked-token pretraining on the synthetic corpus");
        auto args = std::make_shared<ConfigArgs>();
        auto out = std::make_shared<std::string>();
        add_config_options(cmd, *args, false);
        cmd->add_option("-o,--out", *out, "Checkpoint directory")->required();
        cmd->callback([=, &exit_code] {
            const auto c = load_config(*args);
            const auto corpus = workbench::synth_corpus(c.data.synthetic, c.pretrain.corpus_size, c.pretrain.seed);
            const auto res = pipeline::pretrain_mlm(c.model, corpus, c.pretrain.config, c.pretrain.seed);
            model::Checkpoint ck;
            ck.model = res.model.clone();
            model::save_checkpoint(*out, ck);
            std::cout << "loss " << fmt(res.first_loss) << " -> " << fmt(res.final_loss) << ", saved " << *out << '\n';
            exit_code = ok;
        });
    }

    // prune ------------------------------------------------------------------
    {
        auto* cmd = app.add_subcommand("prune", "Run the pruning stage and save the binarized model");
        auto args = std::make_shared<ConfigArgs>();
        auto seed = std::make_shared<std::uint64_t>(0);
        auto out = std::make_shared<std::string>();
        auto cache_dir = std::make_shared<std::string>();
        add_config_options(cmd, *args);
        cmd->add_option("--seed", *seed, "Run seed");
        cmd->add_option("-o,--out", *out, "Pruned-model directory")->required();
        cmd->add_option("--cache", *cache_dir, "Directory for cached pretrained checkpoints");
        cmd->callback([=, &exit_code] {
            const auto c = load_config(*args);
            workbench::RunCache cache(*cache_dir);
            const auto pair = workbench::materialize_tasks(c, *seed);
            const auto pretrained = cache.pretrained(c);
            const auto pruned = pipeline::prune_stage(*pretrained, pair, c.schedule, c.training, *seed);
            auto single = c;
            single.schedule.seeds = {*seed};
            nlohmann::ordered_json prov{{"stage", "prune"},
                                        {"label", c.schedule.label()},
                                        {"seed", *seed},
                                        {"config_hash", workbench::config_hash(c, *seed)},
                                        {"config", nlohmann::ordered_json::parse(workbench::to_json(single))}};
            pipeline::save_pruned_model(*out, pruned, prov.dump());
            std::cout << c.schedule.label() << " seed=" << *seed
                      << " expected_sparsity=" << fmt(pruned.target_expected_sparsity)
                      << " achieved_sparsity=" << fmt(pruned.target_achieved_sparsity) << '\n';
            for (const auto& w : pruned.warnings) std::cerr << "warning: " << w << '\n';
            exit_code = ok;
        });
    }

    // finetune ---------------------------------------------------------------
    {
        auto* cmd = app.add_subcommand("finetune", "Finetune a pruned model under its frozen masks");
        auto args = std::make_shared<ConfigArgs>();
        auto seed = std::make_shared<std::uint64_t>(0);
        auto in = std::make_shared<std::string>();
        auto out = std::make_shared<std::string>();
        add_config_options(cmd, *args);
        cmd->add_option("--seed", *seed, "Run seed");
        cmd->add_option("--checkpoint", *in, "Pruned-model directory")->required()->check(CLI::ExistingDirectory);
        cmd->add_option("-o,--out", *out, "Output directory for the finetuned model");
        cmd->callback([=, &exit_code] {
            const auto c = load_config(*args);
            const auto pair = workbench::materialize_tasks(c, *seed);
            const auto pruned = pipeline::load_pruned_model(*in);
            const auto res = pipeline::run_schedule(pruned, pair, c.schedule, c.training, *seed);
            std::cout << "epochs=" << res.finetune.epochs_run << " best_epoch=" << res.finetune.best_epoch
                      << " target_dev=" << fmt(res.target_dev) << " target_test=" << fmt(res.target_test);
            if (res.auxiliary_test) std::cout << " auxiliary_test=" << fmt(*res.auxiliary_test);
            std::cout << '\n';
            if (!out->empty()) {
                nlohmann::ordered_json prov{{"stage", "finetune"},
                                            {"source", *in},
                                            {"seed", *seed},
                                            {"config", nlohmann::ordered_json::parse(workbench::to_json(c))}};
                pipeline::save_pruned_model(*out, res.pruned, prov.dump());
            }
            exit_code = ok;
        });
    }

    // run --------------------------------------------------------------------
    {
        auto* cmd = app.add_subcommand("run", "Prune and finetune every seed of one config");
        auto args = std::make_shared<ConfigArgs>();
        auto records = std::make_shared<std::string>("records.jsonl");
        auto artifacts = std::make_shared<std::string>();
        add_config_options(cmd, *args);
        cmd->add_option("--records", *records, "Append-only JSONL record file");
        cmd->add_option("--artifacts", *artifacts, "Artifact directory (pretrained cache, run checkpoints)");
        cmd->callback([=, &exit_code] {
            workbench::MatrixGrid grid;
            grid.base = load_config(*args);
            workbench::RecordSink sink(*records);
            workbench::RunCache cache(*artifacts);
            workbench::MatrixOptions opts;
            opts.on_record = [](const ExperimentRecord& r, bool reused) { print_record(r, reused); };
            const auto res = workbench::run_matrix(grid, sink, cache, opts);
            exit_code = res.failed > 0 ? run_failure : ok;
        });
    }

    // matrix -----------------------------------------------------------------
    {
        auto* cmd = app.add_subcommand("matrix", "Run a grid of experiments (resumable)");
        auto grid_path = std::make_shared<std::string>();
        auto overrides = std::make_shared<std::vector<std::string>>();
        auto records = std::make_shared<std::string>("records.jsonl");
        auto artifacts = std::make_shared<std::string>();
        auto jobs = std::make_shared<std::size_t>(1);
        auto fresh = std::make_shared<bool>(false);
        auto check = std::make_shared<bool>(false);
        auto min_gain = std::make_shared<double>(0.02);
        cmd->add_option("-g,--grid", *grid_path, "Grid file (JSON)")->required()->check(CLI::ExistingFile);
        cmd->add_option("--set", *overrides, "Override a base config value");
        cmd->add_option("--records", *records, "Append-only JSONL record file");
        cmd->add_option("--artifacts", *artifacts, "Artifact directory");
        cmd->add_option("-j,--jobs", *jobs, "Concurrent runs")->check(CLI::PositiveNumber);
        cmd->add_flag("--no-resume", *fresh, "Rerun configs that already have a successful record");
        cmd->add_flag("--check", *check, "Assert transfer and ablation trends; exit 3 if they fail");
        cmd->add_option("--min-gain", *min_gain, "Required gain of the best joint-prune schedule in --check");
        cmd->callback([=, &exit_code] {
            auto grid = workbench::load_matrix_grid(*grid_path);
            for (const auto& o : *overrides) workbench::apply_override(grid.base, o);
            std::cout << grid.run_count() << " run(s)\n";
            workbench::RecordSink sink(*records);
            workbench::RunCache cache(*artifacts);
            workbench::MatrixOptions opts;
            opts.jobs = *jobs;
            opts.resume = !*fresh;
            opts.on_record = [](const ExperimentRecord& r, bool reused) { print_record(r, reused); };
            const auto res = workbench::run_matrix(grid, sink, cache, opts);
            for (const auto& [label, values] : by_label(res.records)) {
                std::cout << "mean " << std::left << std::setw(24) << label << fmt(mean_of(values)) << "  (n="
                          << values.size() << ")\n";
            }
            if (*check) check_matrix(res, *min_gain);
            exit_code = res.failed > 0 ? run_failure : ok;
        });
    }

    // bench ------------------------------------------------------------------
    {
        auto* cmd = app.add_subcommand("bench", "Time full-dataset inference of a checkpoint");
        auto args = std::make_shared<ConfigArgs>();
        auto ckpt = std::make_shared<std::string>();
        auto reference = std::make_shared<std::string>();
        auto split = std::make_shared<std::string>("test");
        auto options = std::make_shared<workbench::BenchmarkOptions>();
        auto check = std::make_shared<bool>(false);
        auto min_speedup = std::make_shared<double>(1.0);
        add_config_options(cmd, *args, false);
        cmd->add_option("--checkpoint", *ckpt, "Checkpoint to time")->required()->check(CLI::ExistingDirectory);
        cmd->add_option("--reference", *reference, "Reference checkpoint for the speedup ratio")
            ->check(CLI::ExistingDirectory);
        cmd->add_option("--split", *split, "Target split to run on (train, dev, test)");
        cmd->add_option("--batch-size", options->batch_size, "Batch size");
        cmd->add_option("--passes", options->passes, "Timed passes (at least 5)");
        cmd->add_option("--warmup", options->warmup, "Warmup passes (at least 1)");
        cmd->add_flag("--check", *check, "Require speedup >= --min-speedup against the reference");
        cmd->add_option("--min-speedup", *min_speedup, "Threshold for --check");
        cmd->callback([=, &exit_code] {
            const auto c = load_config(*args);
            const auto data = bench_split(c, *split);
            // Reference first so both timings see the same machine state.
            std::optional<workbench::LatencyReport> ref;
            if (!reference->empty()) ref = workbench::benchmark_checkpoint(*reference, data, *options);
            const auto cand = workbench::benchmark_checkpoint(*ckpt, data, *options);
            print_latency("candidate", cand);
            if (ref) {
                print_latency("reference", *ref);
                const double s = workbench::speedup(*ref, cand);
                std::cout << "speedup " << fmt(s, 3) << "x\n";
                if (*check && !(s >= *min_speedup)) {
                    throw CheckFailed{"speedup " + fmt(s, 3) + " below " + fmt(*min_speedup, 3)};
                }
            } else if (*check) {
                throw CheckFailed{"--check needs --reference"};
            }
            exit_code = ok;
        });
    }

    // report -----------------------------------------------------------------
    {
        auto* cmd = app.add_subcommand("report", "Per-layer retention of a pruned model's mask");
        auto ckpt = std::make_shared<std::string>();
        auto role = std::make_shared<std::string>("target");
        auto csv = std::make_shared<std::string>();
        auto json_out = std::make_shared<std::string>();
        auto check = std::make_shared<bool>(false);
        cmd->add_option("--checkpoint", *ckpt, "Pruned-model directory")->required()->check(CLI::ExistingDirectory);
        cmd->add_option("--role", *role, "target or auxiliary");
        cmd->add_option("--csv", *csv, "Write the CSV table here");
        cmd->add_option("--json", *json_out, "Write the JSON heatmap payload here");
        cmd->add_flag("--check", *check, "Assert fractions in [0, 1] and sparsity consistency");
        cmd->callback([=, &exit_code] {
            const auto ck = model::load_checkpoint(*ckpt);
            const auto* mask = ck.find_gates("mask." + *role);
            if (mask == nullptr) throw ConfigError("checkpoint has no mask for role '" + *role + "'");
            const auto& mc = ck.model.config();
            const auto rep = workbench::structure_report(*mask, mc);
            std::cout << rep.to_csv();
            std::cout << "retained_hidden=" << rep.retained_hidden << " sparsity=" << fmt(rep.sparsity)
                      << " layer_entropy=" << fmt(workbench::layer_retention_entropy(*mask, mc)) << '\n';
            if (!csv->empty()) write_file(*csv, rep.to_csv());
            if (!json_out->empty()) write_file(*json_out, rep.to_json() + "\n");
            if (*check) {
                for (const auto& r : rep.layers) {
                    if (r.head_fraction < 0 || r.head_fraction > 1 || r.fc_fraction < 0 || r.fc_fraction > 1) {
                        throw CheckFailed{"retention fraction outside [0, 1] in layer " + std::to_string(r.layer)};
                    }
                }
                const auto compact = pipeline::compact(ck.model, *mask);
                const double exact = 1.0 - static_cast<double>(compact.prunable_parameter_count()) /
                                               static_cast<double>(sparsity::prunable_parameter_count(mc));
                if (std::abs(exact - rep.sparsity) > 1e-12) throw CheckFailed{"report sparsity disagrees with the compacted model"};
            }
            exit_code = ok;
        });
    }

    // sweep ------------------------------------------------------------------
    {
        auto* cmd = app.add_subcommand("sweep", "Accuracy vs sparsity for several target train fractions");
        auto args = std::make_shared<ConfigArgs>();
        auto fractions = std::make_shared<std::string>("0.05,0.1,0.5");
        auto sparsities = std::make_shared<std::string>("0.4,0.7,0.9,0.95,0.98");
        auto records = std::make_shared<std::string>("records.jsonl");
        auto artifacts = std::make_shared<std::string>();
        auto csv = std::make_shared<std::string>();
        auto jobs = std::make_shared<std::size_t>(1);
        auto check = std::make_shared<bool>(false);
        add_config_options(cmd, *args);
        cmd->add_option("--fractions", *fractions, "Comma-separated train fractions");
        cmd->add_option("--sparsities", *sparsities, "Comma-separated target sparsities");
        cmd->add_option("--records", *records, "Append-only JSONL record file");
        cmd->add_option("--artifacts", *artifacts, "Artifact directory");
        cmd->add_option("--csv", *csv, "Write the curves as CSV");
        cmd->add_option("-j,--jobs", *jobs, "Concurrent runs")->check(CLI::PositiveNumber);
        cmd->add_flag("--check",
                      *check, "Assert the lowest-to-highest sparsity drop is larger at the smallest fraction");
        cmd->callback([=, &exit_code] {
            const auto c = load_config(*args);
            auto fr = parse_list(*fractions);
            auto sp = parse_list(*sparsities);
            workbench::RecordSink sink(*records);
            workbench::RunCache cache(*artifacts);
            workbench::MatrixOptions opts;
            opts.jobs = *jobs;
            opts.on_record = [](const ExperimentRecord& r, bool reused) { print_record(r, reused); };
            const auto res = workbench::data_fraction_sweep(c, fr, sp, sink, cache, opts);
            std::cout << res.to_csv();
            if (!csv->empty()) write_file(*csv, res.to_csv());
            if (*check) {
                const double lo = *std::min_element(sp.begin(), sp.end());
                const double hi = *std::max_element(sp.begin(), sp.end());
                const double small = *std::min_element(fr.begin(), fr.end());
                const double large = *std::max_element(fr.begin(), fr.end());
                const double d_small = res.drop(small, lo, hi);
                const double d_large = res.drop(large, lo, hi);
                if (!(d_small > d_large)) {
                    throw CheckFailed{"drop at fraction " + fmt(small, 2) + " (" + fmt(d_small) +
                                      ") is not larger than at " + fmt(large, 2) + " (" + fmt(d_large) + ")"};
                }
            }
            const bool failed = std::any_of(res.records.begin(), res.records.end(),
                                            [](const ExperimentRecord& r) { return !r.ok(); });
            exit_code = failed ? run_failure : ok;
        });
    }
}

}  // namespace taprune::cli
