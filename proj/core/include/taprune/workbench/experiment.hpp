#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "taprune/model/config.hpp"
#include "taprune/pipeline/pretrain.hpp"
#include "taprune/pipeline/training.hpp"
#include "taprune/workbench/synthetic.hpp"
#include "taprune/workbench/tasks.hpp"

namespace taprune::workbench {

struct PretrainSpec {
    pipeline::PretrainConfig config;
    std::size_t corpus_size = 5000;
    std::uint64_t seed = 7;
    // Load this checkpoint instead of pretraining.
    std::optional<std::filesystem::path> checkpoint;
};

struct DataSpec {
    SyntheticPairParams synthetic;
    // The pair for run seed s is generated from seed + s.
    std::uint64_t seed = 100;
    // File-backed tasks replace the synthetic ones when given.
    std::optional<TaskSpec> target_file;
    std::optional<TaskSpec> auxiliary_file;
    // Applied to the target's train split only.
    TrainSizeCap target_cap;
};

/// One run description, as read from a config file. Every run seed in
/// schedule.seeds becomes its own record.
struct ExperimentConfig {
    std::string name = "run";
    model::ModelConfig model;
    DataSpec data;
    PretrainSpec pretrain;
    pipeline::ScheduleSpec schedule;
    pipeline::TrainingConfig training;
    std::optional<pipeline::AblationMode> ablation;

    void validate() const;
};

ExperimentConfig parse_experiment_config(const std::string& json_text);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
std::string to_json(const ExperimentConfig& config);

// "training.model_lr=3e-4" style. The value is parsed as JSON, falling back
// to a plain string. Throws ConfigError for unknown keys.
void apply_override(ExperimentConfig& config, const std::string& assignment);

// FNV-1a of the canonical config with schedule.seeds replaced by {seed}.
std::string config_hash(const ExperimentConfig& config, std::uint64_t seed);

// Schedule label, or "Ablation(<mode>)".
std::string run_label(const ExperimentConfig& config);

inline constexpr int record_schema_version = 1;

struct LatencyStats {
    double median_ms = 0.0;
    double p95_ms = 0.0;
    std::size_t passes = 0;
};

struct ExperimentRecord {
    int schema_version = record_schema_version;
    std::string config_hash;
    std::string name;
    std::string label;
    std::uint64_t seed = 0;
    std::string config;  // canonical JSON of the config, seeds = {seed}
    std::string status = "ok";  // "ok" | "failed"
    std::string error;

    double target_dev = 0.0;
    double target_test = 0.0;
    std::optional<double> auxiliary_test;
    double expected_sparsity = 0.0;  // target mask, before binarization
    double achieved_sparsity = 0.0;
    std::string target_mask;         // '0'/'1' per structural unit
    std::string auxiliary_mask;
    std::vector<double> head_retention;  // per layer
    std::vector<double> fc_retention;
    std::size_t retained_hidden = 0;
    std::size_t best_epoch = 0;
    std::vector<double> dev_history;
    std::vector<std::string> warnings;
    std::optional<LatencyStats> latency;

    std::string started_at;
    std::string finished_at;
    double wall_seconds = 0.0;
    std::string artifact_dir;

    [[nodiscard]] bool ok() const { return status == "ok"; }
};

std::string to_json_line(const ExperimentRecord& record);
// Throws FormatError on malformed lines or an unknown schema version.
ExperimentRecord parse_record(const std::string& line);
std::vector<ExperimentRecord> read_records(const std::filesystem::path& path);

std::string mask_bits(const model::GateValues& mask);

// True when masks are bit-identical and every metric is exactly equal.
bool same_outcome(const ExperimentRecord& a, const ExperimentRecord& b);

/// Append-only JSON-lines file. Appends are serialized and flushed one
/// record at a time.
class RecordSink {
public:
    explicit RecordSink(std::filesystem::path path);

    void append(const ExperimentRecord& record);
    // Successful record with this hash already in the file (or appended since).
    [[nodiscard]] std::optional<ExperimentRecord> find_success(const std::string& config_hash) const;
    [[nodiscard]] const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
    mutable std::mutex mutex_;
    std::map<std::string, ExperimentRecord> done_;
};

/// Pretrained models and prune-stage results shared across runs. Entries are
/// computed once per key; concurrent callers wait for the first.
class RunCache {
public:
    // artifact_root may be empty; pretrained checkpoints are then kept in
    // memory only.
    explicit RunCache(std::filesystem::path artifact_root = {});

    std::shared_ptr<const model::GatedTransformer> pretrained(const ExperimentConfig& config);
    std::shared_ptr<const pipeline::PrunedModel> prune_stage(const std::string& key,
                                                             const std::function<pipeline::PrunedModel()>& make);

    [[nodiscard]] const std::filesystem::path& artifact_root() const { return root_; }

private:
    std::filesystem::path root_;
    std::mutex mutex_;
    std::map<std::string, std::shared_future<std::shared_ptr<const model::GatedTransformer>>> pretrained_;
    std::map<std::string, std::shared_future<std::shared_ptr<const pipeline::PrunedModel>>> pruned_;
};

data::TaskPair materialize_tasks(const ExperimentConfig& config, std::uint64_t seed);

// Runs one seed. Run failures (divergence, numeric errors) are caught and
// reported with status "failed"; config errors propagate as ConfigError.
// When the cache has an artifact root, the final model is saved under
// <root>/runs/<hash>/ with a provenance sidecar.
ExperimentRecord run_experiment(const ExperimentConfig& config, std::uint64_t seed, RunCache& cache);

}  // namespace taprune::workbench
