#include "taprune/workbench/experiment.hpp"

#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "taprune/error.hpp"
#include "taprune/model/checkpoint.hpp"
#include "taprune/pipeline/artifacts.hpp"
#include "taprune/sparsity/controller.hpp"
#include "taprune/workbench/report.hpp"

namespace taprune::workbench {

using nlohmann::json;
using ordered = nlohmann::ordered_json;

namespace {

// ---- config <-> json -------------------------------------------------------

ordered cap_to_json(const TrainSizeCap& cap)
{
    if (const auto* n = std::get_if<std::size_t>(&cap)) return *n;
    if (const auto* f = std::get_if<double>(&cap)) return *f;
    return nullptr;
}

TrainSizeCap cap_from_json(const ordered& j)
{
    if (j.is_null()) return std::monostate{};
    if (j.is_number_unsigned() || j.is_number_integer()) {
        if (j.get<long long>() <= 0) throw ConfigError("train cap must be positive");
        return j.get<std::size_t>();
    }
    if (j.is_number_float()) return j.get<double>();
    throw ConfigError("train cap must be a count, a fraction or null");
}

ordered task_to_json(const TaskSpec& t)
{
    return {{"name", t.name},
            {"kind", data::to_string(t.type.kind)},
            {"num_classes", t.type.num_classes},
            {"path", t.path.string()},
            {"train_cap", cap_to_json(t.train_cap)},
            {"vocab_size", t.vocab_size},
            {"seq_len", t.seq_len},
            {"seed", t.seed}};
}

template <typename T>
void get_if_present(const ordered& j, const char* key, T& out)
{
    if (j.contains(key)) out = j.at(key).get<T>();
}

void check_keys(const ordered& j, std::initializer_list<const char*> keys, const std::string& where)
{
    if (!j.is_object()) throw ConfigError(where + " must be an object");
    for (const auto& [k, _] : j.items()) {
        bool known = false;
        for (const char* key : keys) known = known || k == key;
        if (!known) throw ConfigError("unknown key '" + (where.empty() ? k : where + "." + k) + "'");
    }
}

TaskSpec task_from_json(const ordered& j, const std::string& where)
{
    check_keys(j, {"name", "kind", "num_classes", "path", "train_cap", "vocab_size", "seq_len", "seed"}, where);
    TaskSpec t;
    get_if_present(j, "name", t.name);
    if (j.contains("kind")) t.type.kind = data::parse_task_kind(j.at("kind").get<std::string>());
    get_if_present(j, "num_classes", t.type.num_classes);
    if (j.contains("path")) t.path = j.at("path").get<std::string>();
    if (j.contains("train_cap")) t.train_cap = cap_from_json(j.at("train_cap"));
    get_if_present(j, "vocab_size", t.vocab_size);
    get_if_present(j, "seq_len", t.seq_len);
    get_if_present(j, "seed", t.seed);
    return t;
}

ordered to_ordered(const ExperimentConfig& c)
{
    const auto& m = c.model;
    const auto& s = c.data.synthetic;
    const auto& p = c.pretrain;
    const auto& sc = c.schedule;
    const auto& tr = c.training;
    ordered data{{"synthetic",
                  {{"relatedness", s.relatedness},
                   {"target_train", s.target_train},
                   {"auxiliary_train", s.auxiliary_train},
                   {"dev_size", s.dev_size},
                   {"test_size", s.test_size},
                   {"vocab_size", s.vocab_size},
                   {"seq_len", s.seq_len},
                   {"label_noise", s.label_noise},
                   {"num_features", s.num_features},
                   {"features_per_task", s.features_per_task},
                   {"triggers_per_feature", s.triggers_per_feature},
                   {"label_threshold", s.label_threshold}}},
                 {"seed", c.data.seed},
                 {"target_file", c.data.target_file ? task_to_json(*c.data.target_file) : ordered(nullptr)},
                 {"auxiliary_file", c.data.auxiliary_file ? task_to_json(*c.data.auxiliary_file) : ordered(nullptr)},
                 {"target_cap", cap_to_json(c.data.target_cap)}};
    return {{"name", c.name},
            {"model",
             {{"num_layers", m.num_layers},
              {"hidden_dim", m.hidden_dim},
              {"num_heads", m.num_heads},
              {"ffn_dim", m.ffn_dim},
              {"vocab_size", m.vocab_size},
              {"max_seq_len", m.max_seq_len}}},
            {"data", data},
            {"pretrain",
             {{"steps", p.config.steps},
              {"learning_rate", p.config.learning_rate},
              {"batch_size", p.config.batch_size},
              {"mask_prob", p.config.mask_prob},
              {"corpus_size", p.corpus_size},
              {"seed", p.seed},
              {"checkpoint", p.checkpoint ? ordered(p.checkpoint->string()) : ordered(nullptr)}}},
            {"schedule",
             {{"prune_tasks", sc.prune_tasks.to_string()},
              {"finetune_tasks", sc.finetune_tasks.to_string()},
              {"coupling", transfer::to_string(sc.coupling.kind)},
              {"delta_reg_weight", sc.coupling.delta_reg_weight},
              {"weight_target", sc.weights.target},
              {"weight_auxiliary", sc.weights.auxiliary},
              {"target_sparsity", sc.target_sparsity},
              {"prune_steps", sc.prune_steps},
              {"finetune_epochs", sc.finetune_epochs},
              {"seeds", sc.seeds}}},
            {"training",
             {{"model_lr", tr.model_lr},
              {"structure_lr", tr.structure_lr},
              {"finetune_lr", tr.finetune_lr ? ordered(*tr.finetune_lr) : ordered(nullptr)},
              {"multiplier_lr", tr.multiplier_lr ? ordered(*tr.multiplier_lr) : ordered(nullptr)},
              {"batch_size", tr.batch_size},
              {"warmup_fraction", tr.warmup_fraction},
              {"freeze_embeddings", tr.freeze_embeddings},
              {"patience", tr.patience}}},
            {"ablation", c.ablation ? ordered(pipeline::to_string(*c.ablation)) : ordered(nullptr)}};
}

ExperimentConfig from_ordered(const ordered& j)
{
    check_keys(j, {"name", "model", "data", "pretrain", "schedule", "training", "ablation"}, "");
    ExperimentConfig c;
    get_if_present(j, "name", c.name);
    if (j.contains("model")) {
        const auto& m = j.at("model");
        check_keys(m, {"num_layers", "hidden_dim", "num_heads", "ffn_dim", "vocab_size", "max_seq_len"}, "model");
        get_if_present(m, "num_layers", c.model.num_layers);
        get_if_present(m, "hidden_dim", c.model.hidden_dim);
        get_if_present(m, "num_heads", c.model.num_heads);
        get_if_present(m, "ffn_dim", c.model.ffn_dim);
        get_if_present(m, "vocab_size", c.model.vocab_size);
        get_if_present(m, "max_seq_len", c.model.max_seq_len);
    }
    if (j.contains("data")) {
        const auto& d = j.at("data");
        check_keys(d, {"synthetic", "seed", "target_file", "auxiliary_file", "target_cap"}, "data");
        if (d.contains("synthetic")) {
            const auto& s = d.at("synthetic");
            check_keys(s,
                       {"relatedness", "target_train", "auxiliary_train", "dev_size", "test_size", "vocab_size",
                        "seq_len", "label_noise", "num_features", "features_per_task", "triggers_per_feature",
                        "label_threshold"},
                       "data.synthetic");
            auto& p = c.data.synthetic;
            get_if_present(s, "relatedness", p.relatedness);
            get_if_present(s, "target_train", p.target_train);
            get_if_present(s, "auxiliary_train", p.auxiliary_train);
            get_if_present(s, "dev_size", p.dev_size);
            get_if_present(s, "test_size", p.test_size);
            get_if_present(s, "vocab_size", p.vocab_size);
            get_if_present(s, "seq_len", p.seq_len);
            get_if_present(s, "label_noise", p.label_noise);
            get_if_present(s, "num_features", p.num_features);
            get_if_present(s, "features_per_task", p.features_per_task);
            get_if_present(s, "triggers_per_feature", p.triggers_per_feature);
            get_if_present(s, "label_threshold", p.label_threshold);
        }
        get_if_present(d, "seed", c.data.seed);
        if (d.contains("target_file") && !d.at("target_file").is_null()) {
            c.data.target_file = task_from_json(d.at("target_file"), "data.target_file");
        }
        if (d.contains("auxiliary_file") && !d.at("auxiliary_file").is_null()) {
            c.data.auxiliary_file = task_from_json(d.at("auxiliary_file"), "data.auxiliary_file");
        }
        if (d.contains("target_cap")) c.data.target_cap = cap_from_json(d.at("target_cap"));
    }
    if (j.contains("pretrain")) {
        const auto& p = j.at("pretrain");
        check_keys(p, {"steps", "learning_rate", "batch_size", "mask_prob", "corpus_size", "seed", "checkpoint"},
                   "pretrain");
        get_if_present(p, "steps", c.pretrain.config.steps);
        get_if_present(p, "learning_rate", c.pretrain.config.learning_rate);
        get_if_present(p, "batch_size", c.pretrain.config.batch_size);
        get_if_present(p, "mask_prob", c.pretrain.config.mask_prob);
        get_if_present(p, "corpus_size", c.pretrain.corpus_size);
        get_if_present(p, "seed", c.pretrain.seed);
        if (p.contains("checkpoint") && !p.at("checkpoint").is_null()) {
            c.pretrain.checkpoint = p.at("checkpoint").get<std::string>();
        }
    }
    if (j.contains("schedule")) {
        const auto& s = j.at("schedule");
        check_keys(s,
                   {"prune_tasks", "finetune_tasks", "coupling", "delta_reg_weight", "weight_target",
                    "weight_auxiliary", "target_sparsity", "prune_steps", "finetune_epochs", "seeds"},
                   "schedule");
        auto& sc = c.schedule;
        if (s.contains("prune_tasks")) sc.prune_tasks = pipeline::TaskSet::parse(s.at("prune_tasks").get<std::string>());
        if (s.contains("finetune_tasks")) {
            sc.finetune_tasks = pipeline::TaskSet::parse(s.at("finetune_tasks").get<std::string>());
        }
        if (s.contains("coupling")) sc.coupling.kind = transfer::parse_coupling_kind(s.at("coupling").get<std::string>());
        get_if_present(s, "delta_reg_weight", sc.coupling.delta_reg_weight);
        get_if_present(s, "weight_target", sc.weights.target);
        get_if_present(s, "weight_auxiliary", sc.weights.auxiliary);
        get_if_present(s, "target_sparsity", sc.target_sparsity);
        get_if_present(s, "prune_steps", sc.prune_steps);
        get_if_present(s, "finetune_epochs", sc.finetune_epochs);
        get_if_present(s, "seeds", sc.seeds);
    }
    if (j.contains("training")) {
        const auto& t = j.at("training");
        check_keys(t,
                   {"model_lr", "structure_lr", "finetune_lr", "multiplier_lr", "batch_size", "warmup_fraction",
                    "freeze_embeddings", "patience"},
                   "training");
        auto& tr = c.training;
        get_if_present(t, "model_lr", tr.model_lr);
        get_if_present(t, "structure_lr", tr.structure_lr);
        if (t.contains("finetune_lr") && !t.at("finetune_lr").is_null()) tr.finetune_lr = t.at("finetune_lr").get<double>();
        if (t.contains("multiplier_lr") && !t.at("multiplier_lr").is_null()) {
            tr.multiplier_lr = t.at("multiplier_lr").get<double>();
        }
        get_if_present(t, "batch_size", tr.batch_size);
        get_if_present(t, "warmup_fraction", tr.warmup_fraction);
        get_if_present(t, "freeze_embeddings", tr.freeze_embeddings);
        get_if_present(t, "patience", tr.patience);
    }
    if (j.contains("ablation") && !j.at("ablation").is_null()) {
        c.ablation = pipeline::parse_ablation_mode(j.at("ablation").get<std::string>());
    }
    return c;
}

// ---- records ----------------------------------------------------------------

std::string iso_now()
{
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::ostringstream s;
    s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return s.str();
}

std::string hex64(std::uint64_t v)
{
    std::ostringstream s;
    s << std::hex << std::setw(16) << std::setfill('0') << v;
    return s.str();
}

std::string prune_key(const ExperimentConfig& c, std::uint64_t seed, const pipeline::TaskSet& prune_tasks)
{
    // Everything the prune stage reads. Finetuning settings are left out so
    // that schedules sharing a prune stage share its result.
    auto j = to_ordered(c);
    j.erase("name");
    j.erase("ablation");
    j["schedule"].erase("finetune_tasks");
    j["schedule"].erase("finetune_epochs");
    j["schedule"]["prune_tasks"] = prune_tasks.to_string();
    j["schedule"]["seeds"] = ordered::array({seed});
    j["training"].erase("finetune_lr");
    j["training"].erase("patience");
    if (!prune_tasks.both()) {
        j["schedule"].erase("coupling");
        j["schedule"].erase("delta_reg_weight");
        j["schedule"].erase("weight_target");
        j["schedule"].erase("weight_auxiliary");
    }
    return hex64(fnv1a64(j.dump()));
}

std::string pretrain_key(const ExperimentConfig& c)
{
    auto j = to_ordered(c);
    ordered k{{"model", j["model"]}, {"pretrain", j["pretrain"]}, {"synthetic", j["data"]["synthetic"]}};
    return hex64(fnv1a64(k.dump()));
}

void fill_structure(ExperimentRecord& r, const model::GateValues& mask, const model::ModelConfig& mc)
{
    const auto rep = structure_report(mask, mc);
    r.head_retention.clear();
    r.fc_retention.clear();
    for (const auto& row : rep.layers) {
        r.head_retention.push_back(row.head_fraction);
        r.fc_retention.push_back(row.fc_fraction);
    }
    r.retained_hidden = rep.retained_hidden;
}

}  // namespace

void ExperimentConfig::validate() const
{
    model.validate();
    schedule.validate();
    training.validate();
    pretrain.config.validate();
    if (pretrain.corpus_size == 0) throw ConfigError("pretrain.corpus_size must be positive");
    if (!data.target_file || !data.auxiliary_file) {
        data.synthetic.validate();
        if (data.synthetic.vocab_size > model.vocab_size) {
            throw ConfigError("synthetic vocabulary exceeds the model vocabulary");
        }
        if (data.synthetic.seq_len > model.max_seq_len) throw ConfigError("synthetic seq_len exceeds max_seq_len");
    }
    for (const auto* t : {&data.target_file, &data.auxiliary_file}) {
        if (!t->has_value()) continue;
        (*t)->validate();
        if ((*t)->vocab_size > model.vocab_size || (*t)->seq_len > model.max_seq_len) {
            throw ConfigError("task '" + (*t)->name + "' does not fit the model's vocabulary or length");
        }
    }
    if (const auto* f = std::get_if<double>(&data.target_cap); f && !(*f > 0.0 && *f <= 1.0)) {
        throw ConfigError("data.target_cap fraction must lie in (0, 1]");
    }
}

ExperimentConfig parse_experiment_config(const std::string& json_text)
{
    ordered j;
    try {
        j = ordered::parse(json_text);
    } catch (const ordered::exception& e) {
        throw ConfigError("config is not valid JSON: " + std::string(e.what()));
    }
    try {
        auto c = from_ordered(j);
        c.validate();
        return c;
    } catch (const ordered::exception& e) {
        throw ConfigError("config: " + std::string(e.what()));
    }
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    std::ostringstream s;
    s << in.rdbuf();
    return parse_experiment_config(s.str());
}

std::string to_json(const ExperimentConfig& config) { return to_ordered(config).dump(2); }

void apply_override(ExperimentConfig& config, const std::string& assignment)
{
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
    const std::string key = assignment.substr(0, eq);
    const std::string text = assignment.substr(eq + 1);
    ordered value;
    try {
        value = ordered::parse(text);
    } catch (const ordered::exception&) {
        value = text;
    }
    auto j = to_ordered(config);
    ordered* node = &j;
    std::size_t start = 0;
    while (true) {
        const auto dot = key.find('.', start);
        const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (!node->is_object() || !node->contains(part)) throw ConfigError("unknown config key '" + key + "'");
        node = &(*node)[part];
        if (dot == std::string::npos) break;
        start = dot + 1;
    }
    *node = value;
    try {
        config = from_ordered(j);
    } catch (const ordered::exception& e) {
        throw ConfigError("override '" + assignment + "': " + e.what());
    }
    config.validate();
}

std::string config_hash(const ExperimentConfig& config, std::uint64_t seed)
{
    auto j = to_ordered(config);
    j["schedule"]["seeds"] = ordered::array({seed});
    return hex64(fnv1a64(j.dump()));
}

std::string run_label(const ExperimentConfig& config)
{
    if (config.ablation) return "Ablation(" + pipeline::to_string(*config.ablation) + ")";
    return config.schedule.label();
}

std::string mask_bits(const model::GateValues& mask)
{
    std::string s;
    s.reserve(mask.size());
    for (double v : mask.values()) s += v == 1.0 ? '1' : (v == 0.0 ? '0' : '?');
    return s;
}

std::string to_json_line(const ExperimentRecord& r)
{
    ordered j{{"schema_version", r.schema_version},
              {"config_hash", r.config_hash},
              {"name", r.name},
              {"label", r.label},
              {"seed", r.seed},
              {"status", r.status},
              {"error", r.error},
              {"metrics",
               {{"target_dev", r.target_dev},
                {"target_test", r.target_test},
                {"auxiliary_test", r.auxiliary_test ? ordered(*r.auxiliary_test) : ordered(nullptr)}}},
              {"sparsity", {{"expected", r.expected_sparsity}, {"achieved", r.achieved_sparsity}}},
              {"masks", {{"target", r.target_mask}, {"auxiliary", r.auxiliary_mask}}},
              {"structure",
               {{"head_retention", r.head_retention},
                {"fc_retention", r.fc_retention},
                {"retained_hidden", r.retained_hidden}}},
              {"finetune", {{"best_epoch", r.best_epoch}, {"dev_history", r.dev_history}}},
              {"warnings", r.warnings},
              {"latency",
               r.latency ? ordered{{"median_ms", r.latency->median_ms},
                                   {"p95_ms", r.latency->p95_ms},
                                   {"passes", r.latency->passes}}
                         : ordered(nullptr)},
              {"started_at", r.started_at},
              {"finished_at", r.finished_at},
              {"wall_seconds", r.wall_seconds},
              {"artifact_dir", r.artifact_dir},
              {"config", ordered::parse(r.config.empty() ? "null" : r.config)}};
    return j.dump();
}

ExperimentRecord parse_record(const std::string& line)
{
    try {
        const auto j = ordered::parse(line);
        ExperimentRecord r;
        r.schema_version = j.at("schema_version").get<int>();
        if (r.schema_version != record_schema_version) {
            throw FormatError("unsupported record schema version " + std::to_string(r.schema_version));
        }
        r.config_hash = j.at("config_hash").get<std::string>();
        r.name = j.at("name").get<std::string>();
        r.label = j.at("label").get<std::string>();
        r.seed = j.at("seed").get<std::uint64_t>();
        r.status = j.at("status").get<std::string>();
        r.error = j.at("error").get<std::string>();
        const auto& m = j.at("metrics");
        r.target_dev = m.at("target_dev").get<double>();
        r.target_test = m.at("target_test").get<double>();
        if (!m.at("auxiliary_test").is_null()) r.auxiliary_test = m.at("auxiliary_test").get<double>();
        r.expected_sparsity = j.at("sparsity").at("expected").get<double>();
        r.achieved_sparsity = j.at("sparsity").at("achieved").get<double>();
        r.target_mask = j.at("masks").at("target").get<std::string>();
        r.auxiliary_mask = j.at("masks").at("auxiliary").get<std::string>();
        const auto& s = j.at("structure");
        r.head_retention = s.at("head_retention").get<std::vector<double>>();
        r.fc_retention = s.at("fc_retention").get<std::vector<double>>();
        r.retained_hidden = s.at("retained_hidden").get<std::size_t>();
        r.best_epoch = j.at("finetune").at("best_epoch").get<std::size_t>();
        r.dev_history = j.at("finetune").at("dev_history").get<std::vector<double>>();
        r.warnings = j.at("warnings").get<std::vector<std::string>>();
        if (!j.at("latency").is_null()) {
            const auto& l = j.at("latency");
            r.latency = LatencyStats{l.at("median_ms").get<double>(), l.at("p95_ms").get<double>(),
                                     l.at("passes").get<std::size_t>()};
        }
        r.started_at = j.at("started_at").get<std::string>();
        r.finished_at = j.at("finished_at").get<std::string>();
        r.wall_seconds = j.at("wall_seconds").get<double>();
        r.artifact_dir = j.at("artifact_dir").get<std::string>();
        r.config = j.at("config").dump();
        return r;
    } catch (const ordered::exception& e) {
        throw FormatError("record: " + std::string(e.what()));
    }
}

std::vector<ExperimentRecord> read_records(const std::filesystem::path& path)
{
    std::vector<ExperimentRecord> out;
    std::ifstream in(path);
    if (!in) return out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            out.push_back(parse_record(line));
        } catch (const FormatError& e) {
            throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

bool same_outcome(const ExperimentRecord& a, const ExperimentRecord& b)
{
    return a.config_hash == b.config_hash && a.status == b.status && a.target_mask == b.target_mask &&
           a.auxiliary_mask == b.auxiliary_mask && a.target_dev == b.target_dev && a.target_test == b.target_test &&
           a.auxiliary_test == b.auxiliary_test && a.expected_sparsity == b.expected_sparsity &&
           a.achieved_sparsity == b.achieved_sparsity && a.dev_history == b.dev_history;
}

RecordSink::RecordSink(std::filesystem::path path) : path_(std::move(path))
{
    for (const auto& r : read_records(path_)) {
        if (r.ok()) done_[r.config_hash] = r;
    }
}

void RecordSink::append(const ExperimentRecord& record)
{
    const std::string line = to_json_line(record);
    std::lock_guard lock(mutex_);
    if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
    std::ofstream out(path_, std::ios::app);
    out << line << '\n';
    out.flush();
    if (!out) throw Error("failed to append to " + path_.string());
    if (record.ok()) done_[record.config_hash] = record;
}

std::optional<ExperimentRecord> RecordSink::find_success(const std::string& config_hash) const
{
    std::lock_guard lock(mutex_);
    auto it = done_.find(config_hash);
    if (it == done_.end()) return std::nullopt;
    return it->second;
}

RunCache::RunCache(std::filesystem::path artifact_root) : root_(std::move(artifact_root)) {}

std::shared_ptr<const model::GatedTransformer> RunCache::pretrained(const ExperimentConfig& config)
{
    const std::string key = config.pretrain.checkpoint ? "file:" + config.pretrain.checkpoint->string()
                                                       : pretrain_key(config);
    std::shared_future<std::shared_ptr<const model::GatedTransformer>> fut;
    std::promise<std::shared_ptr<const model::GatedTransformer>> promise;
    bool owner = false;
    {
        std::lock_guard lock(mutex_);
        auto it = pretrained_.find(key);
        if (it == pretrained_.end()) {
            fut = promise.get_future().share();
            pretrained_.emplace(key, fut);
            owner = true;
        } else {
            fut = it->second;
        }
    }
    if (!owner) return fut.get();
    try {
        std::shared_ptr<const model::GatedTransformer> m;
        if (config.pretrain.checkpoint) {
            auto ck = model::load_checkpoint(*config.pretrain.checkpoint);
            if (!(ck.model.config() == config.model)) {
                throw ConfigError("pretrained checkpoint does not match the model config");
            }
            m = std::make_shared<model::GatedTransformer>(std::move(ck.model));
        } else {
            const auto dir = root_.empty() ? std::filesystem::path{} : root_ / "pretrained" / key;
            if (!dir.empty() && std::filesystem::exists(dir / "manifest.json")) {
                m = std::make_shared<model::GatedTransformer>(model::load_checkpoint(dir).model);
            } else {
                const auto corpus = synth_corpus(config.data.synthetic, config.pretrain.corpus_size, config.pretrain.seed);
                auto res = pipeline::pretrain_mlm(config.model, corpus, config.pretrain.config, config.pretrain.seed);
                m = std::make_shared<model::GatedTransformer>(std::move(res.model));
                if (!dir.empty()) {
                    model::Checkpoint ck;
                    ck.model = m->clone();
                    model::save_checkpoint(dir, ck);
                }
            }
        }
        promise.set_value(m);
        return m;
    } catch (...) {
        promise.set_exception(std::current_exception());
        std::lock_guard lock(mutex_);
        pretrained_.erase(key);
        throw;
    }
}

std::shared_ptr<const pipeline::PrunedModel> RunCache::prune_stage(const std::string& key,
                                                                   const std::function<pipeline::PrunedModel()>& make)
{
    std::shared_future<std::shared_ptr<const pipeline::PrunedModel>> fut;
    std::promise<std::shared_ptr<const pipeline::PrunedModel>> promise;
    bool owner = false;
    {
        std::lock_guard lock(mutex_);
        auto it = pruned_.find(key);
        if (it == pruned_.end()) {
            fut = promise.get_future().share();
            pruned_.emplace(key, fut);
            owner = true;
        } else {
            fut = it->second;
        }
    }
    if (!owner) return fut.get();
    try {
        auto p = std::make_shared<const pipeline::PrunedModel>(make());
        promise.set_value(p);
        return p;
    } catch (...) {
        promise.set_exception(std::current_exception());
        std::lock_guard lock(mutex_);
        pruned_.erase(key);
        throw;
    }
}

data::TaskPair materialize_tasks(const ExperimentConfig& config, std::uint64_t seed)
{
    data::TaskPair pair;
    if (!config.data.target_file || !config.data.auxiliary_file) {
        pair = synth_task_pair(config.data.synthetic, config.data.seed + seed);
    }
    if (config.data.target_file) pair.target = load_task(*config.data.target_file);
    if (config.data.auxiliary_file) pair.auxiliary = load_task(*config.data.auxiliary_file);
    pair.target = cap_train(pair.target, config.data.target_cap, config.data.seed + seed);
    return pair;
}

ExperimentRecord run_experiment(const ExperimentConfig& config, std::uint64_t seed, RunCache& cache)
{
    config.validate();
    ExperimentConfig single = config;
    single.schedule.seeds = {seed};

    ExperimentRecord r;
    r.config_hash = config_hash(config, seed);
    r.name = config.name;
    r.label = run_label(config);
    r.seed = seed;
    r.config = to_ordered(single).dump();
    r.started_at = iso_now();
    const auto t0 = std::chrono::steady_clock::now();

    try {
        const auto pair = materialize_tasks(config, seed);
        const auto pretrained = cache.pretrained(config);
        const auto& mc = pretrained->config();

        std::optional<pipeline::PrunedModel> final_model;
        if (config.ablation) {
            const pipeline::TaskSet aux_only{false, true};
            auto source = cache.prune_stage(prune_key(config, seed, aux_only), [&] {
                auto s = config.schedule;
                s.prune_tasks = aux_only;
                s.finetune_tasks = pipeline::TaskSet{true, false};
                return pipeline::prune_stage(*pretrained, pair, s, config.training, seed);
            });
            auto a = pipeline::run_ablation(*config.ablation, *pretrained, pair, config.schedule, config.training,
                                            seed, source.get());
            r.target_dev = a.target_dev;
            r.target_test = a.target_test;
            r.expected_sparsity = source->auxiliary_expected_sparsity;
            r.achieved_sparsity = sparsity::expected_sparsity(a.mask, mc);
            r.target_mask = mask_bits(a.mask);
            r.auxiliary_mask = mask_bits(source->auxiliary_mask);
            r.best_epoch = a.finetune.best_epoch;
            r.dev_history = a.finetune.dev_history;
            r.warnings = source->warnings;
            fill_structure(r, a.mask, mc);
        } else {
            auto pruned = cache.prune_stage(prune_key(config, seed, config.schedule.prune_tasks), [&] {
                return pipeline::prune_stage(*pretrained, pair, config.schedule, config.training, seed);
            });
            auto res = pipeline::run_schedule(*pruned, pair, config.schedule, config.training, seed);
            r.target_dev = res.target_dev;
            r.target_test = res.target_test;
            r.auxiliary_test = res.auxiliary_test;
            r.expected_sparsity = res.pruned.target_expected_sparsity;
            r.achieved_sparsity = res.pruned.target_achieved_sparsity;
            r.target_mask = mask_bits(res.pruned.target_mask);
            r.auxiliary_mask = mask_bits(res.pruned.auxiliary_mask);
            r.best_epoch = res.finetune.best_epoch;
            r.dev_history = res.finetune.dev_history;
            r.warnings = res.pruned.warnings;
            fill_structure(r, res.pruned.target_mask, mc);
            final_model = std::move(res.pruned);
        }

        if (final_model && !cache.artifact_root().empty()) {
            const auto dir = cache.artifact_root() / "runs" / r.config_hash;
            ordered prov{{"config_hash", r.config_hash},
                         {"label", r.label},
                         {"seed", seed},
                         {"record_schema_version", record_schema_version},
                         {"config", to_ordered(single)}};
            pipeline::save_pruned_model(dir, *final_model, prov.dump());
            r.artifact_dir = dir.string();
        }
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        r.status = "failed";
        r.error = e.what();
    }
    r.finished_at = iso_now();
    r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
}

}  // namespace taprune::workbench
