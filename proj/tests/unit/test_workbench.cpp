#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include <unistd.h>

#include "doctest.h"
#include "fixtures.hpp"
#include "json.hpp"
#include "taprune/data/metrics.hpp"
#include "taprune/error.hpp"
#include "taprune/pipeline/compact.hpp"
#include "taprune/sparsity/controller.hpp"
#include "taprune/workbench/benchmark.hpp"
#include "taprune/workbench/experiment.hpp"
#include "taprune/workbench/matrix.hpp"
#include "taprune/workbench/report.hpp"
#include "taprune/workbench/synthetic.hpp"
#include "taprune/workbench/tasks.hpp"

using namespace taprune;
using namespace taprune::workbench;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag)
        : path(fs::temp_directory_path() / ("taprune_wb_" + tag + "_" + std::to_string(::getpid())))
    {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

constexpr const char* tiny_config = R"j({
  "name": "tiny",
  "model": {"num_layers": 1, "hidden_dim": 8, "num_heads": 2, "ffn_dim": 8, "vocab_size": 64, "max_seq_len": 12},
  "data": {"synthetic": {"vocab_size": 64, "seq_len": 12, "target_train": 24, "auxiliary_train": 48, "dev_size": 16, "test_size": 16,
                         "num_features": 6, "features_per_task": 3, "triggers_per_feature": 2,
                         "label_threshold": 2}},
  "pretrain": {"steps": 5, "corpus_size": 40},
  "schedule": {"prune_tasks": "A,T", "finetune_tasks": "T", "target_sparsity": 0.6, "prune_steps": 6,
               "finetune_epochs": 1, "seeds": [0]},
  "training": {"model_lr": 1e-3, "batch_size": 8}
})j";

ExperimentConfig tiny() { return parse_experiment_config(tiny_config); }

void write(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

}  // namespace

TEST_SUITE("workbench") {

TEST_CASE("fully related tasks share labels")
{
    SyntheticPairParams p;
    p.relatedness = 1.0;
    p.target_train = 500;
    p.auxiliary_train = 500;
    CHECK(target_features(p) == auxiliary_features(p));
    Rng rng(3);
    for (int i = 0; i < 2000; ++i) {
        const auto ex = synth_example(p, rng);
        CHECK(label_of(ex, target_features(p), p.label_threshold) ==
              label_of(ex, auxiliary_features(p), p.label_threshold));
    }
}

TEST_CASE("unrelated tasks agree at chance")
{
    SyntheticPairParams p;
    p.relatedness = 0.0;
    const auto tf = target_features(p);
    const auto af = auxiliary_features(p);
    for (auto f : af) CHECK(std::find(tf.begin(), tf.end(), f) == tf.end());
    Rng rng(11);
    const int n = 100000;
    int agree = 0;
    for (int i = 0; i < n; ++i) {
        const auto ex = synth_example(p, rng);
        agree += label_of(ex, tf, p.label_threshold) == label_of(ex, af, p.label_threshold);
    }
    // Disjoint features: labels are independent fair coins (P(>=3 of 5) = 1/2).
    const double rate = static_cast<double>(agree) / n;
    CHECK(std::abs(rate - 0.5) < 3.0 * std::sqrt(0.25 / n));
}

TEST_CASE("synthetic pair sizes and labels")
{
    SyntheticPairParams p;
    p.target_train = 37;
    p.auxiliary_train = 211;
    p.dev_size = 19;
    p.test_size = 23;
    const auto pair = synth_task_pair(p, 5);
    CHECK(pair.target.train.size() == 37);
    CHECK(pair.auxiliary.train.size() == 211);
    CHECK(pair.target.dev.size() == 19);
    CHECK(pair.auxiliary.test.size() == 23);
    for (int y : pair.target.train.labels) CHECK((y == 0 || y == 1));
    for (int id : pair.target.train.tokens) CHECK((id >= 2 && id < static_cast<int>(p.vocab_size)));

    const auto again = synth_task_pair(p, 5);
    CHECK(again.target.train.tokens == pair.target.train.tokens);
    CHECK(synth_task_pair(p, 6).target.train.tokens != pair.target.train.tokens);

    p.relatedness = 1.5;
    CHECK_THROWS_AS(p.validate(), ConfigError);
    p.relatedness = 0.5;
    p.vocab_size = 30;
    CHECK_THROWS_AS(p.validate(), ConfigError);
}

TEST_CASE("token ids")
{
    CHECK(token_id("17", 128) == 17);
    CHECK(token_id("128", 128) != 128);
    const int h = token_id("hello", 128);
    CHECK(h >= 2);
    CHECK(h < 128);
    CHECK(h == static_cast<int>(2 + fnv1a64("hello") % 126));
    // Known FNV-1a-64 vectors.
    CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
    CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
}

TEST_CASE("export then load reproduces a task")
{
    TempDir tmp("task");
    SyntheticPairParams p;
    p.target_train = 30;
    p.dev_size = 10;
    p.test_size = 12;
    p.auxiliary_train = 10;
    const auto pair = synth_task_pair(p, 1);
    export_task(pair.target, tmp.path / "t.jsonl");

    TaskSpec spec;
    spec.name = "t";
    spec.type = {data::TaskKind::classification, 2};
    spec.path = tmp.path / "t.jsonl";
    spec.vocab_size = p.vocab_size;
    spec.seq_len = p.seq_len;
    const auto back = load_task(spec);
    CHECK(back.train.tokens == pair.target.train.tokens);
    CHECK(back.train.labels == pair.target.train.labels);
    CHECK(back.dev.labels == pair.target.dev.labels);
    CHECK(back.test.tokens == pair.target.test.tokens);
}

TEST_CASE("unsplit files are divided 80/10/10")
{
    TempDir tmp("unsplit");
    std::ofstream out(tmp.path / "u.jsonl");
    for (int i = 0; i < 50; ++i) out << json{{"text", "w" + std::to_string(i) + " x y"}, {"label", i % 2}}.dump() << "\n";
    out.close();
    TaskSpec spec{"u", {data::TaskKind::classification, 2}, tmp.path / "u.jsonl", {}, 128, 8, 3};
    const auto t = load_task(spec);
    CHECK(t.train.size() == 40);
    CHECK(t.dev.size() == 5);
    CHECK(t.test.size() == 5);
    // Short texts are padded to seq_len.
    CHECK(t.train.seq_len == 8);
}

TEST_CASE("malformed task files name the line")
{
    TempDir tmp("bad");
    TaskSpec spec{"b", {data::TaskKind::classification, 2}, tmp.path / "b.jsonl", {}, 128, 8, 0};
    auto expect_line = [&](const std::string& body, const std::string& where) {
        write(spec.path, body);
        try {
            (void)load_task(spec);
            FAIL("expected FormatError");
        } catch (const FormatError& e) {
            CHECK(std::string(e.what()).find(where) != std::string::npos);
        }
    };
    expect_line("{\"text\": \"a\", \"label\": 0}\n{\"text\": \"b\"}\n", ":2");
    expect_line("{\"text\": \"a\", \"label\": 0}\nnot json\n", ":2");
    expect_line("{\"text\": \"a\", \"label\": 5}\n", ":1");
    expect_line("{\"text\": \"a\", \"label\": 0.5}\n", ":1");
    expect_line("{\"text\": \"a\", \"label\": 1, \"split\": \"val\"}\n", ":1");

    spec.path = tmp.path / "missing.jsonl";
    CHECK_THROWS_AS((void)load_task(spec), FormatError);

    // Regression labels may be fractional.
    spec.path = tmp.path / "r.jsonl";
    spec.type = {data::TaskKind::regression, 1};
    write(spec.path, "{\"text\": \"a b\", \"label\": 0.25, \"split\": \"train\"}\n");
    CHECK(load_task(spec).train.targets.at(0) == 0.25);
}

TEST_CASE("train caps subsample only the train split")
{
    SyntheticPairParams p;
    p.target_train = 100;
    p.auxiliary_train = 10;
    const auto pair = synth_task_pair(p, 2);
    const auto a = cap_train(pair.target, std::size_t{30}, 4);
    CHECK(a.train.size() == 30);
    CHECK(a.dev.tokens == pair.target.dev.tokens);
    CHECK(cap_train(pair.target, 0.25, 4).train.size() == 25);
    CHECK(cap_train(pair.target, 1.0, 4).train.tokens == pair.target.train.tokens);
    CHECK(cap_train(pair.target, std::monostate{}, 4).train.size() == 100);
    CHECK(cap_train(pair.target, std::size_t{30}, 4).train.tokens == a.train.tokens);
    CHECK(cap_train(pair.target, std::size_t{30}, 5).train.tokens != a.train.tokens);
    // Nested fractions draw nested subsets.
    const auto half = cap_train(pair.target, 0.5, 4);
    const auto quarter = cap_train(pair.target, 0.25, 4);
    std::set<std::vector<int>> rows;
    for (std::size_t i = 0; i < half.train.size(); ++i) {
        rows.insert({half.train.tokens.begin() + static_cast<std::ptrdiff_t>(i * p.seq_len),
                     half.train.tokens.begin() + static_cast<std::ptrdiff_t>((i + 1) * p.seq_len)});
    }
    for (std::size_t i = 0; i < quarter.train.size(); ++i) {
        CHECK(rows.count({quarter.train.tokens.begin() + static_cast<std::ptrdiff_t>(i * p.seq_len),
                          quarter.train.tokens.begin() + static_cast<std::ptrdiff_t>((i + 1) * p.seq_len)}) == 1);
    }
    CHECK_THROWS_AS(cap_train(pair.target, 1.5, 4), ConfigError);
}

TEST_CASE("config parsing, overrides and hashes")
{
    auto c = tiny();
    CHECK(c.model.hidden_dim == 8);
    CHECK(c.schedule.prune_tasks.both());
    CHECK(run_label(c) == "Prune(A,T)->FT(T)");

    const auto again = parse_experiment_config(to_json(c));
    CHECK(to_json(again) == to_json(c));
    CHECK(config_hash(again, 0) == config_hash(c, 0));
    CHECK(config_hash(c, 0) != config_hash(c, 1));
    CHECK(config_hash(c, 0).size() == 16);

    apply_override(c, "training.model_lr=0.002");
    CHECK(c.training.model_lr == 0.002);
    CHECK(config_hash(c, 0) != config_hash(again, 0));
    apply_override(c, "schedule.coupling=delta");
    CHECK(c.schedule.coupling.kind == transfer::CouplingKind::delta);
    CHECK_THROWS_AS(apply_override(c, "training.nope=1"), ConfigError);
    CHECK_THROWS_AS(apply_override(c, "no_equals_sign"), ConfigError);

    CHECK_THROWS_AS(parse_experiment_config(R"({"modle": {}})"), ConfigError);
    CHECK_THROWS_AS(parse_experiment_config(R"({"schedule": {"target_sparsity": 1.2}})"), ConfigError);
    CHECK_THROWS_AS(parse_experiment_config("{"), ConfigError);

    c.ablation = pipeline::AblationMode::masks_only;
    CHECK(run_label(c) == "Ablation(masks_only)");
}

TEST_CASE("records round trip through JSON lines")
{
    ExperimentRecord r;
    r.config_hash = "0123456789abcdef";
    r.name = "n";
    r.label = "Prune(A)->FT(T)";
    r.seed = 3;
    r.config = "{}";
    r.target_dev = 0.75;
    r.target_test = 0.1 + 0.2;
    r.auxiliary_test = 0.5;
    r.expected_sparsity = 0.93;
    r.achieved_sparsity = 0.95;
    r.target_mask = "1010";
    r.auxiliary_mask = "1111";
    r.head_retention = {0.5, 0.25};
    r.fc_retention = {0.1, 0.0};
    r.retained_hidden = 7;
    r.best_epoch = 2;
    r.dev_history = {0.5, 0.6, 0.75};
    r.warnings = {"w"};
    r.latency = LatencyStats{1.5, 2.5, 5};
    const auto line = to_json_line(r);
    CHECK(line.find('\n') == std::string::npos);
    const auto back = parse_record(line);
    CHECK(same_outcome(r, back));
    CHECK(back.target_test == r.target_test);
    CHECK(back.latency->p95_ms == 2.5);
    CHECK(back.warnings == r.warnings);
    CHECK(json::parse(line).at("schema_version") == record_schema_version);

    auto j = json::parse(line);
    j["schema_version"] = record_schema_version + 1;
    CHECK_THROWS_AS(parse_record(j.dump()), FormatError);
    CHECK_THROWS_AS(parse_record("[]"), FormatError);

    auto other = back;
    other.target_mask = "1011";
    CHECK_FALSE(same_outcome(r, other));
}

TEST_CASE("record sink resumes from disk")
{
    TempDir tmp("sink");
    const auto path = tmp.path / "runs.jsonl";
    ExperimentRecord ok;
    ok.config_hash = "aa";
    ExperimentRecord bad;
    bad.config_hash = "bb";
    bad.status = "failed";
    {
        RecordSink s(path);
        s.append(ok);
        s.append(bad);
        CHECK(s.find_success("aa").has_value());
    }
    RecordSink s(path);
    CHECK(s.find_success("aa").has_value());
    CHECK_FALSE(s.find_success("bb").has_value());
    CHECK(read_records(path).size() == 2);
}

TEST_CASE("a one-point matrix yields one record and resumes")
{
    TempDir tmp("matrix1");
    MatrixGrid g;
    g.base = tiny();
    CHECK(g.run_count() == 1);
    RecordSink sink(tmp.path / "runs.jsonl");
    RunCache cache(tmp.path / "artifacts");
    const auto first = run_matrix(g, sink, cache);
    REQUIRE(first.records.size() == 1);
    CHECK(first.records[0].ok());
    CHECK(first.reused == 0);
    CHECK(first.records[0].achieved_sparsity >= 0.6 - 1e-12);
    CHECK(fs::exists(fs::path(first.records[0].artifact_dir) / "manifest.json"));
    CHECK(fs::exists(fs::path(first.records[0].artifact_dir) / "provenance.json"));

    const auto second = run_matrix(g, sink, cache);
    CHECK(second.reused == 1);
    CHECK(same_outcome(first.records[0], second.records[0]));
    CHECK(read_records(sink.path()).size() == 1);

    // A fresh cache and sink rerun the same point to the same outcome.
    TempDir tmp2("matrix1b");
    RecordSink sink2(tmp2.path / "runs.jsonl");
    RunCache cache2;
    const auto third = run_matrix(g, sink2, cache2);
    CHECK(same_outcome(first.records[0], third.records[0]));
}

TEST_CASE("failed runs are recorded and the matrix continues")
{
    TempDir tmp("matrixfail");
    MatrixGrid g;
    g.base = tiny();
    g.model_lrs = {1e300, 1e-3};
    RecordSink sink(tmp.path / "runs.jsonl");
    RunCache cache;
    const auto r = run_matrix(g, sink, cache);
    REQUIRE(r.records.size() == 2);
    CHECK(r.failed == 1);
    CHECK(r.records[0].status == "failed");
    CHECK_FALSE(r.records[0].error.empty());
    CHECK(r.records[1].ok());
    CHECK(read_records(sink.path()).size() == 2);
}

TEST_CASE("grids expand in order")
{
    auto g = parse_matrix_grid(json{{"base", json::parse(tiny_config)},
                                    {"schedules", {"A->T", "T->A,T", "A,T->T", "A,T->A,T", "T->T"}}}
                                   .dump());
    const auto w = g.expand();
    REQUIRE(w.size() == 5);
    CHECK(run_label(w[0]) == "Prune(A)->FT(T)");
    CHECK(run_label(w[4]) == "Prune(T)->FT(T)");

    g = parse_matrix_grid(json{{"base", json::parse(tiny_config)},
                               {"sparsities", {0.4, 0.7, 0.9, 0.95, 0.98}},
                               {"couplings", {"single_mask", "multi_mask"}},
                               {"seeds", {0, 1, 2}}}
                              .dump());
    const auto s = g.expand();
    REQUIRE(s.size() == 10);
    CHECK(g.run_count() == 30);
    CHECK(s[0].schedule.coupling.kind == transfer::CouplingKind::single_mask);
    CHECK(s[1].schedule.target_sparsity == 0.7);
    CHECK(s[5].schedule.coupling.kind == transfer::CouplingKind::multi_mask);
    CHECK(s[9].schedule.seeds == std::vector<std::uint64_t>{0, 1, 2});

    g = parse_matrix_grid(json{{"base", json::parse(tiny_config)},
                               {"ablations", {"weights_only", "masks_only", "both"}},
                               {"schedules", {"A->T"}}}
                              .dump());
    CHECK(g.expand().size() == 4);

    CHECK_THROWS_AS(parse_matrix_grid(R"({"schedules": ["A->T"]})"), ConfigError);
    CHECK_THROWS_AS(parse_matrix_grid(json{{"base", json::parse(tiny_config)}, {"sparsities", {1.5}}}.dump()),
                    ConfigError);
}

TEST_CASE("base_config resolves against the grid file")
{
    TempDir tmp("gridfile");
    write(tmp.path / "base.json", tiny_config);
    write(tmp.path / "grid.json", R"({"base_config": "base.json", "sparsities": [0.5, 0.8]})");
    const auto g = load_matrix_grid(tmp.path / "grid.json");
    CHECK(g.base.model.hidden_dim == 8);
    CHECK(g.expand().size() == 2);
}

TEST_CASE("benchmark options and self speedup")
{
    BenchmarkOptions o;
    o.passes = 4;
    CHECK_THROWS_AS(o.validate(), ConfigError);
    o.passes = 5;
    o.warmup = 0;
    CHECK_THROWS_AS(o.validate(), ConfigError);

    const auto c = testing::small_config();
    const auto m = testing::random_model(c, 1);
    Rng rng(2);
    const auto head = model::TaskHead::create("t", {}, c.hidden_dim, rng);
    data::Dataset d;
    d.type = {data::TaskKind::classification, 2};
    d.seq_len = c.max_seq_len;
    for (int i = 0; i < 2048; ++i) {
        std::vector<int> ids(c.max_seq_len);
        for (auto& t : ids) t = static_cast<int>(rng.below(c.vocab_size));
        d.push(ids, i % 2);
    }
    const auto cm = pipeline::compact(m, model::GateValues::ones(c));
    BenchmarkOptions bo;
    bo.passes = 21;
    bo.warmup = 3;
    const auto a = benchmark_inference(cm, head, d, bo);
    const auto b = benchmark_inference(cm, head, d, bo);
    CHECK(a.pass_ms.size() == 21);
    CHECK(a.examples == 2048);
    CHECK(a.p95_ms >= a.median_ms);
    CHECK(a.prunable_parameters == sparsity::prunable_parameter_count(c));
    const double s = speedup(a, b);
    CHECK(s > 0.9);
    CHECK(s < 1.1);
}

TEST_CASE("structure report")
{
    const auto c = testing::small_config();
    const auto ones = structure_report(model::GateValues::ones(c), c);
    REQUIRE(ones.layers.size() == c.num_layers);
    for (const auto& l : ones.layers) {
        CHECK(l.head_fraction == 1.0);
        CHECK(l.fc_fraction == 1.0);
        CHECK(l.mha);
        CHECK(l.ffn);
    }
    CHECK(ones.sparsity == 0.0);
    CHECK(ones.retained_hidden == c.hidden_dim);
    CHECK(layer_retention_entropy(model::GateValues::ones(c), c) == doctest::Approx(std::log(3.0)));

    // Layer 1 attention dropped, so its head fraction reads 0 even with head gates on.
    auto mask = model::GateValues::ones(c);
    const auto layout = mask.layout();
    mask.values()[layout.mha(1)] = 0.0;
    mask.values()[layout.fc(2, 0)] = 0.0;
    const auto r = structure_report(mask, c);
    CHECK(r.layers[1].head_fraction == 0.0);
    CHECK_FALSE(r.layers[1].mha);
    CHECK(r.layers[2].fc_fraction == doctest::Approx(1.0 - 1.0 / static_cast<double>(c.ffn_dim)));
    const auto kept = pipeline::compact(testing::random_model(c, 1), mask).prunable_parameter_count();
    CHECK(r.sparsity == doctest::Approx(1.0 - static_cast<double>(kept) /
                                                  static_cast<double>(sparsity::prunable_parameter_count(c))));

    const auto csv = r.to_csv();
    CHECK(csv.rfind("layer,", 0) == 0);
    const auto j = json::parse(r.to_json());
    CHECK(j.at("heatmap").at("values").size() == c.num_layers);

    // Everything in one layer: zero entropy.
    auto one = model::GateValues::filled(layout, 0.0);
    for (std::size_t h = 0; h < c.hidden_dim; ++h) one.values()[layout.hidden(h)] = 1.0;
    one.values()[layout.ffn(0)] = 1.0;
    for (std::size_t u = 0; u < c.ffn_dim; ++u) one.values()[layout.fc(0, u)] = 1.0;
    CHECK(layer_retention_entropy(one, c) == 0.0);

    auto soft = model::GateValues::ones(c);
    soft.values()[0] = 0.5;
    CHECK_THROWS_AS(structure_report(soft, c), ConfigError);
}

TEST_CASE("shipped configs parse")
{
    const fs::path dir = TAPRUNE_CONFIG_DIR;
    const std::set<double> allowed_t{0.4, 0.7, 0.9, 0.95, 0.98};
    int files = 0;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.path().extension() != ".json") continue;
        ++files;
        INFO(entry.path().filename().string());
        std::ifstream in(entry.path());
        const auto j = json::parse(in);
        std::vector<ExperimentConfig> points;
        if (j.contains("base") || j.contains("base_config")) {
            points = load_matrix_grid(entry.path()).expand();
        } else {
            points.push_back(load_experiment_config(entry.path()));
        }
        for (const auto& c : points) {
            CHECK(allowed_t.count(c.schedule.target_sparsity) == 1);
            const auto w = c.schedule.weights;
            CHECK(((w.target == 1 && w.auxiliary == 1) || (w.target == 1 && w.auxiliary == 2) ||
                   (w.target == 2 && w.auxiliary == 1)));
        }
    }
    CHECK(files >= 6);

    const auto when = load_matrix_grid(dir / "when_to_transfer.json").expand();
    std::set<std::string> labels;
    for (const auto& c : when) labels.insert(run_label(c));
    CHECK(labels == std::set<std::string>{"Prune(A)->FT(T)", "Prune(T)->FT(A,T)", "Prune(A,T)->FT(T)",
                                          "Prune(A,T)->FT(A,T)", "Prune(T)->FT(T)"});
    std::set<double> ts;
    for (const auto& c : load_matrix_grid(dir / "sparsity_sweep.json").expand()) ts.insert(c.schedule.target_sparsity);
    CHECK(ts == allowed_t);
    const auto base = load_experiment_config(dir / "transfer.json");
    CHECK(base.data.synthetic.relatedness == 0.8);
    CHECK(base.data.synthetic.target_train == 100);
    CHECK(base.data.synthetic.auxiliary_train == 10000);
    CHECK(base.schedule.target_sparsity == 0.95);
    CHECK(base.schedule.seeds.size() == 5);
}

TEST_CASE("pearson rejects constant inputs")
{
    const std::vector<double> x{1.0, 2.0, 3.0};
    const std::vector<double> y{2.0, 2.0, 2.0};
    CHECK_THROWS_AS(data::pearson(x, y), NumericError);
    CHECK(data::pearson(x, x) == doctest::Approx(1.0));
}

}  // TEST_SUITE
