#include <filesystem>
#include <cstring>
#include <fstream>

#include <unistd.h>

#include "doctest.h"
#include "fixtures.hpp"
#include "json.hpp"
#include "taprune/error.hpp"
#include "taprune/model/checkpoint.hpp"
#include "taprune/pipeline/artifacts.hpp"
#include "taprune/workbench/synthetic.hpp"

using namespace taprune;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag)
        : path(fs::temp_directory_path() / ("taprune_test_" + tag + "_" + std::to_string(::getpid())))
    {
        fs::remove_all(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

model::Checkpoint sample_checkpoint()
{
    const auto c = testing::small_config();
    model::Checkpoint ck{testing::random_model(c, 3), {}, {}};
    Rng rng(4);
    ck.heads.push_back(model::TaskHead::create("cls", {data::TaskKind::classification, 3}, c.hidden_dim, rng));
    ck.heads.push_back(model::TaskHead::create("reg", {data::TaskKind::regression, 1}, c.hidden_dim, rng));
    ck.gates.emplace_back("mask", testing::random_binary_mask(c, rng, 0.5));
    ck.gates.emplace_back("soft", testing::random_gate_values(c, rng));
    return ck;
}

json read_manifest(const fs::path& dir)
{
    std::ifstream in(dir / "manifest.json");
    return json::parse(in);
}

void write_manifest(const fs::path& dir, const json& j)
{
    std::ofstream out(dir / "manifest.json");
    out << j.dump(2);
}

bool bitwise_equal(std::span<const double> a, std::span<const double> b)
{
    return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

}  // namespace

TEST_SUITE("checkpoint") {

TEST_CASE("round trip is bitwise exact")
{
    TempDir tmp("roundtrip");
    const auto ck = sample_checkpoint();
    model::save_checkpoint(tmp.path, ck);
    const auto back = model::load_checkpoint(tmp.path);

    CHECK(back.model.config() == ck.model.config());
    const auto pa = ck.model.named_parameters(true);
    const auto pb = back.model.named_parameters(true);
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) {
        CHECK(pa[i].name == pb[i].name);
        CHECK(pa[i].tensor.shape() == pb[i].tensor.shape());
        CHECK(bitwise_equal(pa[i].tensor.data(), pb[i].tensor.data()));
    }
    REQUIRE(back.heads.size() == 2);
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK(back.heads[i].task_id == ck.heads[i].task_id);
        CHECK(back.heads[i].type == ck.heads[i].type);
        CHECK(bitwise_equal(back.heads[i].weight.data(), ck.heads[i].weight.data()));
        CHECK(bitwise_equal(back.heads[i].bias.data(), ck.heads[i].bias.data()));
    }
    REQUIRE(back.find_gates("mask") != nullptr);
    CHECK(*back.find_gates("mask") == ck.gates[0].second);
    CHECK(bitwise_equal(back.find_gates("soft")->values(), ck.gates[1].second.values()));
    CHECK(back.find_gates("none") == nullptr);
    CHECK(back.find_head("reg") != nullptr);

    // Same outputs after reload.
    Rng rng(9);
    const auto batch = testing::random_batch(ck.model.config(), 4, rng);
    auto g1 = model::GateSet::constant(ck.gates[1].second);
    auto g2 = model::GateSet::constant(*back.find_gates("soft"));
    const auto y1 = model::forward(batch, ck.model, &g1, ck.heads[0]);
    const auto y2 = model::forward(batch, back.model, &g2, back.heads[0]);
    CHECK(bitwise_equal(y1.data(), y2.data()));
}

TEST_CASE("manifest describes the blob")
{
    TempDir tmp("manifest");
    const auto ck = sample_checkpoint();
    model::save_checkpoint(tmp.path, ck);
    const auto m = read_manifest(tmp.path);
    CHECK(m.at("format") == "taprune-checkpoint");
    CHECK(m.at("format_version") == model::checkpoint_format_version);
    CHECK(m.at("dtype") == "float64");
    std::size_t total = 0;
    for (const auto& t : m.at("tensors")) {
        CHECK(t.at("offset").get<std::size_t>() == total);
        std::size_t n = 1;
        for (auto d : t.at("shape")) n *= d.get<std::size_t>();
        total += n;
    }
    CHECK(fs::file_size(tmp.path / "tensors.bin") == m.at("total_elements").get<std::size_t>() * sizeof(double));
}

TEST_CASE("corrupt checkpoints are rejected")
{
    TempDir tmp("corrupt");
    const auto ck = sample_checkpoint();

    CHECK_THROWS_AS(model::load_checkpoint(tmp.path), FormatError);

    model::save_checkpoint(tmp.path, ck);
    auto m = read_manifest(tmp.path);

    SUBCASE("future version")
    {
        m["format_version"] = model::checkpoint_format_version + 1;
        write_manifest(tmp.path, m);
        CHECK_THROWS_AS(model::load_checkpoint(tmp.path), FormatError);
    }
    SUBCASE("wrong format tag")
    {
        m["format"] = "something-else";
        write_manifest(tmp.path, m);
        CHECK_THROWS_AS(model::load_checkpoint(tmp.path), FormatError);
    }
    SUBCASE("renamed tensor")
    {
        m["tensors"][0]["name"] = "bogus";
        write_manifest(tmp.path, m);
        CHECK_THROWS_AS(model::load_checkpoint(tmp.path), FormatError);
    }
    SUBCASE("wrong shape")
    {
        m["tensors"][0]["shape"][0] = m["tensors"][0]["shape"][0].get<std::size_t>() + 1;
        write_manifest(tmp.path, m);
        CHECK_THROWS_AS(model::load_checkpoint(tmp.path), FormatError);
    }
    SUBCASE("truncated blob")
    {
        fs::resize_file(tmp.path / "tensors.bin", fs::file_size(tmp.path / "tensors.bin") - 8);
        CHECK_THROWS_AS(model::load_checkpoint(tmp.path), FormatError);
    }
    SUBCASE("not json")
    {
        std::ofstream(tmp.path / "manifest.json") << "{ nope";
        CHECK_THROWS_AS(model::load_checkpoint(tmp.path), FormatError);
    }
    SUBCASE("missing field")
    {
        m.erase("config");
        write_manifest(tmp.path, m);
        CHECK_THROWS_AS(model::load_checkpoint(tmp.path), FormatError);
    }
}

TEST_CASE("pruned model round trip keeps masks, heads and provenance")
{
    TempDir tmp("pruned");
    workbench::SyntheticPairParams p;
    p.vocab_size = 40;
    p.seq_len = 8;
    p.num_features = 6;
    p.features_per_task = 3;
    p.triggers_per_feature = 2;
    p.label_threshold = 2;
    p.target_train = 16;
    p.auxiliary_train = 32;
    p.dev_size = 8;
    p.test_size = 16;
    const auto pair = workbench::synth_task_pair(p, 2);
    const auto m = testing::random_model({2, 12, 2, 10, 40, 8}, 5);
    auto spec = pipeline::ScheduleSpec::parse("A,T->T");
    spec.target_sparsity = 0.6;
    spec.prune_steps = 6;
    pipeline::TrainingConfig tc;
    tc.batch_size = 8;
    const auto pruned = pipeline::prune_stage(m, pair, spec, tc, 1);

    CHECK_THROWS_AS(pipeline::save_pruned_model(tmp.path, pruned, "[1, 2]"), ConfigError);

    pipeline::save_pruned_model(tmp.path, pruned, R"j({"schedule": "Prune(A,T)->FT(T)", "seed": 1})j");
    const auto back = pipeline::load_pruned_model(tmp.path);
    CHECK(back.target_mask == pruned.target_mask);
    CHECK(back.auxiliary_mask == pruned.auxiliary_mask);
    CHECK(back.target_log_alpha == pruned.target_log_alpha);
    CHECK(back.target_achieved_sparsity == doctest::Approx(pruned.target_achieved_sparsity).epsilon(1e-12));
    CHECK(pipeline::evaluate(back, transfer::TaskRole::target, pair.target.test) ==
          pipeline::evaluate(pruned, transfer::TaskRole::target, pair.target.test));
    CHECK(pipeline::evaluate(back, transfer::TaskRole::auxiliary, pair.auxiliary.test) ==
          pipeline::evaluate(pruned, transfer::TaskRole::auxiliary, pair.auxiliary.test));

    const auto prov = json::parse(pipeline::read_provenance(tmp.path));
    CHECK(prov.at("seed") == 1);
    CHECK(prov.at("schedule") == "Prune(A,T)->FT(T)");
}

}  // TEST_SUITE
