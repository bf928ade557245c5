#include "taprune/workbench/benchmark.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "taprune/error.hpp"
#include "taprune/model/checkpoint.hpp"

namespace taprune::workbench {

namespace {

double one_pass(const pipeline::CompactModel& model, const model::TaskHead& head,
                const std::vector<data::TokenBatch>& batches)
{
    const auto t0 = std::chrono::steady_clock::now();
    double sink = 0.0;
    for (const auto& b : batches) {
        const auto out = model.predict(b, head);
        sink += out.front();
    }
    const auto t1 = std::chrono::steady_clock::now();
    if (!std::isfinite(sink)) throw NumericError("non-finite model output during benchmarking");
    return std::chrono::duration<double, std::milli>(t1 - t0).count();
}

}  // namespace

void BenchmarkOptions::validate() const
{
    if (batch_size == 0) throw ConfigError("benchmark batch size must be positive");
    if (passes < 5) throw ConfigError("benchmark needs at least 5 timed passes");
    if (warmup < 1) throw ConfigError("benchmark needs at least 1 warmup pass");
}

LatencyReport benchmark_inference(const pipeline::CompactModel& model, const model::TaskHead& head,
                                  const data::Dataset& dataset, const BenchmarkOptions& options)
{
    options.validate();
    if (dataset.size() == 0) throw ConfigError("benchmark dataset is empty");
    if (dataset.seq_len > model.config().max_seq_len) throw ShapeError("benchmark sequences exceed max_seq_len");

    std::vector<data::TokenBatch> batches;
    for (std::size_t start = 0; start < dataset.size(); start += options.batch_size) {
        std::vector<std::size_t> idx(std::min(options.batch_size, dataset.size() - start));
        std::iota(idx.begin(), idx.end(), start);
        batches.push_back(dataset.batch(idx));
    }
    for (std::size_t i = 0; i < options.warmup; ++i) one_pass(model, head, batches);

    LatencyReport rep;
    rep.examples = dataset.size();
    rep.prunable_parameters = model.prunable_parameter_count();
    for (std::size_t i = 0; i < options.passes; ++i) rep.pass_ms.push_back(one_pass(model, head, batches));
    auto sorted = rep.pass_ms;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t n = sorted.size();
    rep.median_ms = n % 2 == 1 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
    const auto rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(n)));
    rep.p95_ms = sorted[std::max<std::size_t>(rank, 1) - 1];
    return rep;
}

LatencyReport benchmark_checkpoint(const std::filesystem::path& dir, const data::Dataset& dataset,
                                   const BenchmarkOptions& options)
{
    const auto ck = model::load_checkpoint(dir);
    const auto& mc = ck.model.config();
    const auto* mask = ck.find_gates("mask.target");
    const auto gates = mask ? *mask : model::GateValues::ones(mc);

    const model::TaskHead* head = ck.find_head("target");
    if (head == nullptr && !ck.heads.empty()) head = &ck.heads.front();
    model::TaskHead fresh;
    if (head == nullptr) {
        Rng rng(0);
        fresh = model::TaskHead::create("bench", dataset.type, mc.hidden_dim, rng);
        head = &fresh;
    }
    return benchmark_inference(pipeline::compact(ck.model, gates), *head, dataset, options);
}

double speedup(const LatencyReport& reference, const LatencyReport& candidate)
{
    if (!(candidate.median_ms > 0.0)) throw NumericError("candidate latency is zero");
    return reference.median_ms / candidate.median_ms;
}

}  // namespace taprune::workbench
