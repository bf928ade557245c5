#include <benchmark/benchmark.h>

#include "taprune/autodiff/ops.hpp"
#include "taprune/model/transformer.hpp"
#include "taprune/pipeline/compact.hpp"
#include "taprune/pipeline/training.hpp"
#include "taprune/random.hpp"

using namespace taprune;

namespace {

ad::Tensor random_tensor(ad::Shape shape, Rng& rng, bool grad = false)
{
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    std::vector<double> v(n);
    for (auto& x : v) x = rng.normal(0.0, 1.0);
    return ad::Tensor::from(std::move(shape), std::move(v), grad);
}

data::TokenBatch random_batch(const model::ModelConfig& c, std::size_t size, Rng& rng)
{
    data::TokenBatch b;
    b.batch_size = size;
    b.seq_len = c.max_seq_len;
    b.ids.resize(size * b.seq_len);
    for (auto& id : b.ids) id = 2 + static_cast<int>(rng.below(c.vocab_size - 2));
    b.labels.assign(size, 0);
    b.targets.assign(size, 0.0);
    return b;
}

void BM_Matmul(benchmark::State& state)
{
    const auto n = static_cast<std::size_t>(state.range(0));
    Rng rng(1);
    const auto a = random_tensor({n, n}, rng);
    const auto b = random_tensor({n, n}, rng);
    for (auto _ : state) benchmark::DoNotOptimize(ad::matmul(a, b));
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * 2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(128)->Arg(256);

void BM_MatmulBackward(benchmark::State& state)
{
    const auto n = static_cast<std::size_t>(state.range(0));
    Rng rng(2);
    const auto a = random_tensor({n, n}, rng, true);
    const auto b = random_tensor({n, n}, rng, true);
    for (auto _ : state) {
        auto loss = ad::sum(ad::matmul(a, b));
        loss.backward();
        benchmark::DoNotOptimize(a.grad());
    }
}
BENCHMARK(BM_MatmulBackward)->Arg(64)->Arg(128);

// One gated training step of the default toy model.
void BM_ToyTrainStep(benchmark::State& state)
{
    const model::ModelConfig c{};
    model::GatedTransformer m(c, 3);
    Rng rng(4);
    const auto head = model::TaskHead::create("t", {}, c.hidden_dim, rng);
    const auto batch = random_batch(c, static_cast<std::size_t>(state.range(0)), rng);
    auto gates = model::GateSet::constant(model::GateValues::ones(c));
    for (auto _ : state) {
        auto loss = model::task_loss(model::forward(batch, m, &gates, head), batch, head.type);
        loss.backward();
        benchmark::DoNotOptimize(loss.item());
    }
}
BENCHMARK(BM_ToyTrainStep)->Arg(16)->Arg(32)->Unit(benchmark::kMillisecond);

// Compacted inference at batch 128; the argument is the sparsity in percent.
void BM_CompactPredict(benchmark::State& state)
{
    const model::ModelConfig c{};
    model::GatedTransformer m(c, 5);
    Rng rng(6);
    const auto head = model::TaskHead::create("t", {}, c.hidden_dim, rng);
    const double t = static_cast<double>(state.range(0)) / 100.0;
    const auto mask = t == 0.0 ? model::GateValues::ones(c) : pipeline::random_mask(c, t, rng);
    const auto cm = pipeline::compact(m, mask);
    const auto batch = random_batch(c, 128, rng);
    for (auto _ : state) benchmark::DoNotOptimize(cm.predict(batch, head));
    state.counters["params"] = static_cast<double>(cm.prunable_parameter_count());
}
BENCHMARK(BM_CompactPredict)->Arg(0)->Arg(40)->Arg(70)->Arg(90)->Arg(95)->Arg(98)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
