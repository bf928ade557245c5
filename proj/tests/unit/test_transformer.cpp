#include <algorithm>

#include "doctest.h"
#include "fixtures.hpp"
#include "taprune/autodiff/ops.hpp"
#include "taprune/autodiff/optimizer.hpp"
#include "taprune/error.hpp"

using namespace taprune;
using testing::knock_out;
using testing::max_abs_diff;
using testing::Unit;

namespace {

std::vector<double> run(const model::GatedTransformer& m, const data::TokenBatch& b, const model::GateValues& g,
                        const model::TaskHead& head)
{
    auto gs = model::GateSet::constant(g);
    auto out = model::forward(b, m, &gs, head);
    return {out.data().begin(), out.data().end()};
}

}  // namespace

TEST_SUITE("transformer") {

TEST_CASE("all-open gates reproduce the ungated model bitwise")
{
    for (auto cfg : {testing::tiny_config(), testing::small_config()}) {
        Rng rng(1);
        auto m = testing::random_model(cfg, 3);
        auto head = model::TaskHead::create("t", {}, cfg.hidden_dim, rng);
        auto b = testing::random_batch(cfg, 4, rng);
        auto ones = model::GateSet::ones(cfg);
        auto gated = model::forward(b, m, &ones, head);
        auto plain = model::forward(b, m, nullptr, head);
        CHECK(std::equal(gated.data().begin(), gated.data().end(), plain.data().begin()));
    }
}

TEST_CASE("closing every block leaves the embeddings through the final layernorm")
{
    auto cfg = testing::small_config();
    Rng rng(2);
    auto m = testing::random_model(cfg, 5);
    auto head = model::TaskHead::create("t", {}, cfg.hidden_dim, rng);
    auto b = testing::random_batch(cfg, 3, rng);
    auto g = model::GateValues::ones(cfg);
    for (std::size_t i = 0; i < cfg.num_layers; ++i) g.mha(i) = g.ffn(i) = 0.0;
    const auto got = run(m, b, g, head);

    std::vector<int> pos(b.seq_len);
    for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = static_cast<int>(i);
    auto x = ad::add(ad::embedding(m.token_embedding, b.ids, {b.batch_size, b.seq_len}),
                     ad::embedding(m.position_embedding, pos, {b.seq_len}));
    auto want = head.apply(ad::mean_axis(ad::layer_norm(x, m.final_gamma, m.final_beta), 1));
    CHECK(max_abs_diff(got, want.data()) < 1e-12);
}

TEST_CASE("zero gate matches manual weight zeroing")
{
    int cases = 0;
    for (auto cfg : {testing::tiny_config(), testing::small_config()}) {
        Rng rng(17);
        for (int rep = 0; rep < 120; ++rep) {
            auto m = testing::random_model(cfg, 100 + rep);
            auto head = model::TaskHead::create("t", {}, cfg.hidden_dim, rng);
            auto b = testing::random_batch(cfg, 2, rng);
            auto gates = testing::random_gate_values(cfg, rng);
            auto manual = m.clone();
            auto closed = gates;
            const auto kind = static_cast<Unit>(rep % 5);
            const std::size_t layer = rng.below(cfg.num_layers);
            const std::size_t index = rng.below(kind == Unit::head     ? cfg.num_heads
                                                : kind == Unit::fc     ? cfg.ffn_dim
                                                : kind == Unit::hidden ? cfg.hidden_dim
                                                                       : 1);
            knock_out(kind, layer, index, closed, manual);
            INFO("kind " << rep % 5 << " layer " << layer << " index " << index);
            CHECK(max_abs_diff(run(m, b, closed, head), run(manual, b, gates, head)) < 1e-10);
            ++cases;
        }
    }
    CHECK(cases >= 200);
}

TEST_CASE("head output is linear in the coarse and fine gate product")
{
    for (auto cfg : {testing::tiny_config(), testing::small_config()}) {
        Rng rng(4);
        auto m = testing::random_model(cfg, 9);
        const std::size_t last = cfg.num_layers - 1;
        testing::zero_all(m.layers[last].bo);
        auto b = testing::random_batch(cfg, 2, rng);
        for (std::size_t j = 0; j < cfg.num_heads; ++j) {
            auto stream = [&](double a, double h) {
                auto g = model::GateValues::ones(cfg);
                for (std::size_t k = 0; k < cfg.num_heads; ++k) g.head(last, k) = 0.0;
                g.head(last, j) = h;
                g.mha(last) = a;
                g.ffn(last) = 0.0;
                auto gs = model::GateSet::constant(g);
                auto r = m.residual_stream(b, &gs);
                return std::vector<double>(r.data().begin(), r.data().end());
            };
            const auto base = stream(0.0, 0.0);
            const auto full = stream(1.0, 1.0);
            for (auto [a, h] : {std::pair{0.5, 0.6}, std::pair{0.9, 0.3}, std::pair{1.0, 0.25}}) {
                const auto got = stream(a, h);
                double err = 0.0;
                for (std::size_t k = 0; k < got.size(); ++k) {
                    err = std::max(err, std::abs((got[k] - base[k]) - a * h * (full[k] - base[k])));
                }
                CHECK(err < 1e-12);
            }
        }
    }
}

TEST_CASE("permuting heads with their gates leaves outputs unchanged")
{
    for (auto cfg : {testing::tiny_config(), testing::small_config()}) {
        Rng rng(6);
        auto m = testing::random_model(cfg, 12);
        auto head = model::TaskHead::create("t", {}, cfg.hidden_dim, rng);
        auto b = testing::random_batch(cfg, 3, rng);
        auto gates = testing::random_gate_values(cfg, rng);
        const std::size_t layer = cfg.num_layers - 1;
        const std::size_t dh = cfg.head_dim();
        const std::size_t d = cfg.hidden_dim;

        std::vector<std::size_t> perm(cfg.num_heads);
        for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
        std::reverse(perm.begin(), perm.end());

        auto permuted = m.clone();
        auto pg = gates;
        auto& src = m.layers[layer];
        auto& dst = permuted.layers[layer];
        for (std::size_t nh = 0; nh < cfg.num_heads; ++nh) {
            const std::size_t oh = perm[nh];  // new head nh is old head oh
            pg.head(layer, nh) = gates.head(layer, oh);
            for (std::size_t k = 0; k < dh; ++k) {
                const std::size_t nc = nh * dh + k;
                const std::size_t oc = oh * dh + k;
                for (auto [s, t] : {std::pair{&src.wq, &dst.wq}, {&src.wk, &dst.wk}, {&src.wv, &dst.wv}}) {
                    for (std::size_t r = 0; r < d; ++r) t->mutable_data()[r * d + nc] = s->data()[r * d + oc];
                }
                for (auto [s, t] : {std::pair{&src.bq, &dst.bq}, {&src.bk, &dst.bk}, {&src.bv, &dst.bv}}) {
                    t->mutable_data()[nc] = s->data()[oc];
                }
                for (std::size_t col = 0; col < d; ++col) dst.wo.mutable_data()[nc * d + col] = src.wo.data()[oc * d + col];
            }
        }
        CHECK(max_abs_diff(run(m, b, gates, head), run(permuted, b, pg, head)) < 1e-12);
    }
}

TEST_CASE("gate shape mismatch is rejected")
{
    auto cfg = testing::tiny_config();
    Rng rng(1);
    auto m = testing::random_model(cfg, 1);
    auto head = model::TaskHead::create("t", {}, cfg.hidden_dim, rng);
    auto b = testing::random_batch(cfg, 2, rng);
    auto wrong = model::GateSet::ones(testing::small_config());
    CHECK_THROWS_AS((void)model::forward(b, m, &wrong, head), ShapeError);
}

TEST_CASE("embeddings are frozen by default")
{
    auto cfg = testing::tiny_config();
    Rng rng(1);
    auto m = testing::random_model(cfg, 2);
    std::vector<model::TaskHead> heads{model::TaskHead::create("t", {}, cfg.hidden_dim, rng)};

    auto contains = [](const std::vector<ad::Tensor>& ps, const ad::Tensor& t) {
        return std::any_of(ps.begin(), ps.end(), [&](const ad::Tensor& p) { return p.node_ptr() == t.node_ptr(); });
    };
    auto frozen = model::trainable_parameters(m, heads);
    CHECK_FALSE(contains(frozen, m.token_embedding));
    CHECK_FALSE(contains(frozen, m.position_embedding));
    CHECK(contains(frozen, heads[0].weight));
    auto all = model::trainable_parameters(m, heads, false);
    CHECK(contains(all, m.token_embedding));
    CHECK(contains(all, m.position_embedding));

    const std::vector<double> before(m.token_embedding.data().begin(), m.token_embedding.data().end());
    ad::Optimizer opt(ad::OptimizerKind::adam, 1e-2, frozen);
    auto b = testing::random_batch(cfg, 4, rng);
    model::task_loss(model::forward(b, m, nullptr, heads[0]), b, heads[0].type).backward();
    opt.step();
    CHECK(std::equal(before.begin(), before.end(), m.token_embedding.data().begin()));
    CHECK(m.token_embedding.has_grad());  // it did receive a gradient, it just was not stepped
}

TEST_CASE("regression head returns one prediction per example")
{
    auto cfg = testing::tiny_config();
    Rng rng(3);
    auto m = testing::random_model(cfg, 2);
    auto head = model::TaskHead::create("r", {data::TaskKind::regression, 0}, cfg.hidden_dim, rng);
    auto b = testing::random_batch(cfg, 5, rng);
    auto out = model::forward(b, m, nullptr, head);
    CHECK(out.shape() == ad::Shape{5});
    CHECK(model::task_loss(out, b, head.type).item() >= 0.0);
}

TEST_CASE("clone is deep and assign_from copies values")
{
    auto cfg = testing::tiny_config();
    auto m = testing::random_model(cfg, 2);
    auto c = m.clone();
    c.layers[0].wq.mutable_data()[0] += 1.0;
    CHECK(c.layers[0].wq.data()[0] != m.layers[0].wq.data()[0]);
    c.assign_from(m);
    CHECK(c.layers[0].wq.data()[0] == m.layers[0].wq.data()[0]);
}

}
