#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "taprune/data/dataset.hpp"
#include "taprune/model/gate_set.hpp"
#include "taprune/model/transformer.hpp"
#include "taprune/random.hpp"

namespace taprune::testing {

inline model::ModelConfig tiny_config() { return {2, 8, 2, 6, 20, 5}; }
inline model::ModelConfig small_config() { return {3, 12, 3, 10, 30, 6}; }
inline model::ModelConfig toy_config() { return {}; }

inline data::TokenBatch random_batch(const model::ModelConfig& c, std::size_t batch, Rng& rng,
                                     std::size_t seq_len = 0)
{
    data::TokenBatch b;
    b.batch_size = batch;
    b.seq_len = seq_len == 0 ? c.max_seq_len : seq_len;
    b.ids.resize(batch * b.seq_len);
    for (auto& id : b.ids) id = static_cast<int>(rng.below(c.vocab_size));
    b.labels.resize(batch);
    for (auto& y : b.labels) y = static_cast<int>(rng.below(2));
    b.targets.resize(batch);
    for (auto& y : b.targets) y = rng.normal(0, 1);
    return b;
}

// Moves biases and layernorm parameters off their initial values so that
// zeroing tests exercise every parameter.
inline model::GatedTransformer random_model(const model::ModelConfig& c, std::uint64_t seed)
{
    model::GatedTransformer m(c, seed);
    Rng rng(seed ^ 0xabcdef);
    for (auto& p : m.named_parameters(true)) {
        const auto& name = p.name;
        const bool is_gamma = name.find("gamma") != std::string::npos;
        const bool is_vector = p.tensor.dim() == 1;
        if (!is_vector) continue;
        for (auto& v : p.tensor.mutable_data()) v = is_gamma ? rng.normal(1.0, 0.3) : rng.normal(0.0, 0.3);
    }
    return m;
}

inline model::GateValues random_gate_values(const model::ModelConfig& c, Rng& rng, double lo = 0.2, double hi = 1.0)
{
    auto g = model::GateValues::filled(model::GateLayout::of(c), 1.0);
    for (auto& v : g.values()) v = lo + (hi - lo) * rng.uniform_open();
    return g;
}

// Uniformly random binary mask where each unit is kept with probability `keep`.
inline model::GateValues random_binary_mask(const model::ModelConfig& c, Rng& rng, double keep)
{
    auto g = model::GateValues::filled(model::GateLayout::of(c), 1.0);
    for (auto& v : g.values()) v = rng.bernoulli(keep) ? 1.0 : 0.0;
    return g;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b)
{
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return a.size() == b.size() ? m : INFINITY;
}

inline void zero_columns(ad::Tensor& t, std::size_t col, std::size_t count = 1)
{
    const std::size_t width = t.size(1);
    auto v = t.mutable_data();
    for (std::size_t r = 0; r < t.size(0); ++r) {
        for (std::size_t c = col; c < col + count; ++c) v[r * width + c] = 0.0;
    }
}

inline void zero_rows(ad::Tensor& t, std::size_t row, std::size_t count = 1)
{
    const std::size_t width = t.size(1);
    auto v = t.mutable_data();
    std::fill(v.begin() + static_cast<std::ptrdiff_t>(row * width),
              v.begin() + static_cast<std::ptrdiff_t>((row + count) * width), 0.0);
}

inline void zero_entries(ad::Tensor& t, std::size_t offset, std::size_t count = 1)
{
    auto v = t.mutable_data();
    std::fill(v.begin() + static_cast<std::ptrdiff_t>(offset), v.begin() + static_cast<std::ptrdiff_t>(offset + count),
              0.0);
}

inline void zero_all(ad::Tensor& t)
{
    for (auto& v : t.mutable_data()) v = 0.0;
}

enum class Unit { head, fc, mha, ffn, hidden };

// Zeroes the unit's gate in `gates` and the corresponding weights in `manual`.
inline void knock_out(Unit kind, std::size_t layer, std::size_t index, model::GateValues& gates,
                       model::GatedTransformer& manual)
{
    const auto& c = manual.config();
    const std::size_t dh = c.head_dim();
    switch (kind) {
    case Unit::head: {
        gates.head(layer, index) = 0.0;
        auto& l = manual.layers[layer];
        testing::zero_columns(l.wv, index * dh, dh);
        testing::zero_entries(l.bv, index * dh, dh);
        break;
    }
    case Unit::fc: {
        gates.fc(layer, index) = 0.0;
        auto& l = manual.layers[layer];
        testing::zero_columns(l.w1, index);
        testing::zero_entries(l.b1, index);
        break;
    }
    case Unit::mha:
        gates.mha(layer) = 0.0;
        testing::zero_all(manual.layers[layer].wo);
        testing::zero_all(manual.layers[layer].bo);
        break;
    case Unit::ffn:
        gates.ffn(layer) = 0.0;
        testing::zero_all(manual.layers[layer].w2);
        testing::zero_all(manual.layers[layer].b2);
        break;
    case Unit::hidden:
        gates.hidden(index) = 0.0;
        for (auto& l : manual.layers) {
            for (auto* t : {&l.ln1_gamma, &l.ln1_beta, &l.ln2_gamma, &l.ln2_beta, &l.bo, &l.b2}) {
                testing::zero_entries(*t, index);
            }
            testing::zero_columns(l.wo, index);
            testing::zero_columns(l.w2, index);
        }
        break;
    }
}

}  // namespace taprune::testing
