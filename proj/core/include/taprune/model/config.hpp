#pragma once

#include <cstddef>

namespace taprune::model {

struct ModelConfig {
    std::size_t num_layers = 4;
    std::size_t hidden_dim = 64;
    std::size_t num_heads = 4;
    std::size_t ffn_dim = 128;
    std::size_t vocab_size = 1000;
    std::size_t max_seq_len = 32;

    // Throws ConfigError on non-positive sizes or hidden_dim % num_heads != 0.
    void validate() const;
    [[nodiscard]] std::size_t head_dim() const { return hidden_dim / num_heads; }

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Flat ordering of the structural variables of one gate set:
/// [mha (N) | head (N*n_h) | ffn (N) | fc (N*n_f) | hidden (d)].
struct GateLayout {
    std::size_t num_layers = 0;
    std::size_t num_heads = 0;
    std::size_t ffn_dim = 0;
    std::size_t hidden_dim = 0;

    static GateLayout of(const ModelConfig& config);

    [[nodiscard]] std::size_t count() const
    {
        return 2 * num_layers + num_layers * num_heads + num_layers * ffn_dim + hidden_dim;
    }
    [[nodiscard]] std::size_t mha(std::size_t layer) const { return layer; }
    [[nodiscard]] std::size_t head(std::size_t layer, std::size_t h) const
    {
        return num_layers + layer * num_heads + h;
    }
    [[nodiscard]] std::size_t ffn(std::size_t layer) const
    {
        return num_layers + num_layers * num_heads + layer;
    }
    [[nodiscard]] std::size_t fc(std::size_t layer, std::size_t unit) const
    {
        return 2 * num_layers + num_layers * num_heads + layer * ffn_dim + unit;
    }
    [[nodiscard]] std::size_t hidden(std::size_t column) const
    {
        return 2 * num_layers + num_layers * num_heads + num_layers * ffn_dim + column;
    }

    friend bool operator==(const GateLayout&, const GateLayout&) = default;
};

}  // namespace taprune::model
