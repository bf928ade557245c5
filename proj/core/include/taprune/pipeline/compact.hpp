#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "taprune/data/dataset.hpp"
#include "taprune/model/gate_set.hpp"
#include "taprune/model/transformer.hpp"

namespace taprune::pipeline {

struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> values;  // row-major
};

struct CompactAttention {
    std::size_t heads = 0;  // zero: the block reduces to its output bias
    Matrix wq, wk, wv;      // [h, heads*dh]
    std::vector<double> bq, bk, bv;
    Matrix wo;              // [heads*dh, h]
    std::vector<double> bo; // [h]
    std::vector<double> ln_gamma, ln_beta;  // [h], empty when heads == 0
};

struct CompactFfn {
    std::size_t units = 0;
    Matrix w1;              // [h, units]
    std::vector<double> b1;
    Matrix w2;              // [units, h]
    std::vector<double> b2; // [h]
    std::vector<double> ln_gamma, ln_beta;
};

struct CompactLayer {
    std::optional<CompactAttention> attention;
    std::optional<CompactFfn> ffn;
};

/// Inference-only model holding just the retained heads, intermediate units
/// and residual columns. The residual stream keeps its full width (embeddings
/// are never pruned); sublayers read and write only the retained columns.
class CompactModel {
public:
    [[nodiscard]] const model::ModelConfig& config() const { return config_; }
    [[nodiscard]] const std::vector<std::size_t>& columns() const { return columns_; }
    [[nodiscard]] const std::vector<CompactLayer>& layers() const { return layers_; }

    // Mean-pooled representation [B * d], row-major.
    [[nodiscard]] std::vector<double> encode(const data::TokenBatch& batch) const;
    // Head outputs [B * arity].
    [[nodiscard]] std::vector<double> predict(const data::TokenBatch& batch, const model::TaskHead& head) const;

    // Parameters counted by the sparsity definition (no embeddings, final
    // layernorm or heads).
    [[nodiscard]] std::size_t prunable_parameter_count() const;
    [[nodiscard]] std::size_t parameter_count() const;

private:
    friend CompactModel compact(const model::GatedTransformer&, const model::GateValues&);

    model::ModelConfig config_;
    std::vector<std::size_t> columns_;
    std::vector<double> token_embedding;     // [V, d]
    std::vector<double> position_embedding;  // [max_seq_len, d]
    std::vector<CompactLayer> layers_;
    std::vector<double> final_gamma, final_beta;
};

// Throws ConfigError if the mask is not binary or does not match the model.
CompactModel compact(const model::GatedTransformer& model, const model::GateValues& mask);

// Applies a task head to pooled features [B * d].
std::vector<double> apply_head(std::span<const double> pooled, std::size_t batch, const model::TaskHead& head);

}  // namespace taprune::pipeline
