#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "taprune/autodiff/tensor.hpp"
#include "taprune/data/dataset.hpp"
#include "taprune/model/config.hpp"
#include "taprune/model/gate_set.hpp"
#include "taprune/random.hpp"

namespace taprune::model {

struct NamedTensor {
    std::string name;
    ad::Tensor tensor;
};

struct LayerParams {
    ad::Tensor ln1_gamma, ln1_beta;  // [d]
    ad::Tensor wq, wk, wv;           // [d, d], head h owns columns [h*dh, (h+1)*dh)
    ad::Tensor bq, bk, bv;           // [d]
    ad::Tensor wo;                   // [d, d], head h owns rows [h*dh, (h+1)*dh)
    ad::Tensor bo;                   // [d]
    ad::Tensor ln2_gamma, ln2_beta;  // [d]
    ad::Tensor w1;                   // [d, n_f]
    ad::Tensor b1;                   // [n_f]
    ad::Tensor w2;                   // [n_f, d]
    ad::Tensor b2;                   // [d]
};

/// Pre-layernorm encoder with mean pooling and gate insertion points for the
/// five structural families.
///
/// Gates act as follows in layer i:
///   - the attention block output is scaled by z_mha[i], and the context of
///     head j by z_head[i][j] before the output projection;
///   - the FFN block output is scaled by z_ffn[i], and intermediate unit j by
///     z_fc[i][j];
///   - z_hidden masks the columns each sublayer reads from its layernorm and
///     the columns it writes back to the residual stream.
/// Token and position embeddings are never gated.
class GatedTransformer {
public:
    GatedTransformer() = default;
    GatedTransformer(const ModelConfig& config, std::uint64_t seed);

    [[nodiscard]] const ModelConfig& config() const { return config_; }

    // Residual stream after the last layer, before the final layernorm [B, L, d].
    [[nodiscard]] ad::Tensor residual_stream(const data::TokenBatch& batch, const GateSet* gates) const;
    // Final-layernorm hidden states [B, L, d]. gates == nullptr runs ungated.
    [[nodiscard]] ad::Tensor encode_sequence(const data::TokenBatch& batch, const GateSet* gates) const;
    // Mean-pooled representation [B, d].
    [[nodiscard]] ad::Tensor encode(const data::TokenBatch& batch, const GateSet* gates) const;

    [[nodiscard]] std::vector<NamedTensor> named_parameters(bool include_embeddings = true) const;

    // Deep copy; parameters keep their requires_grad flags.
    [[nodiscard]] GatedTransformer clone() const;
    // Copies parameter values from a model of identical config.
    void assign_from(const GatedTransformer& other);

    ad::Tensor token_embedding;     // [V, d]
    ad::Tensor position_embedding;  // [max_seq_len, d]
    std::vector<LayerParams> layers;
    ad::Tensor final_gamma, final_beta;

private:
    ModelConfig config_;
};

/// Per-task output layer on top of the pooled representation.
struct TaskHead {
    std::string task_id;
    data::TaskType type;
    ad::Tensor weight;  // [d, arity]
    ad::Tensor bias;    // [arity]

    static TaskHead create(std::string task_id, data::TaskType type, std::size_t hidden_dim, Rng& rng);

    // Logits [B, C] for classification, predictions [B] for regression.
    [[nodiscard]] ad::Tensor apply(const ad::Tensor& pooled) const;
    [[nodiscard]] TaskHead clone() const;
};

ad::Tensor forward(const data::TokenBatch& batch, const GatedTransformer& model, const GateSet* gates,
                   const TaskHead& head);

// Cross-entropy or mean squared error according to the head's task kind.
ad::Tensor task_loss(const ad::Tensor& outputs, const data::TokenBatch& batch, const data::TaskType& type);

// Transformer and head parameters; token/position embeddings are left out
// when freeze_embeddings is set.
std::vector<ad::Tensor> trainable_parameters(const GatedTransformer& model,
                                             std::span<const TaskHead> heads,
                                             bool freeze_embeddings = true);

}  // namespace taprune::model
