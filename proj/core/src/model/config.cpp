#include "taprune/model/config.hpp"

#include <string>

#include "taprune/error.hpp"

namespace taprune::model {

void ModelConfig::validate() const
{
    if (num_layers == 0 || hidden_dim == 0 || num_heads == 0 || ffn_dim == 0 || vocab_size == 0 ||
        max_seq_len == 0) {
        throw ConfigError("model config sizes must all be positive");
    }
    if (hidden_dim % num_heads != 0) {
        throw ConfigError("hidden_dim " + std::to_string(hidden_dim) + " is not divisible by num_heads " +
                          std::to_string(num_heads));
    }
}

GateLayout GateLayout::of(const ModelConfig& config)
{
    return GateLayout{config.num_layers, config.num_heads, config.ffn_dim, config.hidden_dim};
}

}  // namespace taprune::model
