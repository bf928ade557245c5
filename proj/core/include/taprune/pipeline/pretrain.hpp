#pragma once

#include <cstdint>

#include "taprune/data/dataset.hpp"
#include "taprune/model/transformer.hpp"

namespace taprune::pipeline {

struct PretrainConfig {
    std::size_t steps = 400;
    double learning_rate = 1e-3;
    std::size_t batch_size = 32;
    double mask_prob = 0.15;

    void validate() const;
};

struct PretrainResult {
    model::GatedTransformer model;
    double first_loss = 0.0;
    double final_loss = 0.0;  // mean over the last tenth of the steps
};

// Masked-token prediction on an unlabelled corpus, all parameters trainable.
// The output projection is discarded afterwards.
PretrainResult pretrain_mlm(const model::ModelConfig& config, const data::Dataset& corpus,
                            const PretrainConfig& pretrain, std::uint64_t seed);

}  // namespace taprune::pipeline
