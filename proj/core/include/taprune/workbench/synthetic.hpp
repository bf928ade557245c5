#pragma once

#include <cstdint>
#include <vector>

#include "taprune/data/dataset.hpp"
#include "taprune/random.hpp"

namespace taprune::workbench {

/// Generator for a pair of related token-classification tasks.
///
/// A pool of latent features is shared by both tasks; each feature owns a few
/// trigger tokens. Every example independently switches each feature on with
/// probability 1/2 and plants one of its triggers among background tokens.
/// A task's label is 1 iff at least `label_threshold` of its own features are
/// present. The auxiliary task reuses round(relatedness * features_per_task)
/// of the target's features and draws the rest from features the target
/// ignores.
struct SyntheticPairParams {
    double relatedness = 0.8;
    std::size_t target_train = 100;
    std::size_t auxiliary_train = 10000;
    std::size_t dev_size = 200;
    std::size_t test_size = 1000;
    std::size_t vocab_size = 128;
    std::size_t seq_len = 16;
    double label_noise = 0.0;  // probability of flipping a label
    std::size_t num_features = 10;
    std::size_t features_per_task = 5;
    std::size_t triggers_per_feature = 4;
    std::size_t label_threshold = 3;

    // Throws ConfigError on out-of-range values or an undersized vocabulary.
    void validate() const;
    [[nodiscard]] std::size_t shared_features() const;
};

// Feature indices each task depends on.
std::vector<std::size_t> target_features(const SyntheticPairParams& params);
std::vector<std::size_t> auxiliary_features(const SyntheticPairParams& params);

data::TaskPair synth_task_pair(const SyntheticPairParams& params, std::uint64_t seed);

// Unlabelled sequences from the same token distribution, for masked-token
// pretraining.
data::Dataset synth_corpus(const SyntheticPairParams& params, std::size_t count, std::uint64_t seed);

// One example's latent features and tokens, exposed for label checks.
struct SyntheticExample {
    std::vector<int> tokens;
    std::vector<bool> features;  // [num_features]
};
SyntheticExample synth_example(const SyntheticPairParams& params, Rng& rng);
int label_of(const SyntheticExample& example, const std::vector<std::size_t>& features, std::size_t threshold);

}  // namespace taprune::workbench
