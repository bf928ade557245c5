#include "taprune/pipeline/pretrain.hpp"

#include <cmath>

#include "taprune/autodiff/ops.hpp"
#include "taprune/autodiff/optimizer.hpp"
#include "taprune/error.hpp"

namespace taprune::pipeline {

void PretrainConfig::validate() const
{
    if (!(learning_rate > 0.0)) throw ConfigError("pretrain learning_rate must be positive");
    if (batch_size == 0) throw ConfigError("pretrain batch_size must be positive");
    if (!(mask_prob > 0.0 && mask_prob < 1.0)) throw ConfigError("mask_prob must lie in (0, 1)");
}

PretrainResult pretrain_mlm(const model::ModelConfig& config, const data::Dataset& corpus,
                            const PretrainConfig& pretrain, std::uint64_t seed)
{
    pretrain.validate();
    if (corpus.size() == 0) throw ConfigError("pretraining corpus is empty");
    if (corpus.seq_len > config.max_seq_len) throw ConfigError("corpus sequences exceed max_seq_len");

    Rng rng(seed);
    PretrainResult out;
    out.model = model::GatedTransformer(config, rng.engine()());
    const std::size_t d = config.hidden_dim;
    const std::size_t V = config.vocab_size;

    std::vector<double> w(d * V);
    for (auto& x : w) x = rng.normal(0.0, 1.0 / std::sqrt(static_cast<double>(d)));
    auto proj = ad::Tensor::from({d, V}, std::move(w), true);
    auto bias = ad::Tensor::zeros({V}, true);

    std::vector<ad::Tensor> params;
    for (auto& p : out.model.named_parameters(true)) params.push_back(p.tensor);
    params.push_back(proj);
    params.push_back(bias);
    ad::Optimizer opt(ad::OptimizerKind::adam, pretrain.learning_rate, params);

    const std::size_t bs = std::min(pretrain.batch_size, corpus.size());
    const std::size_t tail = std::max<std::size_t>(1, pretrain.steps / 10);
    double tail_sum = 0.0;
    std::vector<std::size_t> idx(bs);
    for (std::size_t step = 0; step < pretrain.steps; ++step) {
        for (auto& i : idx) i = rng.below(corpus.size());
        auto batch = corpus.batch(idx);
        std::vector<int> positions;
        std::vector<int> targets;
        for (std::size_t k = 0; k < batch.ids.size(); ++k) {
            if (rng.bernoulli(pretrain.mask_prob)) {
                positions.push_back(static_cast<int>(k));
                targets.push_back(batch.ids[k]);
                batch.ids[k] = data::mask_token;
            }
        }
        if (positions.empty()) {
            positions.push_back(0);
            targets.push_back(batch.ids[0]);
            batch.ids[0] = data::mask_token;
        }
        opt.zero_grad();
        auto hidden = ad::reshape(out.model.encode_sequence(batch, nullptr), {batch.ids.size(), d});
        auto picked = ad::embedding(hidden, positions, {positions.size()});
        auto loss = ad::cross_entropy(ad::add(ad::matmul(picked, proj), bias), targets);
        if (!std::isfinite(loss.item())) throw NumericError("pretraining loss diverged at step " + std::to_string(step));
        loss.backward();
        opt.step();
        if (step == 0) out.first_loss = loss.item();
        if (step + tail >= pretrain.steps) tail_sum += loss.item();
    }
    out.final_loss = pretrain.steps == 0 ? 0.0 : tail_sum / static_cast<double>(std::min(tail, pretrain.steps));
    for (auto& p : out.model.named_parameters(true)) p.tensor.zero_grad();
    return out;
}

}  // namespace taprune::pipeline
