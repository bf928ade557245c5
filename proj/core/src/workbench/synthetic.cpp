#include "taprune/workbench/synthetic.hpp"

#include <cmath>
#include <string>

#include "taprune/error.hpp"

namespace taprune::workbench {

namespace {

constexpr int first_trigger = data::first_content_token;

int trigger_token(const SyntheticPairParams& p, std::size_t feature, std::size_t k)
{
    return first_trigger + static_cast<int>(feature * p.triggers_per_feature + k);
}

data::Dataset make_split(const SyntheticPairParams& p, const std::vector<std::size_t>& features, std::size_t n,
                         Rng& rng)
{
    data::Dataset d;
    d.type = {data::TaskKind::classification, 2};
    d.seq_len = p.seq_len;
    for (std::size_t i = 0; i < n; ++i) {
        const auto ex = synth_example(p, rng);
        int label = label_of(ex, features, p.label_threshold);
        if (p.label_noise > 0.0 && rng.bernoulli(p.label_noise)) label = 1 - label;
        d.push(ex.tokens, label);
    }
    return d;
}

data::TaskData make_task(const SyntheticPairParams& p, std::string name, const std::vector<std::size_t>& features,
                         std::size_t train, Rng& rng)
{
    data::TaskData t;
    t.name = std::move(name);
    t.type = {data::TaskKind::classification, 2};
    t.train = make_split(p, features, train, rng);
    t.dev = make_split(p, features, p.dev_size, rng);
    t.test = make_split(p, features, p.test_size, rng);
    return t;
}

}  // namespace

void SyntheticPairParams::validate() const
{
    if (!(relatedness >= 0.0 && relatedness <= 1.0)) throw ConfigError("relatedness must lie in [0, 1]");
    if (target_train == 0 || auxiliary_train == 0 || dev_size == 0 || test_size == 0) {
        throw ConfigError("synthetic split sizes must be positive");
    }
    if (!(label_noise >= 0.0 && label_noise < 0.5)) throw ConfigError("label_noise must lie in [0, 0.5)");
    if (features_per_task == 0 || label_threshold == 0 || label_threshold > features_per_task) {
        throw ConfigError("label_threshold must lie in [1, features_per_task]");
    }
    if (2 * features_per_task > num_features) {
        throw ConfigError("num_features must be at least twice features_per_task");
    }
    if (seq_len < num_features + 1) throw ConfigError("seq_len must exceed num_features");
    const std::size_t reserved = data::first_content_token + num_features * triggers_per_feature;
    if (vocab_size < reserved + 8) {
        throw ConfigError("vocab_size " + std::to_string(vocab_size) + " leaves too few background tokens");
    }
}

std::size_t SyntheticPairParams::shared_features() const
{
    return static_cast<std::size_t>(std::lround(relatedness * static_cast<double>(features_per_task)));
}

std::vector<std::size_t> target_features(const SyntheticPairParams& p)
{
    std::vector<std::size_t> f(p.features_per_task);
    for (std::size_t i = 0; i < f.size(); ++i) f[i] = i;
    return f;
}

std::vector<std::size_t> auxiliary_features(const SyntheticPairParams& p)
{
    const std::size_t shared = p.shared_features();
    std::vector<std::size_t> f;
    for (std::size_t i = 0; i < shared; ++i) f.push_back(i);
    for (std::size_t i = 0; f.size() < p.features_per_task; ++i) f.push_back(p.features_per_task + i);
    return f;
}

SyntheticExample synth_example(const SyntheticPairParams& p, Rng& rng)
{
    const int background_lo = trigger_token(p, p.num_features, 0);
    const auto background = static_cast<std::uint64_t>(static_cast<int>(p.vocab_size) - background_lo);

    SyntheticExample ex;
    ex.tokens.resize(p.seq_len);
    for (auto& t : ex.tokens) t = background_lo + static_cast<int>(rng.below(background));
    ex.features.resize(p.num_features);
    // Distinct positions for the planted triggers.
    std::vector<std::size_t> slots(p.seq_len);
    for (std::size_t i = 0; i < slots.size(); ++i) slots[i] = i;
    std::size_t used = 0;
    for (std::size_t f = 0; f < p.num_features; ++f) {
        ex.features[f] = rng.bernoulli(0.5);
        if (!ex.features[f]) continue;
        const std::size_t pick = used + rng.below(slots.size() - used);
        std::swap(slots[used], slots[pick]);
        ex.tokens[slots[used++]] = trigger_token(p, f, rng.below(p.triggers_per_feature));
    }
    return ex;
}

int label_of(const SyntheticExample& ex, const std::vector<std::size_t>& features, std::size_t threshold)
{
    std::size_t on = 0;
    for (auto f : features) on += ex.features[f];
    return on >= threshold ? 1 : 0;
}

data::TaskPair synth_task_pair(const SyntheticPairParams& p, std::uint64_t seed)
{
    p.validate();
    Rng root(seed);
    Rng target_rng = root.fork(1);
    Rng auxiliary_rng = root.fork(2);
    data::TaskPair pair;
    pair.target = make_task(p, "target", target_features(p), p.target_train, target_rng);
    pair.auxiliary = make_task(p, "auxiliary", auxiliary_features(p), p.auxiliary_train, auxiliary_rng);
    return pair;
}

data::Dataset synth_corpus(const SyntheticPairParams& p, std::size_t count, std::uint64_t seed)
{
    p.validate();
    Rng rng(Rng(seed).fork(3));
    data::Dataset d;
    d.type = {data::TaskKind::classification, 2};
    d.seq_len = p.seq_len;
    for (std::size_t i = 0; i < count; ++i) d.push(synth_example(p, rng).tokens, 0);
    return d;
}

}  // namespace taprune::workbench
