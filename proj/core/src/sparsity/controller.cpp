#include "taprune/sparsity/controller.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "taprune/autodiff/ops.hpp"
#include "taprune/error.hpp"

namespace taprune::sparsity {

using model::GateLayout;
using model::GateValues;
using model::ModelConfig;

void SparsityTarget::validate() const
{
    if (!(target >= 0.0 && target < 1.0)) {
        throw ConfigError("sparsity target must lie in [0, 1), got " + std::to_string(target));
    }
    if (!(multiplier_lr > 0.0)) throw ConfigError("multiplier_lr must be positive");
}

UnitCosts UnitCosts::of(const ModelConfig& config, std::size_t retained_hidden)
{
    const std::size_t dh = config.head_dim();
    return UnitCosts{4 * dh * retained_hidden + 3 * dh, 2 * retained_hidden + 1, retained_hidden,
                     2 * retained_hidden};
}

std::size_t prunable_parameter_count(const ModelConfig& config)
{
    const auto c = UnitCosts::of(config, config.hidden_dim);
    const std::size_t per_layer = config.num_heads * c.head + c.block_bias + c.block_norm +
                                  config.ffn_dim * c.fc_unit + c.block_bias + c.block_norm;
    return config.num_layers * per_layer;
}

ad::Tensor expected_retained(const model::GateSet& probs, const ModelConfig& config)
{
    probs.validate(config);
    const double dh = static_cast<double>(config.head_dim());
    auto hidden = ad::sum(probs.hidden);  // expected retained columns

    auto any_open = [](const ad::Tensor& p) {  // 1 - prod(1 - p) over the last axis
        return ad::add_scalar(ad::neg(ad::prod_last(ad::add_scalar(ad::neg(p), 1.0))), 1.0);
    };

    auto head_cost = ad::add_scalar(ad::scale(hidden, 4.0 * dh), 3.0 * dh);
    auto fc_cost = ad::add_scalar(ad::scale(hidden, 2.0), 1.0);
    auto norm_cost = ad::scale(hidden, 2.0);

    auto attn = ad::mul(ad::sum_axis(probs.head, 1), head_cost);
    attn = ad::add(attn, hidden);
    attn = ad::add(attn, ad::mul(any_open(probs.head), norm_cost));
    attn = ad::mul(probs.mha, attn);

    auto ffn = ad::mul(ad::sum_axis(probs.fc, 1), fc_cost);
    ffn = ad::add(ffn, hidden);
    ffn = ad::add(ffn, ad::mul(any_open(probs.fc), norm_cost));
    ffn = ad::mul(probs.ffn, ffn);

    return ad::sum(ad::add(attn, ffn));
}

ad::Tensor expected_sparsity(const model::GateSet& probs, const ModelConfig& config)
{
    const double total = static_cast<double>(prunable_parameter_count(config));
    return ad::add_scalar(ad::scale(expected_retained(probs, config), -1.0 / total), 1.0);
}

double expected_sparsity(const GateValues& probs, const ModelConfig& config)
{
    const auto& lay = probs.layout();
    if (!(lay == GateLayout::of(config))) throw ShapeError("gate values do not match model config");
    const double dh = static_cast<double>(config.head_dim());
    double hidden = 0.0;
    for (std::size_t c = 0; c < lay.hidden_dim; ++c) hidden += probs.hidden(c);

    double retained = 0.0;
    for (std::size_t i = 0; i < lay.num_layers; ++i) {
        double heads = 0.0;
        double none = 1.0;
        for (std::size_t j = 0; j < lay.num_heads; ++j) {
            heads += probs.head(i, j);
            none *= 1.0 - probs.head(i, j);
        }
        retained += probs.mha(i) * (heads * (4.0 * dh * hidden + 3.0 * dh) + hidden + (1.0 - none) * 2.0 * hidden);

        double units = 0.0;
        none = 1.0;
        for (std::size_t u = 0; u < lay.ffn_dim; ++u) {
            units += probs.fc(i, u);
            none *= 1.0 - probs.fc(i, u);
        }
        retained += probs.ffn(i) * (units * (2.0 * hidden + 1.0) + hidden + (1.0 - none) * 2.0 * hidden);
    }
    return 1.0 - retained / static_cast<double>(prunable_parameter_count(config));
}

ad::Tensor lagrangian_penalty(const ad::Tensor& s_hat, const SparsityTarget& target)
{
    auto gap = ad::add_scalar(s_hat, -target.target);
    return ad::add(ad::scale(gap, target.lambda1), ad::scale(ad::square(gap), target.lambda2));
}

double lagrangian_penalty(double s_hat, const SparsityTarget& target)
{
    const double gap = s_hat - target.target;
    return target.lambda1 * gap + target.lambda2 * gap * gap;
}

void update_multipliers(SparsityTarget& target, double s_hat)
{
    const double gap = s_hat - target.target;
    target.lambda1 += target.multiplier_lr * gap;
    target.lambda2 += target.multiplier_lr * gap * gap;
}

double warmup_target(double target, std::size_t step, std::size_t total_steps, double warmup_fraction)
{
    const double warm = warmup_fraction * static_cast<double>(total_steps);
    if (warm <= 0.0) return target;
    return target * std::min(1.0, static_cast<double>(step) / warm);
}

BinarizeResult binarize_scores(const GateValues& scores, const ModelConfig& config, double target)
{
    if (!(target >= 0.0 && target < 1.0)) {
        throw ConfigError("sparsity target must lie in [0, 1), got " + std::to_string(target));
    }
    const auto lay = GateLayout::of(config);
    if (!(scores.layout() == lay)) throw ShapeError("gate scores do not match model config");

    const std::size_t total = prunable_parameter_count(config);
    BinarizeResult result;
    // Tolerance absorbs rounding in (1 - t) * M so that t = 0 keeps everything.
    result.budget = static_cast<std::size_t>(std::floor((1.0 - target) * static_cast<double>(total) + 1e-6));

    // Hidden columns: keep those scoring >= 0.5, then add the best remaining
    // ones while even the full unit set could not reach the budget.
    GateValues mask = GateValues::filled(lay, 0.0);
    std::vector<std::size_t> order(lay.hidden_dim);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores.hidden(a) > scores.hidden(b); });
    auto full_at = [&](std::size_t h) {
        const auto c = UnitCosts::of(config, h);
        return lay.num_layers * (lay.num_heads * c.head + lay.ffn_dim * c.fc_unit + 2 * (c.block_bias + c.block_norm));
    };
    std::size_t hidden = 0;
    for (std::size_t c : order) {
        if (scores.hidden(c) < 0.5 && full_at(hidden) >= result.budget) break;
        mask.hidden(c) = 1.0;
        ++hidden;
    }
    const auto cost = UnitCosts::of(config, hidden);

    struct Unit {
        double score;
        std::size_t layer;
        int kind;  // 0 head, 1 fc unit
        std::size_t index;
    };
    std::vector<Unit> units;
    units.reserve(lay.num_layers * (lay.num_heads + lay.ffn_dim));
    for (std::size_t i = 0; i < lay.num_layers; ++i) {
        for (std::size_t j = 0; j < lay.num_heads; ++j) units.push_back({scores.mha(i) * scores.head(i, j), i, 0, j});
        for (std::size_t u = 0; u < lay.ffn_dim; ++u) units.push_back({scores.ffn(i) * scores.fc(i, u), i, 1, u});
    }
    std::stable_sort(units.begin(), units.end(), [](const Unit& a, const Unit& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.layer != b.layer) return a.layer < b.layer;
        if (a.kind != b.kind) return a.kind < b.kind;
        return a.index < b.index;
    });

    std::size_t used = 0;
    std::size_t kept = 0;
    for (const auto& u : units) {
        const bool attention = u.kind == 0;
        const bool block_open = attention ? mask.mha(u.layer) != 0.0 : mask.ffn(u.layer) != 0.0;
        std::size_t marginal = attention ? cost.head : cost.fc_unit;
        if (!block_open) marginal += cost.block_bias + cost.block_norm;
        if (used + marginal > result.budget) continue;
        used += marginal;
        ++kept;
        if (attention) {
            mask.mha(u.layer) = 1.0;
            mask.head(u.layer, u.index) = 1.0;
        } else {
            mask.ffn(u.layer) = 1.0;
            mask.fc(u.layer, u.index) = 1.0;
        }
    }
    if (kept == 0 && !units.empty()) {
        result.warning = "sparsity target " + std::to_string(target) +
                         " leaves no room for a single structural unit; returning an empty mask";
    }
    result.retained_parameters = used;
    result.achieved_sparsity = 1.0 - static_cast<double>(used) / static_cast<double>(total);
    result.mask = std::move(mask);
    return result;
}

BinarizeResult binarize_to_target(std::span<const double> log_alpha, const ModelConfig& config, double target,
                                  const gates::HardConcreteConfig& hc)
{
    const auto lay = GateLayout::of(config);
    if (log_alpha.size() != lay.count()) {
        throw ShapeError("binarize: " + std::to_string(log_alpha.size()) + " log-alphas for " +
                         std::to_string(lay.count()) + " structural variables");
    }
    return binarize_scores(GateValues(lay, gates::deterministic_gates(log_alpha, hc)), config, target);
}

SparsityController::SparsityController(const ModelConfig& config, double target, double multiplier_lr,
                                       std::size_t total_steps, double warmup_fraction)
    : final_target_(target), total_steps_(total_steps), warmup_fraction_(warmup_fraction)
{
    config.validate();
    state_.target = 0.0;
    state_.multiplier_lr = multiplier_lr;
    SparsityTarget probe = state_;
    probe.target = target;
    probe.validate();
    state_.target = current_target();
}

double SparsityController::current_target() const
{
    return warmup_target(final_target_, step_, total_steps_, warmup_fraction_);
}

ad::Tensor SparsityController::penalty(const ad::Tensor& s_hat) const { return lagrangian_penalty(s_hat, state_); }

void SparsityController::update(double s_hat)
{
    update_multipliers(state_, s_hat);
    ++step_;
    state_.target = current_target();
}

}  // namespace taprune::sparsity
