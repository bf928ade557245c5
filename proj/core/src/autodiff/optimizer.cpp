#include "taprune/autodiff/optimizer.hpp"

#include <cmath>
#include <string>

#include "taprune/error.hpp"

namespace taprune::ad {

Optimizer::Optimizer(OptimizerKind kind, double learning_rate, std::vector<Tensor> params)
    : params_(std::move(params))
{
    state_.kind = kind;
    set_learning_rate(learning_rate);
    if (kind == OptimizerKind::adam) {
        for (const auto& p : params_) {
            state_.first_moment.emplace_back(p.numel(), 0.0);
            state_.second_moment.emplace_back(p.numel(), 0.0);
        }
    }
}

void Optimizer::set_learning_rate(double lr)
{
    if (!(lr > 0.0) || !std::isfinite(lr)) {
        throw ConfigError("learning rate must be positive and finite, got " + std::to_string(lr));
    }
    state_.learning_rate = lr;
}

void Optimizer::zero_grad()
{
    for (auto& p : params_) p.zero_grad();
}

void Optimizer::step()
{
    for (std::size_t k = 0; k < params_.size(); ++k) {
        for (double g : params_[k].grad()) {
            if (!std::isfinite(g)) {
                throw NumericError("non-finite gradient in parameter " + std::to_string(k) +
                                   " of shape " + shape_str(params_[k].shape()));
            }
        }
    }

    ++state_.step_count;
    const double lr = state_.learning_rate;
    if (state_.kind == OptimizerKind::sgd) {
        for (auto& p : params_) {
            const auto g = p.grad();
            if (g.empty()) continue;
            auto v = p.mutable_data();
            for (std::size_t i = 0; i < v.size(); ++i) v[i] -= lr * g[i];
        }
        return;
    }

    const double t = static_cast<double>(state_.step_count);
    const double c1 = 1.0 - std::pow(state_.beta1, t);
    const double c2 = 1.0 - std::pow(state_.beta2, t);
    for (std::size_t k = 0; k < params_.size(); ++k) {
        auto& p = params_[k];
        const auto g = p.grad();
        auto& m = state_.first_moment[k];
        auto& s = state_.second_moment[k];
        auto v = p.mutable_data();
        for (std::size_t i = 0; i < v.size(); ++i) {
            const double gi = g.empty() ? 0.0 : g[i];
            m[i] = state_.beta1 * m[i] + (1.0 - state_.beta1) * gi;
            s[i] = state_.beta2 * s[i] + (1.0 - state_.beta2) * gi * gi;
            const double mhat = m[i] / c1;
            const double shat = s[i] / c2;
            v[i] -= lr * mhat / (std::sqrt(shat) + state_.eps);
        }
    }
}

}  // namespace taprune::ad
