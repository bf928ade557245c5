#include "taprune/gates/hard_concrete.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "taprune/autodiff/ops.hpp"
#include "taprune/error.hpp"

namespace taprune::gates {

namespace {

double logistic(double x)
{
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace

void HardConcreteConfig::validate() const
{
    if (!(beta > 0.0) || !(stretch_lo < 0.0) || !(stretch_hi > 1.0)) {
        throw ConfigError("hard concrete config needs beta > 0 and stretch_lo < 0 < 1 < stretch_hi (beta=" +
                          std::to_string(beta) + ", lo=" + std::to_string(stretch_lo) +
                          ", hi=" + std::to_string(stretch_hi) + ")");
    }
}

double sample_gate(double log_alpha, double u, const HardConcreteConfig& config)
{
    if (!(u > 0.0 && u < 1.0)) {
        throw ConfigError("hard concrete sample needs u in (0, 1), got " + std::to_string(u));
    }
    const double s = logistic((std::log(u) - std::log1p(-u) + log_alpha) / config.beta);
    const double stretched = s * (config.stretch_hi - config.stretch_lo) + config.stretch_lo;
    return std::clamp(stretched, 0.0, 1.0);
}

double prob_nonzero(double log_alpha, const HardConcreteConfig& config)
{
    return logistic(log_alpha - config.beta * std::log(-config.stretch_lo / config.stretch_hi));
}

double deterministic_gate(double log_alpha, const HardConcreteConfig& config)
{
    const double stretched =
        logistic(log_alpha) * (config.stretch_hi - config.stretch_lo) + config.stretch_lo;
    return std::clamp(stretched, 0.0, 1.0);
}

ad::Tensor sample_gates(const ad::Tensor& log_alpha, std::span<const double> u,
                        const HardConcreteConfig& config)
{
    if (u.size() != log_alpha.numel()) {
        throw ShapeError("sample_gates: " + std::to_string(u.size()) + " uniforms for " +
                         std::to_string(log_alpha.numel()) + " gates");
    }
    std::vector<double> noise(u.size());
    for (std::size_t i = 0; i < u.size(); ++i) {
        if (!(u[i] > 0.0 && u[i] < 1.0)) {
            throw ConfigError("hard concrete sample needs u in (0, 1), got " + std::to_string(u[i]));
        }
        noise[i] = std::log(u[i]) - std::log1p(-u[i]);
    }
    auto logits = ad::add(log_alpha, ad::Tensor::from(log_alpha.shape(), std::move(noise)));
    auto s = ad::sigmoid(ad::scale(logits, 1.0 / config.beta));
    auto stretched = ad::add_scalar(ad::scale(s, config.stretch_hi - config.stretch_lo), config.stretch_lo);
    return ad::clamp(stretched, 0.0, 1.0);
}

ad::Tensor prob_nonzero(const ad::Tensor& log_alpha, const HardConcreteConfig& config)
{
    const double shift = config.beta * std::log(-config.stretch_lo / config.stretch_hi);
    return ad::sigmoid(ad::add_scalar(log_alpha, -shift));
}

std::vector<double> deterministic_gates(std::span<const double> log_alpha,
                                        const HardConcreteConfig& config)
{
    std::vector<double> out(log_alpha.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = deterministic_gate(log_alpha[i], config);
    return out;
}

std::vector<double> draw_uniforms(Rng& rng, std::size_t count)
{
    std::vector<double> u(count);
    for (auto& v : u) v = rng.uniform_open();
    return u;
}

GateParams GateParams::initialize(std::size_t count, Rng& rng, const HardConcreteConfig& config)
{
    config.validate();
    std::vector<double> values(count);
    for (auto& v : values) v = rng.normal(init_mean, init_sd);
    return GateParams{ad::Tensor::from({count}, std::move(values), true), config};
}

}  // namespace taprune::gates
