#pragma once

#include <span>
#include <vector>

#include "taprune/autodiff/tensor.hpp"
#include "taprune/random.hpp"

namespace taprune::gates {

/// Stretched, clamped logistic relaxation of a Bernoulli gate.
struct HardConcreteConfig {
    double beta = 2.0 / 3.0;  // temperature
    double stretch_lo = -0.1;
    double stretch_hi = 1.1;

    // Throws ConfigError unless stretch_lo < 0 < 1 < stretch_hi and beta > 0.
    void validate() const;
};

// Scalar forms.
double sample_gate(double log_alpha, double u, const HardConcreteConfig& config = {});
double prob_nonzero(double log_alpha, const HardConcreteConfig& config = {});
double deterministic_gate(double log_alpha, const HardConcreteConfig& config = {});

// Differentiable forms over a vector of log-alphas.
ad::Tensor sample_gates(const ad::Tensor& log_alpha, std::span<const double> u,
                        const HardConcreteConfig& config = {});
ad::Tensor prob_nonzero(const ad::Tensor& log_alpha, const HardConcreteConfig& config = {});
std::vector<double> deterministic_gates(std::span<const double> log_alpha,
                                        const HardConcreteConfig& config = {});

std::vector<double> draw_uniforms(Rng& rng, std::size_t count);

/// Unconstrained parameters for every structural variable of one gate set.
struct GateParams {
    ad::Tensor log_alpha;  // [K], requires_grad
    HardConcreteConfig config;

    static constexpr double init_mean = 2.0;
    static constexpr double init_sd = 0.01;

    static GateParams initialize(std::size_t count, Rng& rng, const HardConcreteConfig& config = {});
    [[nodiscard]] std::size_t size() const { return log_alpha.numel(); }
};

}  // namespace taprune::gates
