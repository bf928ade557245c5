#pragma once

#include <cstdint>
#include <vector>

#include "taprune/autodiff/tensor.hpp"

namespace taprune::ad {

enum class OptimizerKind { sgd, adam };

struct OptimizerState {
    OptimizerKind kind = OptimizerKind::adam;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::vector<std::vector<double>> first_moment;   // adam only
    std::vector<std::vector<double>> second_moment;  // adam only
    std::uint64_t step_count = 0;
};

/// Updates a fixed set of leaf tensors from their accumulated gradients.
/// Parameters that received no gradient are treated as having zero gradient.
class Optimizer {
public:
    Optimizer(OptimizerKind kind, double learning_rate, std::vector<Tensor> params);

    // Throws NumericError, leaving every parameter untouched, if any gradient
    // is NaN or Inf.
    void step();
    void zero_grad();

    [[nodiscard]] const OptimizerState& state() const { return state_; }
    [[nodiscard]] const std::vector<Tensor>& params() const { return params_; }
    void set_learning_rate(double lr);

private:
    OptimizerState state_;
    std::vector<Tensor> params_;
};

}  // namespace taprune::ad
