#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "taprune/autodiff/tensor.hpp"

// The closed primitive set. Everything in the model and the gate machinery is
// composed from these.
namespace taprune::ad {

// Elementwise binary ops with numpy-style broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }

// Elementwise unary ops.
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double offset);
Tensor neg(const Tensor& x);
Tensor square(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor gelu(const Tensor& x);  // exact (erf) form
// Gradient passes only where lo < x < hi.
Tensor clamp(const Tensor& x, double lo, double hi);

// Reductions.
Tensor sum(const Tensor& x);   // -> scalar
Tensor mean(const Tensor& x);  // -> scalar
Tensor mean_axis(const Tensor& x, std::size_t axis);
Tensor sum_axis(const Tensor& x, std::size_t axis);
Tensor prod_last(const Tensor& x);  // product over the last axis

// Shape and data movement.
Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& order);
Tensor transpose_last(const Tensor& x);  // swaps the last two axes
// Contiguous slice [offset, offset + count) of a 1-D tensor.
Tensor slice(const Tensor& x, std::size_t offset, std::size_t count);
Tensor concat(const std::vector<Tensor>& parts);  // 1-D pieces

// a: [..., m, k]; b: [k, n] (shared across leading axes) or [..., k, n] with
// identical leading axes.
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor softmax(const Tensor& x);  // over the last axis
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

// Gathers rows of table [V, d]; result shape is index_shape + [d].
Tensor embedding(const Tensor& table, std::span<const int> indices, const Shape& index_shape);

// Mean cross-entropy of logits [B, C] against integer labels.
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);
// Mean squared error of predictions [B] (or [B, 1]) against targets.
Tensor mse(const Tensor& predictions, std::span<const double> targets);

}  // namespace taprune::ad
