#pragma once

#include <span>
#include <vector>

#include "taprune/data/dataset.hpp"

namespace taprune::data {

// Fraction of rows of `logits` [n * classes] whose argmax equals the label.
double accuracy(std::span<const double> logits, std::size_t classes, std::span<const int> labels);

// Sample Pearson correlation. Throws NumericError when either side has zero
// variance.
double pearson(std::span<const double> x, std::span<const double> y);

// Accuracy or Pearson according to the task type; `outputs` as returned by
// the task head.
double score(std::span<const double> outputs, const TaskType& type, const Dataset& data);

}  // namespace taprune::data
