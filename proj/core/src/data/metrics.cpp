#include "taprune/data/metrics.hpp"

#include <cmath>
#include <string>

#include "taprune/error.hpp"

namespace taprune::data {

double accuracy(std::span<const double> logits, std::size_t classes, std::span<const int> labels)
{
    if (classes == 0 || logits.size() != labels.size() * classes) {
        throw ShapeError("accuracy: " + std::to_string(logits.size()) + " logits for " +
                         std::to_string(labels.size()) + " labels");
    }
    if (labels.empty()) throw ConfigError("accuracy of an empty set");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < classes; ++c) {
            if (logits[i * classes + c] > logits[i * classes + best]) best = c;
        }
        hits += static_cast<int>(best) == labels[i];
    }
    return static_cast<double>(hits) / static_cast<double>(labels.size());
}

double pearson(std::span<const double> x, std::span<const double> y)
{
    if (x.size() != y.size()) throw ShapeError("pearson: inputs differ in length");
    const double n = static_cast<double>(x.size());
    if (x.size() < 2) throw NumericError("pearson needs at least two points");
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) throw NumericError("pearson correlation undefined: zero variance");
    return sxy / std::sqrt(sxx * syy);
}

double score(std::span<const double> outputs, const TaskType& type, const Dataset& data)
{
    if (type.kind == TaskKind::classification) return accuracy(outputs, type.num_classes, data.labels);
    return pearson(outputs, data.targets);
}

}  // namespace taprune::data
