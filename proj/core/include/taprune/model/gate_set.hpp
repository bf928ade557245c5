#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "taprune/autodiff/tensor.hpp"
#include "taprune/model/config.hpp"

namespace taprune::model {

/// Plain (non-differentiable) gate values in GateLayout order. Binary masks
/// are GateValues whose entries are all 0 or 1.
class GateValues {
public:
    GateValues() = default;
    GateValues(GateLayout layout, std::vector<double> values);

    static GateValues filled(const GateLayout& layout, double value);
    static GateValues ones(const ModelConfig& config) { return filled(GateLayout::of(config), 1.0); }

    [[nodiscard]] const GateLayout& layout() const { return layout_; }
    [[nodiscard]] std::span<const double> values() const { return values_; }
    [[nodiscard]] std::span<double> values() { return values_; }
    [[nodiscard]] std::size_t size() const { return values_.size(); }

    double& mha(std::size_t layer) { return values_[layout_.mha(layer)]; }
    double& head(std::size_t layer, std::size_t h) { return values_[layout_.head(layer, h)]; }
    double& ffn(std::size_t layer) { return values_[layout_.ffn(layer)]; }
    double& fc(std::size_t layer, std::size_t unit) { return values_[layout_.fc(layer, unit)]; }
    double& hidden(std::size_t column) { return values_[layout_.hidden(column)]; }
    [[nodiscard]] double mha(std::size_t layer) const { return values_[layout_.mha(layer)]; }
    [[nodiscard]] double head(std::size_t layer, std::size_t h) const { return values_[layout_.head(layer, h)]; }
    [[nodiscard]] double ffn(std::size_t layer) const { return values_[layout_.ffn(layer)]; }
    [[nodiscard]] double fc(std::size_t layer, std::size_t unit) const { return values_[layout_.fc(layer, unit)]; }
    [[nodiscard]] double hidden(std::size_t column) const { return values_[layout_.hidden(column)]; }

    [[nodiscard]] bool is_binary() const;
    [[nodiscard]] std::size_t retained_hidden() const;

    friend bool operator==(const GateValues&, const GateValues&) = default;

private:
    GateLayout layout_;
    std::vector<double> values_;
};

// Fraction of structural units on which two binary masks agree.
double mask_agreement(const GateValues& a, const GateValues& b);

/// Realized gate tensors for the five gate families, as consumed by forward().
struct GateSet {
    ad::Tensor mha;     // [N]
    ad::Tensor head;    // [N, n_h]
    ad::Tensor ffn;     // [N]
    ad::Tensor fc;      // [N, n_f]
    ad::Tensor hidden;  // [d], shared by every layer

    // Splits a flat [K] tensor; gradients flow back into it.
    static GateSet from_flat(const ad::Tensor& flat, const GateLayout& layout);
    static GateSet constant(const GateValues& values);
    static GateSet ones(const ModelConfig& config) { return constant(GateValues::ones(config)); }

    // Throws ShapeError on any shape mismatch with the config.
    void validate(const ModelConfig& config) const;
};

}  // namespace taprune::model
