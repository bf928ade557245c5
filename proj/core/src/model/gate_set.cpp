#include "taprune/model/gate_set.hpp"

#include <string>

#include "taprune/autodiff/ops.hpp"
#include "taprune/error.hpp"

namespace taprune::model {

GateValues::GateValues(GateLayout layout, std::vector<double> values)
    : layout_(layout), values_(std::move(values))
{
    if (values_.size() != layout_.count()) {
        throw ShapeError("gate values hold " + std::to_string(values_.size()) + " entries, layout needs " +
                         std::to_string(layout_.count()));
    }
}

GateValues GateValues::filled(const GateLayout& layout, double value)
{
    return GateValues(layout, std::vector<double>(layout.count(), value));
}

bool GateValues::is_binary() const
{
    for (double v : values_) {
        if (v != 0.0 && v != 1.0) return false;
    }
    return true;
}

std::size_t GateValues::retained_hidden() const
{
    std::size_t n = 0;
    for (std::size_t c = 0; c < layout_.hidden_dim; ++c) n += hidden(c) != 0.0 ? 1 : 0;
    return n;
}

double mask_agreement(const GateValues& a, const GateValues& b)
{
    if (!(a.layout() == b.layout())) throw ShapeError("mask_agreement: layouts differ");
    if (a.size() == 0) return 1.0;
    std::size_t same = 0;
    for (std::size_t i = 0; i < a.size(); ++i) same += a.values()[i] == b.values()[i] ? 1 : 0;
    return static_cast<double>(same) / static_cast<double>(a.size());
}

GateSet GateSet::from_flat(const ad::Tensor& flat, const GateLayout& layout)
{
    if (flat.dim() != 1 || flat.numel() != layout.count()) {
        throw ShapeError("gate vector of shape " + ad::shape_str(flat.shape()) + " does not match " +
                         std::to_string(layout.count()) + " structural variables");
    }
    const std::size_t n = layout.num_layers;
    GateSet g;
    g.mha = ad::slice(flat, layout.mha(0), n);
    g.head = ad::reshape(ad::slice(flat, layout.head(0, 0), n * layout.num_heads), {n, layout.num_heads});
    g.ffn = ad::slice(flat, layout.ffn(0), n);
    g.fc = ad::reshape(ad::slice(flat, layout.fc(0, 0), n * layout.ffn_dim), {n, layout.ffn_dim});
    g.hidden = ad::slice(flat, layout.hidden(0), layout.hidden_dim);
    return g;
}

GateSet GateSet::constant(const GateValues& values)
{
    ad::NoGradGuard guard;
    const auto& layout = values.layout();
    return from_flat(ad::Tensor::from({layout.count()},
                                      std::vector<double>(values.values().begin(), values.values().end())),
                     layout);
}

void GateSet::validate(const ModelConfig& config) const
{
    const std::size_t n = config.num_layers;
    auto check = [](const ad::Tensor& t, const ad::Shape& want, const char* name) {
        if (!t.defined() || t.shape() != want) {
            throw ShapeError(std::string("gate family ") + name + " has shape " +
                             (t.defined() ? ad::shape_str(t.shape()) : std::string("<undefined>")) +
                             ", model config expects " + ad::shape_str(want));
        }
    };
    check(mha, {n}, "z_mha");
    check(head, {n, config.num_heads}, "z_head");
    check(ffn, {n}, "z_ffn");
    check(fc, {n, config.ffn_dim}, "z_fc");
    check(hidden, {config.hidden_dim}, "z_hidden");
}

}  // namespace taprune::model
