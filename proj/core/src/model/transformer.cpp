#include "taprune/model/transformer.hpp"

#include <cmath>
#include <string>

#include "taprune/autodiff/ops.hpp"
#include "taprune/error.hpp"

namespace taprune::model {

namespace {

ad::Tensor random_matrix(std::size_t rows, std::size_t cols, double sd, Rng& rng)
{
    std::vector<double> v(rows * cols);
    for (auto& x : v) x = rng.normal(0.0, sd);
    return ad::Tensor::from({rows, cols}, std::move(v), true);
}

ad::Tensor vec(std::size_t n, double value) { return ad::Tensor::full({n}, value, true); }

// [B, L, d] -> [B, H, L, dh]
ad::Tensor split_heads(const ad::Tensor& x, std::size_t heads)
{
    const auto& s = x.shape();
    const std::size_t dh = s[2] / heads;
    return ad::permute(ad::reshape(x, {s[0], s[1], heads, dh}), {0, 2, 1, 3});
}

// [B, H, L, dh] -> [B, L, d]
ad::Tensor merge_heads(const ad::Tensor& x)
{
    const auto& s = x.shape();
    return ad::reshape(ad::permute(x, {0, 2, 1, 3}), {s[0], s[2], s[1] * s[3]});
}

}  // namespace

GatedTransformer::GatedTransformer(const ModelConfig& config, std::uint64_t seed) : config_(config)
{
    config_.validate();
    Rng rng(seed);
    const std::size_t d = config.hidden_dim;
    const std::size_t f = config.ffn_dim;
    const double sd_d = 1.0 / std::sqrt(static_cast<double>(d));
    const double sd_f = 1.0 / std::sqrt(static_cast<double>(f));

    token_embedding = random_matrix(config.vocab_size, d, 1.0, rng);
    position_embedding = random_matrix(config.max_seq_len, d, 0.5, rng);
    layers.resize(config.num_layers);
    for (auto& l : layers) {
        l.ln1_gamma = vec(d, 1.0);
        l.ln1_beta = vec(d, 0.0);
        l.wq = random_matrix(d, d, sd_d, rng);
        l.bq = vec(d, 0.0);
        l.wk = random_matrix(d, d, sd_d, rng);
        l.bk = vec(d, 0.0);
        l.wv = random_matrix(d, d, sd_d, rng);
        l.bv = vec(d, 0.0);
        l.wo = random_matrix(d, d, sd_d, rng);
        l.bo = vec(d, 0.0);
        l.ln2_gamma = vec(d, 1.0);
        l.ln2_beta = vec(d, 0.0);
        l.w1 = random_matrix(d, f, sd_d, rng);
        l.b1 = vec(f, 0.0);
        l.w2 = random_matrix(f, d, sd_f, rng);
        l.b2 = vec(d, 0.0);
    }
    final_gamma = vec(d, 1.0);
    final_beta = vec(d, 0.0);
}

ad::Tensor GatedTransformer::residual_stream(const data::TokenBatch& batch, const GateSet* gates) const
{
    const auto& c = config_;
    if (batch.seq_len == 0 || batch.seq_len > c.max_seq_len) {
        throw ShapeError("sequence length " + std::to_string(batch.seq_len) + " outside (0, " +
                         std::to_string(c.max_seq_len) + "]");
    }
    if (batch.ids.size() != batch.batch_size * batch.seq_len) {
        throw ShapeError("token batch holds " + std::to_string(batch.ids.size()) + " ids, expected " +
                         std::to_string(batch.batch_size) + " x " + std::to_string(batch.seq_len));
    }
    if (gates) gates->validate(c);

    const std::size_t B = batch.batch_size;
    const std::size_t L = batch.seq_len;
    const std::size_t H = c.num_heads;
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(c.head_dim()));

    std::vector<int> positions(L);
    for (std::size_t i = 0; i < L; ++i) positions[i] = static_cast<int>(i);
    ad::Tensor x = ad::add(ad::embedding(token_embedding, batch.ids, {B, L}),
                           ad::embedding(position_embedding, positions, {L}));

    ad::Tensor head_flat;
    ad::Tensor fc_flat;
    if (gates) {
        head_flat = ad::reshape(gates->head, {c.num_layers * H});
        fc_flat = ad::reshape(gates->fc, {c.num_layers * c.ffn_dim});
    }

    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto& p = layers[i];

        // Attention block.
        ad::Tensor h = ad::layer_norm(x, p.ln1_gamma, p.ln1_beta);
        if (gates) h = ad::mul(h, gates->hidden);
        auto q = split_heads(ad::add(ad::matmul(h, p.wq), p.bq), H);
        auto k = split_heads(ad::add(ad::matmul(h, p.wk), p.bk), H);
        auto v = split_heads(ad::add(ad::matmul(h, p.wv), p.bv), H);
        auto scores = ad::scale(ad::matmul(q, ad::transpose_last(k)), inv_sqrt_dh);
        auto ctx = ad::matmul(ad::softmax(scores), v);  // [B, H, L, dh]
        if (gates) ctx = ad::mul(ctx, ad::reshape(ad::slice(head_flat, i * H, H), {H, 1, 1}));
        auto attn = ad::add(ad::matmul(merge_heads(ctx), p.wo), p.bo);
        if (gates) attn = ad::mul(attn, ad::mul(ad::slice(gates->mha, i, 1), gates->hidden));
        x = ad::add(x, attn);

        // Feed-forward block.
        ad::Tensor h2 = ad::layer_norm(x, p.ln2_gamma, p.ln2_beta);
        if (gates) h2 = ad::mul(h2, gates->hidden);
        auto inner = ad::gelu(ad::add(ad::matmul(h2, p.w1), p.b1));
        if (gates) inner = ad::mul(inner, ad::slice(fc_flat, i * c.ffn_dim, c.ffn_dim));
        auto ffn = ad::add(ad::matmul(inner, p.w2), p.b2);
        if (gates) ffn = ad::mul(ffn, ad::mul(ad::slice(gates->ffn, i, 1), gates->hidden));
        x = ad::add(x, ffn);
    }
    return x;
}

ad::Tensor GatedTransformer::encode_sequence(const data::TokenBatch& batch, const GateSet* gates) const
{
    return ad::layer_norm(residual_stream(batch, gates), final_gamma, final_beta);
}

ad::Tensor GatedTransformer::encode(const data::TokenBatch& batch, const GateSet* gates) const
{
    return ad::mean_axis(encode_sequence(batch, gates), 1);
}

std::vector<NamedTensor> GatedTransformer::named_parameters(bool include_embeddings) const
{
    std::vector<NamedTensor> out;
    if (include_embeddings) {
        out.push_back({"embeddings.token", token_embedding});
        out.push_back({"embeddings.position", position_embedding});
    }
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto& l = layers[i];
        const std::string pre = "layers." + std::to_string(i) + ".";
        out.push_back({pre + "ln1.gamma", l.ln1_gamma});
        out.push_back({pre + "ln1.beta", l.ln1_beta});
        out.push_back({pre + "attn.wq", l.wq});
        out.push_back({pre + "attn.bq", l.bq});
        out.push_back({pre + "attn.wk", l.wk});
        out.push_back({pre + "attn.bk", l.bk});
        out.push_back({pre + "attn.wv", l.wv});
        out.push_back({pre + "attn.bv", l.bv});
        out.push_back({pre + "attn.wo", l.wo});
        out.push_back({pre + "attn.bo", l.bo});
        out.push_back({pre + "ln2.gamma", l.ln2_gamma});
        out.push_back({pre + "ln2.beta", l.ln2_beta});
        out.push_back({pre + "ffn.w1", l.w1});
        out.push_back({pre + "ffn.b1", l.b1});
        out.push_back({pre + "ffn.w2", l.w2});
        out.push_back({pre + "ffn.b2", l.b2});
    }
    out.push_back({"final_ln.gamma", final_gamma});
    out.push_back({"final_ln.beta", final_beta});
    return out;
}

GatedTransformer GatedTransformer::clone() const
{
    GatedTransformer copy;
    copy.config_ = config_;
    auto dup = [](const ad::Tensor& t) { return t.clone(t.requires_grad()); };
    copy.token_embedding = dup(token_embedding);
    copy.position_embedding = dup(position_embedding);
    copy.layers.reserve(layers.size());
    for (const auto& l : layers) {
        LayerParams c;
        c.ln1_gamma = dup(l.ln1_gamma);
        c.ln1_beta = dup(l.ln1_beta);
        c.wq = dup(l.wq);
        c.wk = dup(l.wk);
        c.wv = dup(l.wv);
        c.bq = dup(l.bq);
        c.bk = dup(l.bk);
        c.bv = dup(l.bv);
        c.wo = dup(l.wo);
        c.bo = dup(l.bo);
        c.ln2_gamma = dup(l.ln2_gamma);
        c.ln2_beta = dup(l.ln2_beta);
        c.w1 = dup(l.w1);
        c.b1 = dup(l.b1);
        c.w2 = dup(l.w2);
        c.b2 = dup(l.b2);
        copy.layers.push_back(std::move(c));
    }
    copy.final_gamma = dup(final_gamma);
    copy.final_beta = dup(final_beta);
    return copy;
}

void GatedTransformer::assign_from(const GatedTransformer& other)
{
    if (!(other.config_ == config_)) throw ConfigError("assign_from: model configs differ");
    auto dst = named_parameters(true);
    auto src = other.named_parameters(true);
    for (std::size_t i = 0; i < dst.size(); ++i) {
        auto out = dst[i].tensor.mutable_data();
        const auto in = src[i].tensor.data();
        std::copy(in.begin(), in.end(), out.begin());
    }
}

TaskHead TaskHead::create(std::string task_id, data::TaskType type, std::size_t hidden_dim, Rng& rng)
{
    const std::size_t arity = type.output_arity();
    if (arity == 0) throw ConfigError("task head needs at least one output");
    TaskHead head;
    head.task_id = std::move(task_id);
    head.type = type;
    head.weight = random_matrix(hidden_dim, arity, 1.0 / std::sqrt(static_cast<double>(hidden_dim)), rng);
    head.bias = vec(arity, 0.0);
    return head;
}

ad::Tensor TaskHead::apply(const ad::Tensor& pooled) const
{
    auto out = ad::add(ad::matmul(pooled, weight), bias);
    if (type.kind == data::TaskKind::regression) return ad::reshape(out, {pooled.size(0)});
    return out;
}

TaskHead TaskHead::clone() const
{
    return TaskHead{task_id, type, weight.clone(weight.requires_grad()), bias.clone(bias.requires_grad())};
}

ad::Tensor forward(const data::TokenBatch& batch, const GatedTransformer& model, const GateSet* gates,
                   const TaskHead& head)
{
    return head.apply(model.encode(batch, gates));
}

ad::Tensor task_loss(const ad::Tensor& outputs, const data::TokenBatch& batch, const data::TaskType& type)
{
    if (type.kind == data::TaskKind::classification) return ad::cross_entropy(outputs, batch.labels);
    return ad::mse(outputs, batch.targets);
}

std::vector<ad::Tensor> trainable_parameters(const GatedTransformer& model, std::span<const TaskHead> heads,
                                             bool freeze_embeddings)
{
    std::vector<ad::Tensor> out;
    for (auto& p : model.named_parameters(!freeze_embeddings)) out.push_back(p.tensor);
    for (const auto& h : heads) {
        out.push_back(h.weight);
        out.push_back(h.bias);
    }
    return out;
}

}  // namespace taprune::model
