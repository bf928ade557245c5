#include "taprune/pipeline/compact.hpp"

#include <algorithm>
#include <cmath>

#include "autodiff/kernels.hpp"
#include "taprune/error.hpp"

namespace taprune::pipeline {

namespace {

constexpr double ln_eps = 1e-5;

std::vector<double> pick(std::span<const double> v, const std::vector<std::size_t>& idx)
{
    std::vector<double> out(idx.size());
    for (std::size_t k = 0; k < idx.size(); ++k) out[k] = v[idx[k]];
    return out;
}

// Columns `cols` of a [rows_in, cols_in] matrix restricted to rows `rows`.
Matrix submatrix(const ad::Tensor& t, const std::vector<std::size_t>& rows, const std::vector<std::size_t>& cols)
{
    const std::size_t width = t.size(1);
    const auto v = t.data();
    Matrix m{rows.size(), cols.size(), std::vector<double>(rows.size() * cols.size())};
    for (std::size_t r = 0; r < rows.size(); ++r) {
        for (std::size_t c = 0; c < cols.size(); ++c) m.values[r * cols.size() + c] = v[rows[r] * width + cols[c]];
    }
    return m;
}

std::size_t count(const Matrix& m) { return m.values.size(); }

// Layernorm statistics over the full residual row, output restricted to cols.
void norm_select(const double* x, std::size_t d, const std::vector<std::size_t>& cols,
                 const std::vector<double>& gamma, const std::vector<double>& beta, double* out)
{
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += x[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (x[j] - mu) * (x[j] - mu);
    var /= static_cast<double>(d);
    const double rs = 1.0 / std::sqrt(var + ln_eps);
    for (std::size_t k = 0; k < cols.size(); ++k) out[k] = (x[cols[k]] - mu) * rs * gamma[k] + beta[k];
}

void add_bias_rows(std::vector<double>& m, std::size_t rows, const std::vector<double>& bias)
{
    const std::size_t n = bias.size();
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < n; ++j) m[r * n + j] += bias[j];
    }
}

}  // namespace

CompactModel compact(const model::GatedTransformer& model, const model::GateValues& mask)
{
    const auto& cfg = model.config();
    if (!(mask.layout() == model::GateLayout::of(cfg))) throw ConfigError("mask does not match model config");
    if (!mask.is_binary()) throw ConfigError("compaction needs a binary mask");

    const std::size_t d = cfg.hidden_dim;
    const std::size_t dh = cfg.head_dim();

    CompactModel out;
    out.config_ = cfg;
    for (std::size_t c = 0; c < d; ++c) {
        if (mask.hidden(c) == 1.0) out.columns_.push_back(c);
    }
    const auto& cols = out.columns_;

    out.token_embedding.assign(model.token_embedding.data().begin(), model.token_embedding.data().end());
    out.position_embedding.assign(model.position_embedding.data().begin(), model.position_embedding.data().end());
    out.final_gamma.assign(model.final_gamma.data().begin(), model.final_gamma.data().end());
    out.final_beta.assign(model.final_beta.data().begin(), model.final_beta.data().end());

    for (std::size_t i = 0; i < cfg.num_layers; ++i) {
        const auto& p = model.layers[i];
        CompactLayer layer;

        if (mask.mha(i) == 1.0) {
            CompactAttention a;
            std::vector<std::size_t> dims;  // retained q/k/v columns (head-major)
            for (std::size_t h = 0; h < cfg.num_heads; ++h) {
                if (mask.head(i, h) != 1.0) continue;
                ++a.heads;
                for (std::size_t t = 0; t < dh; ++t) dims.push_back(h * dh + t);
            }
            a.bo = pick(p.bo.data(), cols);
            if (a.heads > 0) {
                a.wq = submatrix(p.wq, cols, dims);
                a.wk = submatrix(p.wk, cols, dims);
                a.wv = submatrix(p.wv, cols, dims);
                a.bq = pick(p.bq.data(), dims);
                a.bk = pick(p.bk.data(), dims);
                a.bv = pick(p.bv.data(), dims);
                a.wo = submatrix(p.wo, dims, cols);
                a.ln_gamma = pick(p.ln1_gamma.data(), cols);
                a.ln_beta = pick(p.ln1_beta.data(), cols);
            }
            layer.attention = std::move(a);
        }

        if (mask.ffn(i) == 1.0) {
            CompactFfn f;
            std::vector<std::size_t> units;
            for (std::size_t u = 0; u < cfg.ffn_dim; ++u) {
                if (mask.fc(i, u) == 1.0) units.push_back(u);
            }
            f.units = units.size();
            f.b2 = pick(p.b2.data(), cols);
            if (f.units > 0) {
                f.w1 = submatrix(p.w1, cols, units);
                f.b1 = pick(p.b1.data(), units);
                f.w2 = submatrix(p.w2, units, cols);
                f.ln_gamma = pick(p.ln2_gamma.data(), cols);
                f.ln_beta = pick(p.ln2_beta.data(), cols);
            }
            layer.ffn = std::move(f);
        }
        out.layers_.push_back(std::move(layer));
    }
    return out;
}

std::vector<double> CompactModel::encode(const data::TokenBatch& batch) const
{
    using ad::kernels::gemm_nn;
    using ad::kernels::gemm_nt;

    const std::size_t B = batch.batch_size;
    const std::size_t L = batch.seq_len;
    const std::size_t d = config_.hidden_dim;
    const std::size_t dh = config_.head_dim();
    const std::size_t h = columns_.size();
    const std::size_t rows = B * L;
    if (L == 0 || L > config_.max_seq_len || batch.ids.size() != rows) {
        throw ShapeError("compact model: malformed token batch");
    }

    std::vector<double> x(rows * d);
    for (std::size_t r = 0; r < rows; ++r) {
        const int id = batch.ids[r];
        if (id < 0 || static_cast<std::size_t>(id) >= config_.vocab_size) {
            throw ShapeError("compact model: token id " + std::to_string(id) + " outside vocabulary");
        }
        const double* te = token_embedding.data() + static_cast<std::size_t>(id) * d;
        const double* pe = position_embedding.data() + (r % L) * d;
        for (std::size_t j = 0; j < d; ++j) x[r * d + j] = te[j] + pe[j];
    }

    std::vector<double> sel(rows * h);
    std::vector<double> out(rows * h);
    auto scatter = [&]() {
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t k = 0; k < h; ++k) x[r * d + columns_[k]] += out[r * h + k];
        }
    };
    auto select = [&](const std::vector<double>& gamma, const std::vector<double>& beta) {
        for (std::size_t r = 0; r < rows; ++r) norm_select(x.data() + r * d, d, columns_, gamma, beta, sel.data() + r * h);
    };

    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<double> scores(L * L);
    for (const auto& layer : layers_) {
        if (layer.attention) {
            const auto& a = *layer.attention;
            const std::size_t w = a.heads * dh;
            for (std::size_t r = 0; r < rows; ++r) std::copy(a.bo.begin(), a.bo.end(), out.begin() + static_cast<std::ptrdiff_t>(r * h));
            if (a.heads > 0) {
                select(a.ln_gamma, a.ln_beta);
                std::vector<double> q(rows * w, 0.0), k(rows * w, 0.0), v(rows * w, 0.0), ctx(rows * w, 0.0);
                gemm_nn(sel.data(), a.wq.values.data(), q.data(), rows, h, w);
                gemm_nn(sel.data(), a.wk.values.data(), k.data(), rows, h, w);
                gemm_nn(sel.data(), a.wv.values.data(), v.data(), rows, h, w);
                add_bias_rows(q, rows, a.bq);
                add_bias_rows(k, rows, a.bk);
                add_bias_rows(v, rows, a.bv);
                for (std::size_t b = 0; b < B; ++b) {
                    for (std::size_t hd = 0; hd < a.heads; ++hd) {
                        const std::size_t off = hd * dh;
                        for (std::size_t s = 0; s < L; ++s) {
                            const double* qs = q.data() + (b * L + s) * w + off;
                            double mx = -INFINITY;
                            for (std::size_t t = 0; t < L; ++t) {
                                const double* kt = k.data() + (b * L + t) * w + off;
                                double acc = 0.0;
                                for (std::size_t e = 0; e < dh; ++e) acc += qs[e] * kt[e];
                                scores[s * L + t] = acc * inv_sqrt_dh;
                                mx = std::max(mx, scores[s * L + t]);
                            }
                            double z = 0.0;
                            for (std::size_t t = 0; t < L; ++t) {
                                scores[s * L + t] = std::exp(scores[s * L + t] - mx);
                                z += scores[s * L + t];
                            }
                            double* cs = ctx.data() + (b * L + s) * w + off;
                            for (std::size_t t = 0; t < L; ++t) {
                                const double pst = scores[s * L + t] / z;
                                const double* vt = v.data() + (b * L + t) * w + off;
                                for (std::size_t e = 0; e < dh; ++e) cs[e] += pst * vt[e];
                            }
                        }
                    }
                }
                gemm_nn(ctx.data(), a.wo.values.data(), out.data(), rows, w, h);
            }
            scatter();
        }
        if (layer.ffn) {
            const auto& f = *layer.ffn;
            for (std::size_t r = 0; r < rows; ++r) std::copy(f.b2.begin(), f.b2.end(), out.begin() + static_cast<std::ptrdiff_t>(r * h));
            if (f.units > 0) {
                select(f.ln_gamma, f.ln_beta);
                std::vector<double> inner(rows * f.units, 0.0);
                gemm_nn(sel.data(), f.w1.values.data(), inner.data(), rows, h, f.units);
                add_bias_rows(inner, rows, f.b1);
                for (auto& u : inner) u = 0.5 * u * (1.0 + std::erf(u * 0.70710678118654752440));
                gemm_nn(inner.data(), f.w2.values.data(), out.data(), rows, f.units, h);
            }
            scatter();
        }
    }

    std::vector<double> pooled(B * d, 0.0);
    std::vector<double> normed(d);
    std::vector<std::size_t> all(d);
    for (std::size_t j = 0; j < d; ++j) all[j] = j;
    for (std::size_t r = 0; r < rows; ++r) {
        norm_select(x.data() + r * d, d, all, final_gamma, final_beta, normed.data());
        double* dst = pooled.data() + (r / L) * d;
        for (std::size_t j = 0; j < d; ++j) dst[j] += normed[j];
    }
    for (auto& v : pooled) v /= static_cast<double>(L);
    return pooled;
}

std::vector<double> apply_head(std::span<const double> pooled, std::size_t batch, const model::TaskHead& head)
{
    const std::size_t d = head.weight.size(0);
    const std::size_t arity = head.weight.size(1);
    if (pooled.size() != batch * d) throw ShapeError("apply_head: pooled features do not match head width");
    std::vector<double> out(batch * arity, 0.0);
    ad::kernels::gemm_nn(pooled.data(), head.weight.data().data(), out.data(), batch, d, arity);
    const auto bias = head.bias.data();
    for (std::size_t r = 0; r < batch; ++r) {
        for (std::size_t j = 0; j < arity; ++j) out[r * arity + j] += bias[j];
    }
    return out;
}

std::vector<double> CompactModel::predict(const data::TokenBatch& batch, const model::TaskHead& head) const
{
    return apply_head(encode(batch), batch.batch_size, head);
}

std::size_t CompactModel::prunable_parameter_count() const
{
    std::size_t n = 0;
    for (const auto& l : layers_) {
        if (l.attention) {
            const auto& a = *l.attention;
            n += count(a.wq) + count(a.wk) + count(a.wv) + count(a.wo) + a.bq.size() + a.bk.size() + a.bv.size() +
                 a.bo.size() + a.ln_gamma.size() + a.ln_beta.size();
        }
        if (l.ffn) {
            const auto& f = *l.ffn;
            n += count(f.w1) + f.b1.size() + count(f.w2) + f.b2.size() + f.ln_gamma.size() + f.ln_beta.size();
        }
    }
    return n;
}

std::size_t CompactModel::parameter_count() const
{
    return prunable_parameter_count() + token_embedding.size() + position_embedding.size() + final_gamma.size() +
           final_beta.size();
}

}  // namespace taprune::pipeline
