#include "taprune/autodiff/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "autodiff/kernels.hpp"
#include "taprune/error.hpp"

namespace taprune::ad {

namespace {

using detail::Node;

Node& parent(Node& out, std::size_t i) { return *out.parents[i]; }

// ---------------------------------------------------------------------------
// Broadcasting

struct Broadcast {
    Shape out;
    bool same = false;
    std::vector<std::size_t> stride_a;  // zero along broadcast axes
    std::vector<std::size_t> stride_b;

    // Calls fn(i, ia, ib) for every output element in row-major order.
    template <class Fn>
    void each(Fn fn) const
    {
        const std::size_t n = numel(out);
        if (same) {
            for (std::size_t i = 0; i < n; ++i) fn(i, i, i);
            return;
        }
        if (n == 0) return;
        const std::size_t rank = out.size();
        const std::size_t inner = out[rank - 1];
        const std::size_t sa = stride_a[rank - 1];
        const std::size_t sb = stride_b[rank - 1];
        std::vector<std::size_t> counter(rank, 0);
        std::size_t ia = 0;
        std::size_t ib = 0;
        for (std::size_t i = 0; i < n; i += inner) {
            for (std::size_t j = 0; j < inner; ++j) fn(i + j, ia + j * sa, ib + j * sb);
            for (std::size_t axis = rank - 1; axis-- > 0;) {
                ++counter[axis];
                ia += stride_a[axis];
                ib += stride_b[axis];
                if (counter[axis] < out[axis]) break;
                ia -= stride_a[axis] * counter[axis];
                ib -= stride_b[axis] * counter[axis];
                counter[axis] = 0;
            }
        }
    }
};

Broadcast plan_broadcast(const Shape& sa, const Shape& sb, const char* op)
{
    Broadcast plan;
    if (sa == sb) {
        plan.out = sa;
        plan.same = true;
        return plan;
    }
    const std::size_t rank = std::max(sa.size(), sb.size());
    plan.out.assign(rank, 1);
    for (std::size_t i = 0; i < rank; ++i) {
        const std::size_t da = i < rank - sa.size() ? 1 : sa[i - (rank - sa.size())];
        const std::size_t db = i < rank - sb.size() ? 1 : sb[i - (rank - sb.size())];
        if (da != db && da != 1 && db != 1) {
            throw ShapeError(std::string(op) + ": cannot broadcast shapes " + shape_str(sa) +
                             " and " + shape_str(sb));
        }
        plan.out[i] = std::max(da, db);
    }

    auto strides_for = [&](const Shape& s) {
        std::vector<std::size_t> strides(rank, 0);
        std::size_t stride = 1;
        for (std::size_t k = s.size(); k-- > 0;) {
            const std::size_t axis = k + (rank - s.size());
            strides[axis] = s[k] == 1 ? 0 : stride;
            stride *= s[k];
        }
        return strides;
    };
    plan.stride_a = strides_for(sa);
    plan.stride_b = strides_for(sb);
    return plan;
}

// f(a, b) -> value; da(a, b) and db(a, b) -> local partials.
template <class F, class DA, class DB>
Tensor binary(const Tensor& a, const Tensor& b, const char* name, F f, DA da, DB db)
{
    auto plan = std::make_shared<Broadcast>(plan_broadcast(a.shape(), b.shape(), name));
    const auto av = a.data();
    const auto bv = b.data();
    std::vector<double> out(numel(plan->out));
    plan->each([&](std::size_t i, std::size_t ia, std::size_t ib) { out[i] = f(av[ia], bv[ib]); });
    return Tensor::make_result(plan->out, std::move(out), {a, b}, [plan, da, db](Node& self) {
        Node& pa = parent(self, 0);
        Node& pb = parent(self, 1);
        const auto& g = self.grad;
        const bool ga = pa.requires_grad;
        const bool gb = pb.requires_grad;
        plan->each([&](std::size_t i, std::size_t ia, std::size_t ib) {
            const double x = pa.value[ia];
            const double y = pb.value[ib];
            if (ga) pa.grad[ia] += g[i] * da(x, y);
            if (gb) pb.grad[ib] += g[i] * db(x, y);
        });
    });
}

// f(x) -> value; df(x, y) -> derivative given input and output.
template <class F, class DF>
Tensor unary(const Tensor& x, F f, DF df)
{
    const auto xv = x.data();
    std::vector<double> out(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
    return Tensor::make_result(x.shape(), std::move(out), {x}, [df](Node& self) {
        Node& px = parent(self, 0);
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            px.grad[i] += self.grad[i] * df(px.value[i], self.value[i]);
        }
    });
}

using kernels::gemm_nn;
using kernels::gemm_nt;
using kernels::gemm_tn;

void require_rank_at_least(const Tensor& x, std::size_t rank, const char* op)
{
    if (x.dim() < rank) {
        throw ShapeError(std::string(op) + ": expected rank >= " + std::to_string(rank) +
                         ", got shape " + shape_str(x.shape()));
    }
}

}  // namespace

// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b)
{
    return binary(
        a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
        [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b)
{
    return binary(
        a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
        [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b)
{
    return binary(
        a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
        [](double x, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b)
{
    return binary(
        a, b, "div", [](double x, double y) { return x / y; },
        [](double, double y) { return 1.0 / y; }, [](double x, double y) { return -x / (y * y); });
}

Tensor scale(const Tensor& x, double factor)
{
    return unary(
        x, [factor](double v) { return v * factor; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double offset)
{
    return unary(
        x, [offset](double v) { return v + offset; }, [](double, double) { return 1.0; });
}

Tensor neg(const Tensor& x) { return scale(x, -1.0); }

Tensor square(const Tensor& x)
{
    return unary(
        x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor exp(const Tensor& x)
{
    return unary(
        x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x)
{
    return unary(
        x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor sigmoid(const Tensor& x)
{
    return unary(
        x,
        [](double v) {
            if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
            const double e = std::exp(v);
            return e / (1.0 + e);
        },
        [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& x)
{
    return unary(
        x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor gelu(const Tensor& x)
{
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
    return unary(
        x, [](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); },
        [inv_sqrt_2pi](double v, double) {
            const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
            return cdf + v * inv_sqrt_2pi * std::exp(-0.5 * v * v);
        });
}

Tensor clamp(const Tensor& x, double lo, double hi)
{
    return unary(
        x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
        [lo, hi](double v, double) { return (v > lo && v < hi) ? 1.0 : 0.0; });
}

Tensor sum(const Tensor& x)
{
    double total = 0.0;
    for (double v : x.data()) total += v;
    return Tensor::make_result(Shape{}, {total}, {x}, [](Node& self) {
        Node& px = parent(self, 0);
        const double g = self.grad[0];
        for (double& v : px.grad) v += g;
    });
}

Tensor mean(const Tensor& x)
{
    const double n = static_cast<double>(x.numel());
    return scale(sum(x), 1.0 / n);
}

namespace {

struct AxisSplit {
    std::size_t outer, len, inner;
    Shape reduced;
};

AxisSplit split_axis(const Shape& s, std::size_t axis, const char* op)
{
    if (axis >= s.size()) {
        throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                         " out of range for shape " + shape_str(s));
    }
    AxisSplit a{1, s[axis], 1, {}};
    for (std::size_t i = 0; i < axis; ++i) a.outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) a.inner *= s[i];
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i != axis) a.reduced.push_back(s[i]);
    }
    return a;
}

Tensor reduce_axis(const Tensor& x, std::size_t axis, double factor, const char* op)
{
    const auto sp = split_axis(x.shape(), axis, op);
    const auto xv = x.data();
    std::vector<double> out(sp.outer * sp.inner, 0.0);
    for (std::size_t o = 0; o < sp.outer; ++o) {
        for (std::size_t l = 0; l < sp.len; ++l) {
            const double* src = xv.data() + (o * sp.len + l) * sp.inner;
            double* dst = out.data() + o * sp.inner;
            for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += src[i];
        }
    }
    if (factor != 1.0) {
        for (double& v : out) v *= factor;
    }
    return Tensor::make_result(sp.reduced, std::move(out), {x}, [sp, factor](Node& self) {
        Node& px = parent(self, 0);
        for (std::size_t o = 0; o < sp.outer; ++o) {
            const double* g = self.grad.data() + o * sp.inner;
            for (std::size_t l = 0; l < sp.len; ++l) {
                double* dst = px.grad.data() + (o * sp.len + l) * sp.inner;
                for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += g[i] * factor;
            }
        }
    });
}

}  // namespace

Tensor sum_axis(const Tensor& x, std::size_t axis) { return reduce_axis(x, axis, 1.0, "sum_axis"); }

Tensor mean_axis(const Tensor& x, std::size_t axis)
{
    const double len = static_cast<double>(x.size(axis));
    return reduce_axis(x, axis, 1.0 / len, "mean_axis");
}

Tensor prod_last(const Tensor& x)
{
    require_rank_at_least(x, 1, "prod_last");
    const auto sp = split_axis(x.shape(), x.dim() - 1, "prod_last");
    const auto xv = x.data();
    std::vector<double> out(sp.outer, 1.0);
    for (std::size_t o = 0; o < sp.outer; ++o) {
        for (std::size_t l = 0; l < sp.len; ++l) out[o] *= xv[o * sp.len + l];
    }
    return Tensor::make_result(sp.reduced, std::move(out), {x}, [sp](Node& self) {
        Node& px = parent(self, 0);
        std::vector<double> prefix(sp.len + 1);
        std::vector<double> suffix(sp.len + 1);
        for (std::size_t o = 0; o < sp.outer; ++o) {
            const double* row = px.value.data() + o * sp.len;
            prefix[0] = 1.0;
            for (std::size_t l = 0; l < sp.len; ++l) prefix[l + 1] = prefix[l] * row[l];
            suffix[sp.len] = 1.0;
            for (std::size_t l = sp.len; l-- > 0;) suffix[l] = suffix[l + 1] * row[l];
            for (std::size_t l = 0; l < sp.len; ++l) {
                px.grad[o * sp.len + l] += self.grad[o] * prefix[l] * suffix[l + 1];
            }
        }
    });
}

Tensor reshape(const Tensor& x, Shape shape)
{
    if (numel(shape) != x.numel()) {
        throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                         shape_str(shape));
    }
    std::vector<double> out(x.data().begin(), x.data().end());
    return Tensor::make_result(std::move(shape), std::move(out), {x}, [](Node& self) {
        Node& px = parent(self, 0);
        for (std::size_t i = 0; i < self.grad.size(); ++i) px.grad[i] += self.grad[i];
    });
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& order)
{
    const Shape& in = x.shape();
    const std::size_t rank = in.size();
    if (order.size() != rank) {
        throw ShapeError("permute: order has " + std::to_string(order.size()) +
                         " axes for shape " + shape_str(in));
    }
    std::vector<bool> seen(rank, false);
    for (auto a : order) {
        if (a >= rank || seen[a]) throw ShapeError("permute: invalid axis order");
        seen[a] = true;
    }
    std::vector<std::size_t> in_stride(rank, 1);
    for (std::size_t i = rank; i-- > 1;) in_stride[i - 1] = in_stride[i] * in[i];
    Shape out_shape(rank);
    std::vector<std::size_t> stride(rank);
    for (std::size_t i = 0; i < rank; ++i) {
        out_shape[i] = in[order[i]];
        stride[i] = in_stride[order[i]];
    }

    const std::size_t n = x.numel();
    auto map = std::make_shared<std::vector<std::size_t>>(n);
    std::vector<std::size_t> counter(rank, 0);
    std::size_t src = 0;
    for (std::size_t i = 0; i < n; ++i) {
        (*map)[i] = src;
        for (std::size_t axis = rank; axis-- > 0;) {
            ++counter[axis];
            src += stride[axis];
            if (counter[axis] < out_shape[axis]) break;
            src -= stride[axis] * counter[axis];
            counter[axis] = 0;
        }
    }
    const auto xv = x.data();
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = xv[(*map)[i]];
    return Tensor::make_result(std::move(out_shape), std::move(out), {x}, [map](Node& self) {
        Node& px = parent(self, 0);
        for (std::size_t i = 0; i < self.grad.size(); ++i) px.grad[(*map)[i]] += self.grad[i];
    });
}

Tensor transpose_last(const Tensor& x)
{
    require_rank_at_least(x, 2, "transpose_last");
    std::vector<std::size_t> order(x.dim());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::swap(order[order.size() - 1], order[order.size() - 2]);
    return permute(x, order);
}

Tensor slice(const Tensor& x, std::size_t offset, std::size_t count)
{
    if (x.dim() != 1 || offset + count > x.numel()) {
        throw ShapeError("slice: [" + std::to_string(offset) + ", " +
                         std::to_string(offset + count) + ") out of range for shape " +
                         shape_str(x.shape()));
    }
    const auto xv = x.data();
    std::vector<double> out(xv.begin() + static_cast<std::ptrdiff_t>(offset),
                            xv.begin() + static_cast<std::ptrdiff_t>(offset + count));
    return Tensor::make_result(Shape{count}, std::move(out), {x}, [offset](Node& self) {
        Node& px = parent(self, 0);
        for (std::size_t i = 0; i < self.grad.size(); ++i) px.grad[offset + i] += self.grad[i];
    });
}

Tensor concat(const std::vector<Tensor>& parts)
{
    std::vector<double> out;
    std::vector<std::size_t> offsets;
    for (const auto& p : parts) {
        if (p.dim() != 1) throw ShapeError("concat: expected 1-D parts, got " + shape_str(p.shape()));
        offsets.push_back(out.size());
        out.insert(out.end(), p.data().begin(), p.data().end());
    }
    const std::size_t n = out.size();
    return Tensor::make_result(Shape{n}, std::move(out), parts, [offsets](Node& self) {
        for (std::size_t k = 0; k < self.parents.size(); ++k) {
            Node& p = *self.parents[k];
            if (!p.requires_grad) continue;
            for (std::size_t i = 0; i < p.value.size(); ++i) p.grad[i] += self.grad[offsets[k] + i];
        }
    });
}

Tensor matmul(const Tensor& a, const Tensor& b)
{
    require_rank_at_least(a, 2, "matmul");
    require_rank_at_least(b, 2, "matmul");
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    const std::size_t m = sa[sa.size() - 2];
    const std::size_t k = sa.back();
    const std::size_t n = sb.back();
    if (sb[sb.size() - 2] != k) {
        throw ShapeError("matmul: inner dimensions differ for shapes " + shape_str(sa) + " and " +
                         shape_str(sb));
    }

    Shape out_shape(sa.begin(), sa.end() - 1);
    out_shape.push_back(n);

    if (sb.size() == 2) {
        // Leading axes of a flatten into rows.
        const std::size_t rows = a.numel() / k;
        std::vector<double> out(rows * n, 0.0);
        gemm_nn(a.data().data(), b.data().data(), out.data(), rows, k, n);
        return Tensor::make_result(
            std::move(out_shape), std::move(out), {a, b}, [rows, k, n](Node& self) {
                Node& pa = parent(self, 0);
                Node& pb = parent(self, 1);
                if (pa.requires_grad) gemm_nt(self.grad.data(), pb.value.data(), pa.grad.data(), rows, k, n);
                if (pb.requires_grad) gemm_tn(pa.value.data(), self.grad.data(), pb.grad.data(), rows, k, n);
            });
    }

    if (sa.size() != sb.size() || !std::equal(sa.begin(), sa.end() - 2, sb.begin())) {
        throw ShapeError("matmul: batch axes differ for shapes " + shape_str(sa) + " and " +
                         shape_str(sb));
    }
    std::size_t batch = 1;
    for (std::size_t i = 0; i + 2 < sa.size(); ++i) batch *= sa[i];
    std::vector<double> out(batch * m * n, 0.0);
    for (std::size_t t = 0; t < batch; ++t) {
        gemm_nn(a.data().data() + t * m * k, b.data().data() + t * k * n, out.data() + t * m * n, m,
                k, n);
    }
    return Tensor::make_result(
        std::move(out_shape), std::move(out), {a, b}, [batch, m, k, n](Node& self) {
            Node& pa = parent(self, 0);
            Node& pb = parent(self, 1);
            for (std::size_t t = 0; t < batch; ++t) {
                const double* g = self.grad.data() + t * m * n;
                if (pa.requires_grad) {
                    gemm_nt(g, pb.value.data() + t * k * n, pa.grad.data() + t * m * k, m, k, n);
                }
                if (pb.requires_grad) {
                    gemm_tn(pa.value.data() + t * m * k, g, pb.grad.data() + t * k * n, m, k, n);
                }
            }
        });
}

Tensor softmax(const Tensor& x)
{
    require_rank_at_least(x, 1, "softmax");
    const std::size_t len = x.shape().back();
    const std::size_t rows = len == 0 ? 0 : x.numel() / len;
    const auto xv = x.data();
    std::vector<double> out(xv.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = xv.data() + r * len;
        double* o = out.data() + r * len;
        const double mx = *std::max_element(in, in + len);
        double z = 0.0;
        for (std::size_t j = 0; j < len; ++j) {
            o[j] = std::exp(in[j] - mx);
            z += o[j];
        }
        for (std::size_t j = 0; j < len; ++j) o[j] /= z;
    }
    return Tensor::make_result(x.shape(), std::move(out), {x}, [rows, len](Node& self) {
        Node& px = parent(self, 0);
        for (std::size_t r = 0; r < rows; ++r) {
            const double* y = self.value.data() + r * len;
            const double* g = self.grad.data() + r * len;
            double dot = 0.0;
            for (std::size_t j = 0; j < len; ++j) dot += g[j] * y[j];
            double* gx = px.grad.data() + r * len;
            for (std::size_t j = 0; j < len; ++j) gx[j] += y[j] * (g[j] - dot);
        }
    });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps)
{
    require_rank_at_least(x, 1, "layer_norm");
    const std::size_t d = x.shape().back();
    if (gamma.shape() != Shape{d} || beta.shape() != Shape{d}) {
        throw ShapeError("layer_norm: gamma " + shape_str(gamma.shape()) + " / beta " +
                         shape_str(beta.shape()) + " do not match feature size of " +
                         shape_str(x.shape()));
    }
    const std::size_t rows = d == 0 ? 0 : x.numel() / d;
    const auto xv = x.data();
    const auto gv = gamma.data();
    const auto bv = beta.data();
    auto xhat = std::make_shared<std::vector<double>>(xv.size());
    auto rstd = std::make_shared<std::vector<double>>(rows);
    std::vector<double> out(xv.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = xv.data() + r * d;
        double mu = 0.0;
        for (std::size_t j = 0; j < d; ++j) mu += in[j];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (in[j] - mu) * (in[j] - mu);
        var /= static_cast<double>(d);
        const double rs = 1.0 / std::sqrt(var + eps);
        (*rstd)[r] = rs;
        for (std::size_t j = 0; j < d; ++j) {
            const double h = (in[j] - mu) * rs;
            (*xhat)[r * d + j] = h;
            out[r * d + j] = h * gv[j] + bv[j];
        }
    }
    return Tensor::make_result(
        x.shape(), std::move(out), {x, gamma, beta}, [rows, d, xhat, rstd](Node& self) {
            Node& px = parent(self, 0);
            Node& pg = parent(self, 1);
            Node& pb = parent(self, 2);
            std::vector<double> gh(d);
            for (std::size_t r = 0; r < rows; ++r) {
                const double* g = self.grad.data() + r * d;
                const double* h = xhat->data() + r * d;
                double mean_gh = 0.0;
                double mean_ghh = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    if (pg.requires_grad) pg.grad[j] += g[j] * h[j];
                    if (pb.requires_grad) pb.grad[j] += g[j];
                    gh[j] = g[j] * pg.value[j];
                    mean_gh += gh[j];
                    mean_ghh += gh[j] * h[j];
                }
                if (!px.requires_grad) continue;
                mean_gh /= static_cast<double>(d);
                mean_ghh /= static_cast<double>(d);
                double* gx = px.grad.data() + r * d;
                const double rs = (*rstd)[r];
                for (std::size_t j = 0; j < d; ++j) gx[j] += rs * (gh[j] - mean_gh - h[j] * mean_ghh);
            }
        });
}

Tensor embedding(const Tensor& table, std::span<const int> indices, const Shape& index_shape)
{
    if (table.dim() != 2) {
        throw ShapeError("embedding: table must be [V, d], got " + shape_str(table.shape()));
    }
    if (numel(index_shape) != indices.size()) {
        throw ShapeError("embedding: index shape " + shape_str(index_shape) + " does not hold " +
                         std::to_string(indices.size()) + " indices");
    }
    const std::size_t vocab = table.size(0);
    const std::size_t d = table.size(1);
    auto ids = std::make_shared<std::vector<int>>(indices.begin(), indices.end());
    const auto tv = table.data();
    std::vector<double> out(ids->size() * d);
    for (std::size_t i = 0; i < ids->size(); ++i) {
        const int id = (*ids)[i];
        if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
            throw ShapeError("embedding: index " + std::to_string(id) + " outside table of " +
                             std::to_string(vocab) + " rows");
        }
        std::copy_n(tv.data() + static_cast<std::size_t>(id) * d, d, out.data() + i * d);
    }
    Shape out_shape = index_shape;
    out_shape.push_back(d);
    return Tensor::make_result(std::move(out_shape), std::move(out), {table}, [ids, d](Node& self) {
        Node& pt = parent(self, 0);
        for (std::size_t i = 0; i < ids->size(); ++i) {
            double* dst = pt.grad.data() + static_cast<std::size_t>((*ids)[i]) * d;
            const double* g = self.grad.data() + i * d;
            for (std::size_t j = 0; j < d; ++j) dst[j] += g[j];
        }
    });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels)
{
    if (logits.dim() != 2 || logits.size(0) != labels.size()) {
        throw ShapeError("cross_entropy: logits " + shape_str(logits.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
    }
    const std::size_t batch = logits.size(0);
    const std::size_t classes = logits.size(1);
    auto lab = std::make_shared<std::vector<int>>(labels.begin(), labels.end());
    auto probs = std::make_shared<std::vector<double>>(batch * classes);
    const auto lv = logits.data();
    double total = 0.0;
    for (std::size_t r = 0; r < batch; ++r) {
        const int y = (*lab)[r];
        if (y < 0 || static_cast<std::size_t>(y) >= classes) {
            throw ShapeError("cross_entropy: label " + std::to_string(y) + " outside " +
                             std::to_string(classes) + " classes");
        }
        const double* in = lv.data() + r * classes;
        const double mx = *std::max_element(in, in + classes);
        double z = 0.0;
        for (std::size_t j = 0; j < classes; ++j) z += std::exp(in[j] - mx);
        const double lse = mx + std::log(z);
        for (std::size_t j = 0; j < classes; ++j) (*probs)[r * classes + j] = std::exp(in[j] - lse);
        total += lse - in[static_cast<std::size_t>(y)];
    }
    const double inv = 1.0 / static_cast<double>(batch);
    return Tensor::make_result(Shape{}, {total * inv}, {logits},
                               [lab, probs, batch, classes, inv](Node& self) {
                                   Node& pl = parent(self, 0);
                                   const double g = self.grad[0] * inv;
                                   for (std::size_t r = 0; r < batch; ++r) {
                                       for (std::size_t j = 0; j < classes; ++j) {
                                           double d = (*probs)[r * classes + j];
                                           if (static_cast<int>(j) == (*lab)[r]) d -= 1.0;
                                           pl.grad[r * classes + j] += g * d;
                                       }
                                   }
                               });
}

Tensor mse(const Tensor& predictions, std::span<const double> targets)
{
    if (predictions.numel() != targets.size() ||
        (predictions.dim() == 2 && predictions.size(1) != 1) || predictions.dim() > 2) {
        throw ShapeError("mse: predictions " + shape_str(predictions.shape()) + " vs " +
                         std::to_string(targets.size()) + " targets");
    }
    auto tgt = std::make_shared<std::vector<double>>(targets.begin(), targets.end());
    const auto pv = predictions.data();
    double total = 0.0;
    for (std::size_t i = 0; i < pv.size(); ++i) total += (pv[i] - targets[i]) * (pv[i] - targets[i]);
    const double inv = 1.0 / static_cast<double>(pv.size());
    return Tensor::make_result(Shape{}, {total * inv}, {predictions}, [tgt, inv](Node& self) {
        Node& pp = parent(self, 0);
        const double g = self.grad[0] * inv;
        for (std::size_t i = 0; i < pp.value.size(); ++i) {
            pp.grad[i] += g * 2.0 * (pp.value[i] - (*tgt)[i]);
        }
    });
}

}  // namespace taprune::ad
