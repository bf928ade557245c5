#include "taprune/autodiff/tensor.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "taprune/error.hpp"

namespace taprune::ad {

namespace {
thread_local bool g_no_grad = false;
}

std::size_t numel(const Shape& shape)
{
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape)
{
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out << ", ";
        out << shape[i];
    }
    out << ']';
    return out.str();
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad)
{
    if (ad::numel(shape) != values.size()) {
        throw ShapeError("tensor shape " + shape_str(shape) + " holds " +
                         std::to_string(ad::numel(shape)) + " values, got " +
                         std::to_string(values.size()));
    }
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad)
{
    return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad)
{
    const auto n = ad::numel(shape);
    return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad)
{
    return from(Shape{}, {value}, requires_grad);
}

Tensor Tensor::make_result(Shape shape, std::vector<double> values, std::vector<Tensor> parents,
                           std::function<void(detail::Node&)> backward)
{
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    if (!g_no_grad) {
        const bool any = std::any_of(parents.begin(), parents.end(),
                                     [](const Tensor& p) { return p.requires_grad(); });
        if (any) {
            node->requires_grad = true;
            node->backward = std::move(backward);
            node->parents.reserve(parents.size());
            for (auto& p : parents) node->parents.push_back(p.node_);
        }
    }
    return Tensor(std::move(node));
}

detail::Node& Tensor::node() const
{
    if (!node_) throw Error("use of an undefined tensor");
    return *node_;
}

const Shape& Tensor::shape() const { return node().shape; }

std::size_t Tensor::size(std::size_t axis) const
{
    const auto& s = shape();
    if (axis >= s.size()) {
        throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(s));
    }
    return s[axis];
}

std::size_t Tensor::numel() const { return node().value.size(); }

std::span<const double> Tensor::data() const { return node().value; }

std::span<double> Tensor::mutable_data() { return node().value; }

double Tensor::item() const
{
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    return node().value[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool flag) { node().requires_grad = flag; }

std::span<const double> Tensor::grad() const { return node().grad; }

bool Tensor::has_grad() const { return !node().grad.empty(); }

void Tensor::zero_grad() { node().grad.clear(); }

void Tensor::backward() const
{
    auto& root = node();
    if (root.value.size() != 1) {
        throw ShapeError("backward() needs a scalar loss, got shape " + shape_str(root.shape));
    }
    if (!root.requires_grad) return;

    // Iterative post-order DFS gives a topological order.
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> visited;
    std::vector<std::pair<detail::Node*, std::size_t>> stack{{&root, 0}};
    visited.insert(&root);
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            detail::Node* p = n->parents[next++].get();
            if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    root.ensure_grad();
    root.grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::Node* n = *it;
        if (n->backward && !n->grad.empty()) {
            for (auto& p : n->parents) {
                if (p->requires_grad) p->ensure_grad();
            }
            n->backward(*n);
            // Interior gradients are not read again.
            if (n != &root) std::vector<double>().swap(n->grad);
        }
    }
}

Tensor Tensor::detach() const { return clone(false); }

Tensor Tensor::clone(bool requires_grad) const
{
    return from(shape(), node().value, requires_grad);
}

NoGradGuard::NoGradGuard() : previous_(g_no_grad) { g_no_grad = true; }

NoGradGuard::~NoGradGuard() { g_no_grad = previous_; }

bool NoGradGuard::active() { return g_no_grad; }

}  // namespace taprune::ad
