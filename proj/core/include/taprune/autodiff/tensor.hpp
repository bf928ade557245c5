#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace taprune::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tensor;

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // empty until something flows into it
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    // Receives the node whose grad is complete and accumulates into its parents.
    std::function<void(Node&)> backward;

    void ensure_grad()
    {
        if (grad.empty()) grad.assign(value.size(), 0.0);
    }
};

}  // namespace detail

/// Dense row-major tensor of doubles with an optional reverse-mode tape.
///
/// Tensors are cheap handles: copies alias the same storage. Every op in
/// ops.hpp records a node whose backward closure accumulates gradients into
/// its parents; the graph lives as long as some handle to its root does.
class Tensor {
public:
    Tensor() = default;

    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    // Used by op implementations: builds a result node wired to its parents.
    // The backward closure is dropped if no parent requires a gradient.
    static Tensor make_result(Shape shape, std::vector<double> values,
                              std::vector<Tensor> parents,
                              std::function<void(detail::Node&)> backward);

    [[nodiscard]] bool defined() const { return node_ != nullptr; }
    [[nodiscard]] const Shape& shape() const;
    [[nodiscard]] std::size_t dim() const { return shape().size(); }
    [[nodiscard]] std::size_t size(std::size_t axis) const;
    [[nodiscard]] std::size_t numel() const;

    [[nodiscard]] std::span<const double> data() const;
    // Mutable access for leaves (optimizers, initialization, tests).
    [[nodiscard]] std::span<double> mutable_data();
    [[nodiscard]] double item() const;

    [[nodiscard]] bool requires_grad() const;
    void set_requires_grad(bool flag);
    // Empty span when no gradient has reached this tensor.
    [[nodiscard]] std::span<const double> grad() const;
    [[nodiscard]] bool has_grad() const;
    void zero_grad();

    // Runs reverse-mode differentiation from this scalar.
    void backward() const;

    // Fresh leaf holding a copy of the values.
    [[nodiscard]] Tensor detach() const;
    [[nodiscard]] Tensor clone(bool requires_grad) const;

    [[nodiscard]] detail::Node& node() const;
    [[nodiscard]] const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

private:
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

    std::shared_ptr<detail::Node> node_;
};

/// While alive, ops on this thread do not record backward edges.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

    static bool active();

private:
    bool previous_;
};

}  // namespace taprune::ad
