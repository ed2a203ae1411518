#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "fka/errors.hpp"

namespace fka {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Thread-local switch for graph recording. Frozen-encoder forwards and
/// evaluation run with recording disabled.
class GradMode {
  public:
    static bool enabled();
    static void set_enabled(bool on);
};

class NoGradGuard {
  public:
    NoGradGuard() : previous_(GradMode::enabled()) { GradMode::set_enabled(false); }
    ~NoGradGuard() { GradMode::set_enabled(previous_); }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

  private:
    bool previous_;
};

/// One node of the dynamic tape. `backward` reads this node's grad and
/// accumulates into the grads of `inputs`.
template <typename T>
struct TensorNode {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // empty until first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode>> inputs;
    std::function<void(TensorNode&)> backward;
    const char* op = "leaf";

    void ensure_grad() {
        if (grad.empty()) grad.assign(data.size(), T(0));
    }
};

/// Dense row-major tensor handle. Copies share the underlying node; use
/// `clone()` for a deep copy.
template <typename T>
class BasicTensor {
  public:
    using value_type = T;
    using Node = TensorNode<T>;

    BasicTensor() = default;
    BasicTensor(Shape shape, std::vector<T> data, bool requires_grad = false);
    explicit BasicTensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    static BasicTensor zeros(const Shape& shape, bool requires_grad = false);
    static BasicTensor full(const Shape& shape, T value, bool requires_grad = false);
    static BasicTensor scalar(T value, bool requires_grad = false);

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t dim(std::size_t i) const;
    std::size_t numel() const { return node_->data.size(); }

    std::span<const T> data() const { return node_->data; }
    std::span<T> mutable_data() { return node_->data; }
    T operator[](std::size_t i) const { return node_->data[i]; }
    T at(std::size_t r, std::size_t c) const;
    T item() const;

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }
    bool has_grad() const { return !node_->grad.empty(); }
    /// Gradient buffer; zeros of the right size when nothing was accumulated.
    std::vector<T> grad() const;
    std::span<T> mutable_grad() {
        node_->ensure_grad();
        return node_->grad;
    }
    void zero_grad() { node_->grad.clear(); }

    /// Deep copy without graph history.
    BasicTensor clone() const;
    /// Same data, cut from the tape.
    BasicTensor detach() const { return clone(); }

    void backward() const;

    const std::shared_ptr<Node>& node() const { return node_; }

  private:
    std::shared_ptr<Node> node_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

/// Runs reverse-mode accumulation from a scalar root. Every ancestor with
/// requires_grad receives its gradient; leaf grads accumulate across calls.
template <typename T>
void backward(const BasicTensor<T>& loss);

/// Nodes reachable from `root` in topological order (inputs first). This is
/// the tape replayed in reverse by `backward`.
template <typename T>
std::vector<TensorNode<T>*> topological_order(const BasicTensor<T>& root);

/// Converts precision; result is a detached leaf.
template <typename To, typename From>
BasicTensor<To> cast(const BasicTensor<From>& src, bool requires_grad = false) {
    std::vector<To> out(src.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<To>(src[i]);
    return BasicTensor<To>(src.shape(), std::move(out), requires_grad);
}

} // namespace fka
