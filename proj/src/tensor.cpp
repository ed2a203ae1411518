#include "fka/tensor.hpp"

#include <sstream>
#include <unordered_set>

namespace fka {

namespace {
thread_local bool g_grad_enabled = true;
}

bool GradMode::enabled() { return g_grad_enabled; }
void GradMode::set_enabled(bool on) { g_grad_enabled = on; }

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> data, bool requires_grad)
    : node_(std::make_shared<Node>()) {
    if (shape_numel(shape) != data.size()) {
        throw DimensionError("tensor shape " + shape_str(shape) + " does not match " +
                             std::to_string(data.size()) + " values");
    }
    node_->shape = std::move(shape);
    node_->data = std::move(data);
    node_->requires_grad = requires_grad;
}

template <typename T>
BasicTensor<T> BasicTensor<T>::zeros(const Shape& shape, bool requires_grad) {
    return BasicTensor(shape, std::vector<T>(shape_numel(shape), T(0)), requires_grad);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::full(const Shape& shape, T value, bool requires_grad) {
    return BasicTensor(shape, std::vector<T>(shape_numel(shape), value), requires_grad);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::scalar(T value, bool requires_grad) {
    return BasicTensor(Shape{1}, std::vector<T>{value}, requires_grad);
}

template <typename T>
std::size_t BasicTensor<T>::dim(std::size_t i) const {
    if (i >= node_->shape.size()) {
        throw DimensionError("dim " + std::to_string(i) + " out of range for " +
                             shape_str(node_->shape));
    }
    return node_->shape[i];
}

template <typename T>
T BasicTensor<T>::at(std::size_t r, std::size_t c) const {
    if (rank() != 2) throw DimensionError("at(r, c) needs a rank-2 tensor, got " + shape_str(shape()));
    return node_->data[r * node_->shape[1] + c];
}

template <typename T>
T BasicTensor<T>::item() const {
    if (numel() != 1) throw UsageError("item() on tensor of shape " + shape_str(shape()));
    return node_->data[0];
}

template <typename T>
std::vector<T> BasicTensor<T>::grad() const {
    if (node_->grad.empty()) return std::vector<T>(node_->data.size(), T(0));
    return node_->grad;
}

template <typename T>
BasicTensor<T> BasicTensor<T>::clone() const {
    return BasicTensor(node_->shape, node_->data, false);
}

template <typename T>
void BasicTensor<T>::backward() const {
    fka::backward(*this);
}

template <typename T>
std::vector<TensorNode<T>*> topological_order(const BasicTensor<T>& root) {
    std::vector<TensorNode<T>*> order;
    std::unordered_set<TensorNode<T>*> visited;
    // Iterative post-order DFS; graphs from long sequences get deep.
    std::vector<std::pair<TensorNode<T>*, std::size_t>> stack;
    stack.emplace_back(root.node().get(), 0);
    visited.insert(root.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            TensorNode<T>* child = node->inputs[next++].get();
            if (child && child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    return order;
}

template <typename T>
void backward(const BasicTensor<T>& loss) {
    if (loss.numel() != 1) {
        throw UsageError("backward() needs a scalar loss, got shape " + shape_str(loss.shape()));
    }
    if (!loss.requires_grad()) {
        throw UsageError("backward() on a tensor that does not require grad");
    }
    auto order = topological_order(loss);
    auto* root = loss.node().get();
    root->ensure_grad();
    root->grad[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorNode<T>* node = *it;
        if (node->backward && !node->grad.empty()) node->backward(*node);
    }
    // Interior grads are transient; clear them so a second backward through a
    // shared subgraph does not double count.
    for (auto* node : order) {
        if (node->backward) node->grad.clear();
    }
}

template class BasicTensor<float>;
template class BasicTensor<double>;
template void backward(const BasicTensor<float>&);
template void backward(const BasicTensor<double>&);
template std::vector<TensorNode<float>*> topological_order(const BasicTensor<float>&);
template std::vector<TensorNode<double>*> topological_order(const BasicTensor<double>&);

} // namespace fka
