#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mimnet/error.hpp"

namespace mimnet {

using Shape = std::vector<std::size_t>;

/// Number of elements described by a shape; the empty shape is a scalar.
std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

namespace detail {

// One vertex of the computation graph. Leaves have no backward_fn.
template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until a gradient reaches this node
  bool requires_grad = false;
  bool leaf = true;
  std::vector<std::shared_ptr<Node>> parents;
  // needs[i] snapshots parents[i]->requires_grad at creation time.
  std::vector<char> needs;
  std::function<void(Node&)> backward_fn;

  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), T(0));
  }
  bool parent_needs(std::size_t i) const { return needs[i] != 0; }
  std::vector<T>& parent_grad(std::size_t i) {
    parents[i]->ensure_grad();
    return parents[i]->grad;
  }
  const std::vector<T>& parent_value(std::size_t i) const { return parents[i]->value; }
};

}  // namespace detail

/// Dense row-major array with reverse-mode differentiation.
///
/// A Tensor is a handle: copies share the same storage and graph node. Use
/// clone() for an independent leaf and detach() to cut gradient flow.
template <typename T>
class Tensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  Tensor();
  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor ones(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->value.size(); }
  std::size_t dim(std::size_t axis) const;

  std::span<const T> data() const { return node_->value; }
  /// Mutable storage; only meaningful on leaves (parameters, inputs).
  std::span<T> mutable_data() { return node_->value; }
  const std::vector<T>& values() const { return node_->value; }
  T item() const;
  T operator[](std::size_t i) const { return node_->value[i]; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on);
  bool is_leaf() const { return node_->leaf; }

  bool has_grad() const { return !node_->grad.empty(); }
  /// Gradient buffer; zeros if nothing has been accumulated.
  std::vector<T> grad() const;
  std::span<T> mutable_grad();
  void zero_grad() { node_->grad.clear(); }

  /// New leaf holding a copy of the values, outside any graph.
  Tensor detach() const;
  /// New leaf copy that keeps this tensor's requires_grad flag.
  Tensor clone() const;

  /// Reverse-mode sweep from a single-element tensor. Gradients accumulate
  /// into every reachable node that requires them.
  void backward() const;

  /// Same-node identity, not value equality.
  bool same(const Tensor& other) const { return node_ == other.node_; }

  const NodePtr& node() const { return node_; }
  static Tensor from_node(NodePtr node);

 private:
  NodePtr node_;
};

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace mimnet
