#pragma once

// Minimal dense tensor with define-by-run reverse-mode autodiff.
//
// A Tensor is a cheap handle to a shared graph node. Operations on tensors that
// require gradients record their inputs and a backward closure; backward()
// walks the recorded graph once and then releases it. Parameters are leaf
// tensors with requires_grad set.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace rrt::ag {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// While alive, operations on the current thread do not record graph nodes.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

template <typename T>
struct Node {
  Shape shape;
  std::shared_ptr<std::vector<T>> data;
  std::vector<T> grad;  // empty until a gradient flows in
  bool requires_grad = false;
  bool consumed = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::size_t numel() const { return data->size(); }
  std::vector<T>& ensure_grad() {
    if (grad.empty()) grad.assign(data->size(), T(0));
    return grad;
  }
};

template <typename T>
class Tensor {
 public:
  using NodePtr = std::shared_ptr<Node<T>>;

  Tensor() = default;
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t ndim() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->numel(); }

  std::span<const T> data() const { return {node_->data->data(), node_->data->size()}; }
  // Direct write access; for parameter initialization and optimizer updates.
  std::span<T> mutable_data() { return {node_->data->data(), node_->data->size()}; }
  T item() const;
  T at(std::size_t i) const { return (*node_->data)[i]; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return {node_->grad.data(), node_->grad.size()}; }
  std::span<T> mutable_grad() { return {node_->grad.data(), node_->grad.size()}; }
  void zero_grad() { node_->grad.clear(); }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool value);

  // Leaf view over the same storage that never receives gradients.
  Tensor detach() const;
  // Deep copy as a fresh leaf.
  Tensor clone() const;

  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

using Tensorf = Tensor<float>;
using Tensord = Tensor<double>;

// Boolean masks are byte vectors: nonzero means valid.
using Mask = std::span<const std::uint8_t>;

// -- operations ------------------------------------------------------------

// a[m,k] x b[k,n] -> [m,n]
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> transpose(const Tensor<T>& a);
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
// x[m,n] + b[n] broadcast over rows.
template <typename T> Tensor<T> add_row(const Tensor<T>& x, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T factor);
template <typename T> Tensor<T> relu(const Tensor<T>& a);
template <typename T> Tensor<T> sigmoid(const Tensor<T>& a);
template <typename T> Tensor<T> reshape(const Tensor<T>& a, Shape shape);
// 2-D concat along axis 0 (rows) or 1 (columns); 1-D inputs along axis 0.
template <typename T> Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis);
template <typename T> Tensor<T> slice_cols(const Tensor<T>& x, std::size_t start, std::size_t count);
template <typename T> Tensor<T> slice_rows(const Tensor<T>& x, std::size_t start, std::size_t count);
// Rows of table[V,d] selected by index -> [n,d].
template <typename T> Tensor<T> embedding(const Tensor<T>& table, std::span<const std::size_t> indices);
// x[m,k] w[k,n] + b[n]
template <typename T> Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b);
// Softmax over the last axis restricted to valid entries. `mask` is either
// numel(x) long or last-dim long (broadcast to every row). Masked entries get
// exactly 0; a row with no valid entry is all zeros.
template <typename T> Tensor<T> masked_softmax_lastdim(const Tensor<T>& x, Mask mask);
// Biased-variance layer normalization over the last axis.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps = T(1e-5));
// Stable -[t log s(z) + (1-t) log(1-s(z))] for a single logit.
template <typename T> Tensor<T> bce_with_logits(const Tensor<T>& logit, int target);
template <typename T> Tensor<T> sum(const Tensor<T>& a);
template <typename T> Tensor<T> mean(const Tensor<T>& a);

// Accumulates d(loss)/d(leaf) into every requires_grad leaf reachable from
// `loss`, then releases the graph. The graph cannot be replayed.
template <typename T> void backward(const Tensor<T>& loss);

}  // namespace rrt::ag
