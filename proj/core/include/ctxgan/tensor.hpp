#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace ctxgan {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {

// One value on the gradient tape. Leaves have no backward function; interior
// nodes propagate their own grad into their parents' grads.
template <typename T>
struct Node {
  Shape shape;
  std::shared_ptr<std::vector<T>> data;
  std::vector<T> grad;
  bool requires_grad = false;
  bool consumed = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  bool is_leaf() const { return !backward; }
  std::vector<T>& grad_buffer();
};

}  // namespace detail

/// Row-major n-d array of T with optional participation in reverse-mode
/// differentiation.
///
/// Tensors are cheap handles: copying one shares the underlying node. Values
/// are treated as immutable once created; the only in-place writers are the
/// optimizers and weight initialization, through mutable_data().
///
/// Tape rules: every op whose inputs require grad records a backward closure.
/// backward() may run once per tape. Leaf gradients (parameters, latent codes)
/// accumulate across tapes until zero_grad().
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor();
  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const;

  std::span<const T> data() const;
  std::span<T> mutable_data();
  T item() const;
  T at(std::size_t flat_index) const { return data()[flat_index]; }

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  bool has_grad() const;
  std::span<const T> grad() const;
  void zero_grad();

  /// Same storage, off the tape.
  Tensor detach() const;
  /// Independent copy of the values, off the tape.
  Tensor clone() const;

  const std::shared_ptr<detail::Node<T>>& node() const { return node_; }
  static Tensor from_node(std::shared_ptr<detail::Node<T>> node);

 private:
  std::shared_ptr<detail::Node<T>> node_;
};

/// Back-propagates from a scalar loss. Throws ArgumentError if the loss is not
/// scalar, not on the tape, or its tape was already consumed.
template <typename T>
void backward(const Tensor<T>& loss);

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace ctxgan
