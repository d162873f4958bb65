#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace refpaint {

/// Extents of a rank-4 (batch, channel, height, width) tensor.
struct Shape {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  std::size_t numel() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Throws ShapeError with `what` and both shapes when they differ.
void require_same_shape(const Shape& a, const Shape& b, const char* what);

template <typename T>
class Tensor;

namespace detail {

template <typename T>
struct TensorImpl;

template <typename T>
struct Node {
  std::string op;
  std::vector<std::shared_ptr<TensorImpl<T>>> inputs;
  // Reads out.grad and accumulates into the inputs that require grad.
  std::function<void(const TensorImpl<T>& out)> backward;
};

template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until something is accumulated
  bool requires_grad = false;
  std::shared_ptr<Node<T>> node;  // null for leaves

  // Returns the gradient buffer, allocating zeros on first use.
  T* grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad.data();
  }
};

}  // namespace detail

/// Scoped switch that stops graph recording on this thread.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

  static bool grad_enabled();

 private:
  bool previous_;
};

/// Dense NCHW tensor with reverse-mode autodiff.
///
/// A Tensor is a shared handle: copies refer to the same storage and graph
/// node, which is what lets parameters be aliased between network paths.
/// clone() produces an independent deep copy; detach() cuts the graph.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<T> data() { return impl_->data; }
  std::span<const T> data() const { return impl_->data; }
  T* ptr() { return impl_->data.data(); }
  const T* ptr() const { return impl_->data.data(); }

  T& at(int n, int c, int y, int x);
  T at(int n, int c, int y, int x) const;
  T item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool on);
  bool is_leaf() const { return impl_->node == nullptr; }
  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const T> grad() const { return impl_->grad; }
  std::span<T> grad_mut() { return impl_->grad; }
  void zero_grad();
  /// Drops the accumulator entirely (has_grad() becomes false).
  void clear_grad() { impl_->grad.clear(); }

  /// Backpropagates from this single-element tensor. Leaf gradients
  /// accumulate across calls; intermediate gradients are recomputed.
  void backward() const;

  Tensor detach() const;
  Tensor clone() const;

  bool all_finite() const;
  /// Throws NonFiniteError naming `what` if any value is NaN or Inf.
  void ensure_finite(const std::string& what) const;

  /// Identity of the underlying storage, for aliasing checks.
  const void* storage_id() const { return impl_.get(); }

  // Graph construction hooks used by operator implementations.
  const std::shared_ptr<detail::TensorImpl<T>>& impl() const { return impl_; }
  explicit Tensor(std::shared_ptr<detail::TensorImpl<T>> impl)
      : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<detail::TensorImpl<T>> impl_;
};

/// Builds an op result. When grad mode is on and any input requires grad,
/// the result records `backward` against `inputs`.
template <typename T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> data,
                      std::vector<Tensor<T>> inputs,
                      std::function<void(const detail::TensorImpl<T>&)> backward);

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace refpaint
