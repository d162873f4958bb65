#include "refpaint/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace refpaint {

std::string Shape::str() const {
  std::ostringstream os;
  os << "(" << n << ", " << c << ", " << h << ", " << w << ")";
  return os.str();
}

void require_same_shape(const Shape& a, const Shape& b, const char* what) {
  if (a != b) {
    throw ShapeError(std::string(what) + ": shape mismatch " + a.str() +
                     " vs " + b.str());
  }
}

namespace {
thread_local bool g_grad_enabled = true;
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool NoGradGuard::grad_enabled() { return g_grad_enabled; }

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data, bool requires_grad) {
  if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0) {
    throw ShapeError("negative extent in " + shape.str());
  }
  if (data.size() != shape.numel()) {
    throw ShapeError("data length " + std::to_string(data.size()) +
                     " does not match shape " + shape.str());
  }
  impl_ = std::make_shared<detail::TensorImpl<T>>();
  impl_->shape = shape;
  impl_->data = std::move(data);
  impl_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  return Tensor(shape, std::vector<T>(shape.numel(), T(0)), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  return Tensor(shape, std::vector<T>(shape.numel(), value), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return Tensor({1, 1, 1, 1}, {value}, requires_grad);
}

template <typename T>
T& Tensor<T>::at(int n, int c, int y, int x) {
  const Shape& s = impl_->shape;
  return impl_->data[((static_cast<std::size_t>(n) * s.c + c) * s.h + y) * s.w + x];
}

template <typename T>
T Tensor<T>::at(int n, int c, int y, int x) const {
  const Shape& s = impl_->shape;
  return impl_->data[((static_cast<std::size_t>(n) * s.c + c) * s.h + y) * s.w + x];
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) {
    throw ShapeError("item() on tensor of shape " + shape().str());
  }
  return impl_->data[0];
}

template <typename T>
void Tensor<T>::set_requires_grad(bool on) {
  if (!is_leaf()) throw std::logic_error("requires_grad can only be set on leaves");
  impl_->requires_grad = on;
}

template <typename T>
void Tensor<T>::zero_grad() {
  if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), T(0));
}

template <typename T>
void Tensor<T>::backward() const {
  if (numel() != 1) {
    throw ShapeError("backward() requires a scalar loss, got shape " + shape().str());
  }
  if (!impl_->requires_grad) {
    throw std::logic_error("backward() on a tensor that does not require grad");
  }
  using Impl = detail::TensorImpl<T>;

  // Iterative post-order DFS; inputs are visited in recorded order so the
  // resulting topological order (and accumulation order) is deterministic.
  std::vector<Impl*> order;
  std::unordered_set<const Impl*> visited;
  std::vector<std::pair<Impl*, std::size_t>> stack;
  stack.emplace_back(impl_.get(), 0);
  visited.insert(impl_.get());
  while (!stack.empty()) {
    auto& [cur, next] = stack.back();
    const auto* node = cur->node.get();
    if (node != nullptr && next < node->inputs.size()) {
      Impl* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) {
        stack.emplace_back(child, 0);
      }
      continue;
    }
    order.push_back(cur);
    stack.pop_back();
  }

  for (Impl* t : order) {
    if (t->node != nullptr) t->grad.assign(t->data.size(), T(0));
  }
  impl_->grad_buffer()[0] += T(1);

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Impl* t = *it;
    if (t->node != nullptr && t->node->backward) t->node->backward(*t);
  }
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  auto impl = std::make_shared<detail::TensorImpl<T>>();
  impl->shape = impl_->shape;
  impl->data = impl_->data;
  return Tensor(std::move(impl));
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  Tensor out = detach();
  out.impl_->requires_grad = impl_->requires_grad && is_leaf();
  return out;
}

template <typename T>
bool Tensor<T>::all_finite() const {
  return std::all_of(impl_->data.begin(), impl_->data.end(),
                     [](T v) { return std::isfinite(v); });
}

template <typename T>
void Tensor<T>::ensure_finite(const std::string& what) const {
  const auto& d = impl_->data;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (!std::isfinite(d[i])) {
      throw NonFiniteError(what + ": non-finite value at flat index " +
                           std::to_string(i) + " of " + shape().str());
    }
  }
}

template <typename T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> data,
                      std::vector<Tensor<T>> inputs,
                      std::function<void(const detail::TensorImpl<T>&)> backward) {
  Tensor<T> out(shape, std::move(data));
  if (!NoGradGuard::grad_enabled()) return out;
  auto node = std::make_shared<detail::Node<T>>();
  for (const auto& in : inputs) {
    if (in.defined() && in.requires_grad()) node->inputs.push_back(in.impl());
  }
  if (node->inputs.empty()) return out;
  node->op = op;
  node->backward = std::move(backward);
  out.impl()->requires_grad = true;
  out.impl()->node = std::move(node);
  return out;
}

template class Tensor<float>;
template class Tensor<double>;
template Tensor<float> make_result(const char*, Shape, std::vector<float>,
                                   std::vector<Tensor<float>>,
                                   std::function<void(const detail::TensorImpl<float>&)>);
template Tensor<double> make_result(const char*, Shape, std::vector<double>,
                                    std::vector<Tensor<double>>,
                                    std::function<void(const detail::TensorImpl<double>&)>);

}  // namespace refpaint
