#include "refpaint/optim.hpp"

#include <cmath>

namespace refpaint {

template <typename T>
void adam_step(std::span<T> param, std::span<const T> grad, AdamMoments<T>& moments,
               std::int64_t step, const AdamConfig& cfg) {
  if (grad.size() != param.size()) {
    throw ShapeError("adam_step: gradient length " + std::to_string(grad.size()) +
                     " != parameter length " + std::to_string(param.size()));
  }
  if (step < 1) throw std::invalid_argument("adam_step: step counter must be >= 1");
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (!std::isfinite(grad[i])) {
      throw NonFiniteError("adam_step: non-finite gradient at index " + std::to_string(i));
    }
  }
  if (moments.m.size() != param.size()) moments.m.assign(param.size(), T(0));
  if (moments.v.size() != param.size()) moments.v.assign(param.size(), T(0));

  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  const T b1 = static_cast<T>(cfg.beta1);
  const T b2 = static_cast<T>(cfg.beta2);
  for (std::size_t i = 0; i < param.size(); ++i) {
    const T g = grad[i];
    moments.m[i] = b1 * moments.m[i] + (T(1) - b1) * g;
    moments.v[i] = b2 * moments.v[i] + (T(1) - b2) * g * g;
    const double mhat = moments.m[i] / bc1;
    const double vhat = moments.v[i] / bc2;
    param[i] -= static_cast<T>(cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
  }
}

template <typename T>
Adam<T>::Adam(std::map<std::string, Tensor<T>> params, AdamConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
  for (const auto& [name, t] : params_) moments_[name] = {};
}

template <typename T>
void Adam<T>::step() {
  // Validate every gradient first so a bad step leaves no partial update.
  for (const auto& [name, t] : params_) {
    for (T g : t.grad()) {
      if (!std::isfinite(g)) throw NonFiniteError("Adam: non-finite gradient in " + name);
    }
  }
  ++steps_;
  std::vector<T> zeros;
  for (auto& [name, t] : params_) {
    Tensor<T> p = t;
    std::span<const T> g = p.grad();
    if (g.empty()) {
      zeros.assign(p.numel(), T(0));
      g = zeros;
    }
    adam_step<T>(p.data(), g, moments_[name], steps_, cfg_);
  }
}

template <typename T>
void Adam<T>::zero_grad() {
  for (auto& [name, t] : params_) {
    Tensor<T> p = t;
    p.zero_grad();
  }
}

template void adam_step<float>(std::span<float>, std::span<const float>, AdamMoments<float>&,
                               std::int64_t, const AdamConfig&);
template void adam_step<double>(std::span<double>, std::span<const double>,
                                AdamMoments<double>&, std::int64_t, const AdamConfig&);
template class Adam<float>;
template class Adam<double>;

}  // namespace refpaint
