#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "refpaint/tensor.hpp"

namespace refpaint {

struct AdamConfig {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct AdamMoments {
  std::vector<T> m;
  std::vector<T> v;
};

/// One bias-corrected Adam update of `param` in place. `step` is the
/// 1-based count of updates including this one. Moments are zero-initialized
/// on first use. Throws NonFiniteError (and leaves everything untouched) if
/// the gradient holds NaN or Inf.
template <typename T>
void adam_step(std::span<T> param, std::span<const T> grad, AdamMoments<T>& moments,
               std::int64_t step, const AdamConfig& cfg);

/// Adam over a named parameter set. Parameters without an accumulated
/// gradient are treated as having a zero gradient.
template <typename T>
class Adam {
 public:
  Adam(std::map<std::string, Tensor<T>> params, AdamConfig cfg);

  void step();
  void zero_grad();

  std::int64_t steps() const { return steps_; }
  void set_steps(std::int64_t s) { steps_ = s; }
  const AdamConfig& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }

  std::map<std::string, AdamMoments<T>>& moments() { return moments_; }
  const std::map<std::string, AdamMoments<T>>& moments() const { return moments_; }
  const std::map<std::string, Tensor<T>>& params() const { return params_; }

 private:
  std::map<std::string, Tensor<T>> params_;
  std::map<std::string, AdamMoments<T>> moments_;
  AdamConfig cfg_;
  std::int64_t steps_ = 0;
};

extern template class Adam<float>;
extern template class Adam<double>;

}  // namespace refpaint
