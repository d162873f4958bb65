#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "refpaint/ops.hpp"
#include "refpaint/rng.hpp"
#include "refpaint/tensor.hpp"

namespace refpaint {

enum class Init {
  kZeros,
  kUniformFanIn,  // U(-1/sqrt(fan_in), 1/sqrt(fan_in))
  kHeNormal,      // N(0, 2 / fan_in)
};

/// Named, seeded parameter registry. Creation order fixes the random stream,
/// so two sets built by the same code with the same seed are identical.
/// Names sort lexicographically for persistence.
template <typename T>
class ParameterSet {
 public:
  explicit ParameterSet(std::uint64_t seed = 0) : rng_(seed) {}

  Tensor<T> create(const std::string& name, Shape shape, Init init);
  Tensor<T> get(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  const std::map<std::string, Tensor<T>>& all() const { return params_; }
  std::map<std::string, Tensor<T>> with_prefix(const std::string& prefix) const;

  void zero_grad();
  std::size_t scalar_count() const;
  void set_requires_grad(bool on);

 private:
  Rng rng_;
  std::map<std::string, Tensor<T>> params_;
};

/// Plain convolution layer. padding < 0 selects "same" padding for odd
/// kernels at stride 1.
template <typename T>
struct Conv2d {
  Tensor<T> weight;
  Tensor<T> bias;
  int stride = 1;
  int padding = 0;
  int dilation = 1;

  Conv2d() = default;
  Conv2d(ParameterSet<T>& ps, const std::string& name, int in_ch, int out_ch, int kernel,
         int stride = 1, int padding = -1, int dilation = 1, Init init = Init::kUniformFanIn,
         bool with_bias = true);

  Tensor<T> operator()(const Tensor<T>& x) const {
    return conv2d(x, weight, bias, stride, padding, dilation);
  }
};

template <typename T>
struct ConvTranspose2d {
  Tensor<T> weight;
  Tensor<T> bias;
  int stride = 2;
  int padding = 1;

  ConvTranspose2d() = default;
  ConvTranspose2d(ParameterSet<T>& ps, const std::string& name, int in_ch, int out_ch,
                  int kernel, int stride, int padding);

  Tensor<T> operator()(const Tensor<T>& x) const {
    return conv_transpose2d(x, weight, bias, stride, padding);
  }
};

extern template class ParameterSet<float>;
extern template class ParameterSet<double>;
extern template struct Conv2d<float>;
extern template struct Conv2d<double>;
extern template struct ConvTranspose2d<float>;
extern template struct ConvTranspose2d<double>;

}  // namespace refpaint
