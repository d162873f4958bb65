#include "refpaint/layers.hpp"

#include <cmath>
#include <stdexcept>

namespace refpaint {

template <typename T>
Tensor<T> ParameterSet<T>::create(const std::string& name, Shape shape, Init init) {
  if (params_.count(name) != 0) throw std::invalid_argument("duplicate parameter " + name);
  std::vector<T> data(shape.numel(), T(0));
  const double fan_in = std::max<double>(1.0, static_cast<double>(shape.c) * shape.h * shape.w);
  switch (init) {
    case Init::kZeros:
      break;
    case Init::kUniformFanIn: {
      const double bound = 1.0 / std::sqrt(fan_in);
      for (T& v : data) v = static_cast<T>(rng_.uniform(-bound, bound));
      break;
    }
    case Init::kHeNormal: {
      const double sd = std::sqrt(2.0 / fan_in);
      for (T& v : data) v = static_cast<T>(sd * rng_.normal());
      break;
    }
  }
  Tensor<T> t(shape, std::move(data), true);
  params_.emplace(name, t);
  return t;
}

template <typename T>
Tensor<T> ParameterSet<T>::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("unknown parameter " + name);
  return it->second;
}

template <typename T>
std::map<std::string, Tensor<T>> ParameterSet<T>::with_prefix(const std::string& prefix) const {
  std::map<std::string, Tensor<T>> out;
  for (const auto& [name, t] : params_) {
    if (name.compare(0, prefix.size(), prefix) == 0) out.emplace(name, t);
  }
  return out;
}

template <typename T>
void ParameterSet<T>::zero_grad() {
  for (auto& [name, t] : params_) {
    Tensor<T> p = t;
    p.zero_grad();
  }
}

template <typename T>
std::size_t ParameterSet<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : params_) n += t.numel();
  return n;
}

template <typename T>
void ParameterSet<T>::set_requires_grad(bool on) {
  for (auto& [name, t] : params_) {
    Tensor<T> p = t;
    p.set_requires_grad(on);
  }
}

template <typename T>
Conv2d<T>::Conv2d(ParameterSet<T>& ps, const std::string& name, int in_ch, int out_ch,
                  int kernel, int stride_, int padding_, int dilation_, Init init,
                  bool with_bias)
    : stride(stride_), dilation(dilation_) {
  padding = padding_ >= 0 ? padding_ : dilation_ * (kernel - 1) / 2;
  weight = ps.create(name + ".weight", {out_ch, in_ch, kernel, kernel}, init);
  if (with_bias) bias = ps.create(name + ".bias", {1, out_ch, 1, 1}, Init::kZeros);
}

template <typename T>
ConvTranspose2d<T>::ConvTranspose2d(ParameterSet<T>& ps, const std::string& name, int in_ch,
                                    int out_ch, int kernel, int stride_, int padding_)
    : stride(stride_), padding(padding_) {
  // Initialized with fan-in taken over (outC, k, k).
  weight = ps.create(name + ".weight", {in_ch, out_ch, kernel, kernel}, Init::kUniformFanIn);
  bias = ps.create(name + ".bias", {1, out_ch, 1, 1}, Init::kZeros);
}

template class ParameterSet<float>;
template class ParameterSet<double>;
template struct Conv2d<float>;
template struct Conv2d<double>;
template struct ConvTranspose2d<float>;
template struct ConvTranspose2d<double>;

}  // namespace refpaint
