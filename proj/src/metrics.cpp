#include "refpaint/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace refpaint {

template <typename T>
double psnr(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "psnr");
  double se = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double d = static_cast<double>(a.data()[i]) - static_cast<double>(b.data()[i]);
    se += d * d;
  }
  const double mse = se / static_cast<double>(a.numel());
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

namespace {

std::vector<double> gaussian_window(int size, double sigma) {
  std::vector<double> w(size);
  const double c = (size - 1) / 2.0;
  double total = 0;
  for (int i = 0; i < size; ++i) total += w[i] = std::exp(-(i - c) * (i - c) / (2 * sigma * sigma));
  for (double& v : w) v /= total;
  return w;
}

// Valid-mode separable filtering of one plane.
std::vector<double> filter_valid(const std::vector<double>& in, int h, int w, const std::vector<double>& k) {
  const int n = static_cast<int>(k.size());
  const int oh = h - n + 1, ow = w - n + 1;
  std::vector<double> rows(static_cast<std::size_t>(h) * ow), out(static_cast<std::size_t>(oh) * ow);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0;
      for (int i = 0; i < n; ++i) acc += k[i] * in[static_cast<std::size_t>(y) * w + x + i];
      rows[static_cast<std::size_t>(y) * ow + x] = acc;
    }
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0;
      for (int i = 0; i < n; ++i) acc += k[i] * rows[static_cast<std::size_t>(y + i) * ow + x];
      out[static_cast<std::size_t>(y) * ow + x] = acc;
    }
  return out;
}

}  // namespace

template <typename T>
double ssim(const Tensor<T>& a, const Tensor<T>& b, const SsimOptions& o) {
  require_same_shape(a.shape(), b.shape(), "ssim");
  const Shape s = a.shape();
  if (o.window < 1 || s.h < o.window || s.w < o.window) {
    throw std::invalid_argument("ssim: image " + s.str() + " smaller than the " + std::to_string(o.window) +
                                "x" + std::to_string(o.window) + " window");
  }
  const double c1 = (o.k1 * o.dynamic_range) * (o.k1 * o.dynamic_range);
  const double c2 = (o.k2 * o.dynamic_range) * (o.k2 * o.dynamic_range);
  const auto k = gaussian_window(o.window, o.sigma);
  const std::size_t plane = s.plane();
  std::vector<double> x(plane), y(plane), xx(plane), yy(plane), xy(plane);
  double total = 0;
  std::size_t count = 0;
  for (int p = 0; p < s.n * s.c; ++p) {
    for (std::size_t i = 0; i < plane; ++i) {
      x[i] = a.data()[p * plane + i];
      y[i] = b.data()[p * plane + i];
      xx[i] = x[i] * x[i];
      yy[i] = y[i] * y[i];
      xy[i] = x[i] * y[i];
    }
    const auto mx = filter_valid(x, s.h, s.w, k), my = filter_valid(y, s.h, s.w, k);
    const auto sxx = filter_valid(xx, s.h, s.w, k), syy = filter_valid(yy, s.h, s.w, k);
    const auto sxy = filter_valid(xy, s.h, s.w, k);
    for (std::size_t i = 0; i < mx.size(); ++i) {
      const double vx = sxx[i] - mx[i] * mx[i], vy = syy[i] - my[i] * my[i], cov = sxy[i] - mx[i] * my[i];
      total += ((2 * mx[i] * my[i] + c1) * (2 * cov + c2)) /
               ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

template double psnr<float>(const Tensor<float>&, const Tensor<float>&);
template double psnr<double>(const Tensor<double>&, const Tensor<double>&);
template double ssim<float>(const Tensor<float>&, const Tensor<float>&, const SsimOptions&);
template double ssim<double>(const Tensor<double>&, const Tensor<double>&, const SsimOptions&);

}  // namespace refpaint
