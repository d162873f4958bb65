#pragma once

// Full-reference image quality metrics on [0, 1] images.

#include "refpaint/tensor.hpp"

namespace refpaint {

inline constexpr double kPsnrCap = 100.0;

/// 10 log10(1 / MSE) over every element, capped at kPsnrCap (so identical
/// images give exactly the cap). Throws ShapeError on mismatched shapes.
template <typename T>
double psnr(const Tensor<T>& a, const Tensor<T>& b);

struct SsimOptions {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;
};

/// Mean single-scale SSIM over every fully contained Gaussian window of every
/// (n, c) plane. Throws std::invalid_argument if a plane is smaller than the
/// window.
template <typename T>
double ssim(const Tensor<T>& a, const Tensor<T>& b, const SsimOptions& options = {});

}  // namespace refpaint
