#pragma once

// Relative-total-variation structure extraction. Texture with small windowed
// variation relative to its inherent variation is flattened while strong
// edges are kept.

#include "refpaint/tensor.hpp"

namespace refpaint {

struct RtvParams {
  double lambda = 0.01;
  double sigma = 3.0;       // Gaussian window scale in pixels; halved each pass
  double epsilon = 1e-3;    // guard on the windowed inherent variation
  double sharpness = 0.02;  // guard on the per-pixel total variation
  int iterations = 4;
  int solver_cap = 0;  // conjugate-gradient iteration cap; 0 means 10 * sqrt(H * W)

  void validate() const;
};

template <typename T>
struct RtvResult {
  Tensor<T> image;
  bool converged = true;  // false when any linear solve hit its iteration cap
  int max_solver_iterations = 0;
};

/// Structure image of a batch (N, C, H, W) with values in [0, 1]. Every
/// channel shares the same smoothing weights. The output is clamped to [0, 1].
RtvResult<float> rtv_smooth_report(const Tensor<float>& image, const RtvParams& params = {});
Tensor<float> rtv_smooth(const Tensor<float>& image, const RtvParams& params = {});

/// Same solve without the input range check or the output clamp.
RtvResult<double> rtv_smooth_unclamped(const Tensor<double>& image, const RtvParams& params = {});

}  // namespace refpaint
