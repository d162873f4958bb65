#pragma once

// Reference alignment and hole-filling operators: zero-padded bilinear
// sampling, deformable convolution, the dynamic offset estimator, the feature
// alignment module, partial convolution and feature equalization.

#include <array>
#include <optional>
#include <string>

#include "refpaint/layers.hpp"
#include "refpaint/tensor.hpp"

namespace refpaint {

/// Value of a bilinear lookup together with its partial derivatives with
/// respect to the sampling coordinates.
template <typename T>
struct SampleWithGrad {
  T value;
  T d_dy;
  T d_dx;
};

/// Bilinear lookup in one (h, w) plane. Neighbors outside the plane read as
/// zero, so any real coordinate is accepted.
template <typename T>
SampleWithGrad<T> bilinear_lookup(const T* plane, int h, int w, T y, T x);

/// Bilinear sample of feature[batch, channel] at fractional (y, x).
template <typename T>
T bilinear_sample(const Tensor<T>& feature, T y, T x, int batch, int channel);

/// Differentiable backward warp: out(n,c,y,x) = feature(n, c, y + flow(n,0,y,x),
/// x + flow(n,1,y,x)). Gradients reach both the feature and the flow.
template <typename T>
Tensor<T> warp(const Tensor<T>& feature, const Tensor<T>& flow);

/// Deformable kernel: weights (outC, inC, k, k), bias (1, outC, 1, 1).
/// Taps p_n enumerate the k x k lattice in row-major order around the center.
template <typename T>
struct DeformableKernel {
  Tensor<T> weight;
  Tensor<T> bias;

  int size() const { return weight.shape().h; }
  int taps() const { return weight.shape().h * weight.shape().w; }
};

/// Number of offset-field channels for a k x k kernel: (dy, dx) per tap,
/// channel 2n holding dy and 2n + 1 holding dx of tap n.
inline int offset_channels(int kernel_size) { return 2 * kernel_size * kernel_size; }

/// y(p0) = sum_n w_n * X(p0 + p_n + dp_n(p0)) + b with stride 1 and
/// size-preserving padding. `offsets` is (N, 2 * taps, H, W).
template <typename T>
Tensor<T> deformable_conv2d(const Tensor<T>& input, const DeformableKernel<T>& kernel,
                            const Tensor<T>& offsets);

/// Predicts an offset field from a target/reference feature pair using three
/// multi-dilation blocks (parallel 3x3 convs at dilations 1, 2, 4, fused by a
/// 1x1 conv and LeakyReLU(0.2)) and a zero-initialized 1x1 head.
template <typename T>
class OffsetEstimator {
 public:
  OffsetEstimator() = default;
  OffsetEstimator(ParameterSet<T>& ps, const std::string& prefix, int channels, int hidden,
                  int kernel_size);

  Tensor<T> operator()(const Tensor<T>& target, const Tensor<T>& reference) const;

  int kernel_size() const { return kernel_size_; }
  const Conv2d<T>& head() const { return head_; }

 private:
  struct Block {
    std::array<Conv2d<T>, 3> dilated;
    Conv2d<T> fuse;
  };
  std::array<Block, 3> blocks_;
  Conv2d<T> head_;
  int channels_ = 0;
  int kernel_size_ = 3;
};

/// Feature alignment module: warps reference features onto the input
/// features with an offset-guided deformable convolution, then fuses them
/// residually: out = conv1x1(concat(F_i, A)) + F_i.
template <typename T>
class FeatureAlign {
 public:
  struct Result {
    Tensor<T> output;
    Tensor<T> aligned;  // A, the deformably sampled reference
    Tensor<T> offsets;
  };

  FeatureAlign() = default;
  FeatureAlign(ParameterSet<T>& ps, const std::string& prefix, int channels, int hidden,
               int kernel_size = 3);

  Result operator()(const Tensor<T>& input, const Tensor<T>& reference,
                    const std::optional<Tensor<T>>& offsets_override = std::nullopt) const;

  /// The aligned branch alone for a given offset field.
  Tensor<T> align(const Tensor<T>& reference, const Tensor<T>& offsets) const;

  DeformableKernel<T>& kernel() { return kernel_; }
  const DeformableKernel<T>& kernel() const { return kernel_; }
  const OffsetEstimator<T>& estimator() const { return estimator_; }

 private:
  OffsetEstimator<T> estimator_;
  DeformableKernel<T> kernel_;
  Conv2d<T> fuse_;
};

template <typename T>
struct PartialConvResult {
  Tensor<T> output;
  Tensor<T> mask;  // (N, 1, OH, OW), 1 where the window saw any valid pixel
};

/// Throws std::invalid_argument unless every mask value is exactly 0 or 1.
template <typename T>
void validate_binary_mask(const Tensor<T>& mask);

/// Mask-aware convolution. Where the window holds s > 0 valid taps the output
/// is conv(X * M) * (N_w / s) + b, with N_w the number of window taps that lie
/// inside the image; elsewhere it is b. The mask path carries no gradient.
template <typename T>
PartialConvResult<T> partial_conv2d(const Tensor<T>& input, const Tensor<T>& mask,
                                    const Tensor<T>& weight, const Tensor<T>& bias,
                                    int stride, int padding);

/// Just the mask update of partial_conv2d for a kh x kw footprint.
template <typename T>
Tensor<T> partial_conv_mask_update(const Tensor<T>& mask, int kh, int kw, int stride,
                                   int padding);

/// Replaces the per-channel attention gates sigmoid(FC(GAP(F))) by their mean
/// and scales F by it. fc_weight is (C, C, 1, 1), fc_bias (1, C, 1, 1).
template <typename T>
Tensor<T> feature_equalize(const Tensor<T>& feature, const Tensor<T>& fc_weight,
                           const Tensor<T>& fc_bias);

/// The per-channel gates before equalization, (N, C, 1, 1).
template <typename T>
Tensor<T> channel_gates(const Tensor<T>& feature, const Tensor<T>& fc_weight,
                        const Tensor<T>& fc_bias);

template <typename T>
struct FeatureEqualizer {
  Tensor<T> fc_weight;
  Tensor<T> fc_bias;

  FeatureEqualizer() = default;
  FeatureEqualizer(ParameterSet<T>& ps, const std::string& prefix, int channels);

  Tensor<T> operator()(const Tensor<T>& f) const { return feature_equalize(f, fc_weight, fc_bias); }
};

}  // namespace refpaint
