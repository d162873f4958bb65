#pragma once

#include <vector>

#include "refpaint/tensor.hpp"

namespace refpaint {

// Elementwise. Operands must have identical shapes; the only implicit
// broadcast anywhere in the library is add_bias over channels.
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T s);
template <typename T> Tensor<T> add_scalar(const Tensor<T>& a, T s);

/// Tiles singleton extents of `a` up to `target`. Every extent of `a` must
/// equal the target extent or be 1.
template <typename T> Tensor<T> expand(const Tensor<T>& a, Shape target);

/// Adds a (1, C, 1, 1) bias to every sample and position.
template <typename T> Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias);

template <typename T> Tensor<T> relu(const Tensor<T>& x);
template <typename T> Tensor<T> leaky_relu(const Tensor<T>& x, T slope = T(0.2));
template <typename T> Tensor<T> sigmoid(const Tensor<T>& x);
template <typename T> Tensor<T> tanh(const Tensor<T>& x);
template <typename T> Tensor<T> abs(const Tensor<T>& x);
template <typename T> Tensor<T> square(const Tensor<T>& x);

// Reductions.
template <typename T> Tensor<T> sum(const Tensor<T>& x);
template <typename T> Tensor<T> mean(const Tensor<T>& x);
/// Global average pool: (N, C, H, W) -> (N, C, 1, 1).
template <typename T> Tensor<T> mean_hw(const Tensor<T>& x);
/// Channel mean: (N, C, H, W) -> (N, 1, H, W).
template <typename T> Tensor<T> mean_c(const Tensor<T>& x);

/// Per-sample, per-channel normalization, no affine terms.
template <typename T> Tensor<T> instance_norm(const Tensor<T>& x, T eps = T(1e-5));

template <typename T> Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts);
template <typename T> Tensor<T> slice_channels(const Tensor<T>& x, int begin, int count);

/// Fully connected layer on (N, F, 1, 1) input with weight (O, F, 1, 1)
/// and bias (1, O, 1, 1).
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

/// 2D cross-correlation with zero padding. weight is (outC, inC, kH, kW);
/// bias may be undefined.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 int stride = 1, int padding = 0, int dilation = 1);

/// Transposed convolution (gradient of conv2d w.r.t. its input). weight is
/// (inC, outC, kH, kW). Output extent (H - 1) * stride - 2 * padding + k.
template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const Tensor<T>& weight,
                           const Tensor<T>& bias, int stride, int padding);

/// Bilinear resize with half-pixel centers (align_corners = false).
template <typename T> Tensor<T> bilinear_resize(const Tensor<T>& x, int out_h, int out_w);

/// Gram matrix per sample: (N, C, H, W) -> (N, 1, C, C), F F^T / (C H W).
template <typename T> Tensor<T> gram(const Tensor<T>& x);

/// Output extent of a convolution along one axis.
int conv_out_extent(int in, int kernel, int stride, int padding, int dilation);

// Raw kernels shared with the deformable and partial convolutions.
namespace kernels {

template <typename T>
void im2col(const T* x, int channels, int h, int w, int kh, int kw, int stride,
            int pad, int dil, int out_h, int out_w, T* col);

template <typename T>
void col2im(const T* col, int channels, int h, int w, int kh, int kw, int stride,
            int pad, int dil, int out_h, int out_w, T* x);

// C[m x n] (+)= op(A) * op(B), row-major, where op transposes when asked.
template <typename T>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, const T* a, const T* b,
          T* c, bool accumulate);

}  // namespace kernels

}  // namespace refpaint
