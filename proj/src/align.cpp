#include "refpaint/align.hpp"

#include <cmath>
#include <stdexcept>

#include "refpaint/ops.hpp"

namespace refpaint {

namespace {

template <typename T>
T* grad_of(const Tensor<T>& t) {
  return t.defined() && t.requires_grad() ? t.impl()->grad_buffer() : nullptr;
}

// Corner geometry of one bilinear lookup, reused for scatter in backward.
template <typename T>
struct Corners {
  int y0;
  int x0;
  T ly;
  T lx;
};

template <typename T>
Corners<T> corners_of(T y, T x) {
  const T fy = std::floor(y);
  const T fx = std::floor(x);
  return {static_cast<int>(fy), static_cast<int>(fx), y - fy, x - fx};
}

template <typename T>
inline T read(const T* plane, int h, int w, int y, int x) {
  return (y >= 0 && y < h && x >= 0 && x < w) ? plane[y * w + x] : T(0);
}

template <typename T>
inline void scatter(T* plane, int h, int w, const Corners<T>& c, T g) {
  const int y1 = c.y0 + 1;
  const int x1 = c.x0 + 1;
  const T w00 = (T(1) - c.ly) * (T(1) - c.lx);
  const T w01 = (T(1) - c.ly) * c.lx;
  const T w10 = c.ly * (T(1) - c.lx);
  const T w11 = c.ly * c.lx;
  if (c.y0 >= 0 && c.y0 < h) {
    if (c.x0 >= 0 && c.x0 < w) plane[c.y0 * w + c.x0] += g * w00;
    if (x1 >= 0 && x1 < w) plane[c.y0 * w + x1] += g * w01;
  }
  if (y1 >= 0 && y1 < h) {
    if (c.x0 >= 0 && c.x0 < w) plane[y1 * w + c.x0] += g * w10;
    if (x1 >= 0 && x1 < w) plane[y1 * w + x1] += g * w11;
  }
}

template <typename T>
SampleWithGrad<T> lookup(const T* plane, int h, int w, const Corners<T>& c) {
  const T v00 = read(plane, h, w, c.y0, c.x0);
  const T v01 = read(plane, h, w, c.y0, c.x0 + 1);
  const T v10 = read(plane, h, w, c.y0 + 1, c.x0);
  const T v11 = read(plane, h, w, c.y0 + 1, c.x0 + 1);
  const T ly = c.ly, lx = c.lx;
  const T value = (T(1) - ly) * ((T(1) - lx) * v00 + lx * v01) + ly * ((T(1) - lx) * v10 + lx * v11);
  const T d_dy = (T(1) - lx) * (v10 - v00) + lx * (v11 - v01);
  const T d_dx = (T(1) - ly) * (v01 - v00) + ly * (v11 - v10);
  return {value, d_dy, d_dx};
}

}  // namespace

template <typename T>
SampleWithGrad<T> bilinear_lookup(const T* plane, int h, int w, T y, T x) {
  return lookup(plane, h, w, corners_of(y, x));
}

template <typename T>
T bilinear_sample(const Tensor<T>& feature, T y, T x, int batch, int channel) {
  const Shape s = feature.shape();
  if (batch < 0 || batch >= s.n || channel < 0 || channel >= s.c) {
    throw ShapeError("bilinear_sample: plane index outside " + s.str());
  }
  const T* plane = feature.ptr() + (static_cast<std::size_t>(batch) * s.c + channel) * s.plane();
  return bilinear_lookup(plane, s.h, s.w, y, x).value;
}

template <typename T>
Tensor<T> warp(const Tensor<T>& feature, const Tensor<T>& flow) {
  const Shape s = feature.shape();
  if (flow.shape() != Shape{s.n, 2, s.h, s.w}) {
    throw ShapeError("warp: flow " + flow.shape().str() + " does not match feature " + s.str());
  }
  const std::size_t plane = s.plane();
  std::vector<T> out(s.numel());
  for (int n = 0; n < s.n; ++n) {
    const T* fy = flow.ptr() + static_cast<std::size_t>(n) * 2 * plane;
    const T* fx = fy + plane;
    for (int c = 0; c < s.c; ++c) {
      const T* src = feature.ptr() + (static_cast<std::size_t>(n) * s.c + c) * plane;
      T* dst = out.data() + (static_cast<std::size_t>(n) * s.c + c) * plane;
      for (int y = 0; y < s.h; ++y) {
        for (int x = 0; x < s.w; ++x) {
          const int p = y * s.w + x;
          dst[p] = bilinear_lookup(src, s.h, s.w, static_cast<T>(y) + fy[p], static_cast<T>(x) + fx[p]).value;
        }
      }
    }
  }
  return make_result<T>("warp", s, std::move(out), {feature, flow},
                        [feature, flow, s, plane](const detail::TensorImpl<T>& o) {
                          T* gf = grad_of(feature);
                          T* gflow = grad_of(flow);
                          for (int n = 0; n < s.n; ++n) {
                            const T* fy = flow.ptr() + static_cast<std::size_t>(n) * 2 * plane;
                            const T* fx = fy + plane;
                            for (int c = 0; c < s.c; ++c) {
                              const std::size_t base = (static_cast<std::size_t>(n) * s.c + c) * plane;
                              const T* src = feature.ptr() + base;
                              for (int y = 0; y < s.h; ++y) {
                                for (int x = 0; x < s.w; ++x) {
                                  const int p = y * s.w + x;
                                  const T g = o.grad[base + p];
                                  const auto cr = corners_of(static_cast<T>(y) + fy[p], static_cast<T>(x) + fx[p]);
                                  if (gf != nullptr) scatter(gf + base, s.h, s.w, cr, g);
                                  if (gflow != nullptr) {
                                    const auto sg = lookup(src, s.h, s.w, cr);
                                    gflow[static_cast<std::size_t>(n) * 2 * plane + p] += g * sg.d_dy;
                                    gflow[(static_cast<std::size_t>(n) * 2 + 1) * plane + p] += g * sg.d_dx;
                                  }
                                }
                              }
                            }
                          }
                        });
}

// ---------------------------------------------------------------------------
// Deformable convolution

namespace {

// Sampling geometry for every (tap, output position) of one sample.
template <typename T>
std::vector<Corners<T>> deform_geometry(const T* offsets, int k, int h, int w) {
  const int taps = k * k;
  const int pad = (k - 1) / 2;
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  std::vector<Corners<T>> geo(taps * plane);
  for (int t = 0; t < taps; ++t) {
    const int ky = t / k;
    const int kx = t % k;
    const T* dy = offsets + (2 * t) * plane;
    const T* dx = offsets + (2 * t + 1) * plane;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const std::size_t p = static_cast<std::size_t>(y) * w + x;
        geo[t * plane + p] = corners_of(static_cast<T>(y - pad + ky) + dy[p],
                                        static_cast<T>(x - pad + kx) + dx[p]);
      }
    }
  }
  return geo;
}

template <typename T>
void deform_im2col(const T* x, int channels, int h, int w, int taps,
                   const std::vector<Corners<T>>& geo, T* col) {
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int c = 0; c < channels; ++c) {
    const T* src = x + c * plane;
    for (int t = 0; t < taps; ++t) {
      T* row = col + (static_cast<std::size_t>(c) * taps + t) * plane;
      const Corners<T>* g = geo.data() + t * plane;
      for (std::size_t p = 0; p < plane; ++p) row[p] = lookup(src, h, w, g[p]).value;
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> deformable_conv2d(const Tensor<T>& input, const DeformableKernel<T>& kernel,
                            const Tensor<T>& offsets) {
  const Shape xs = input.shape();
  const Shape ws = kernel.weight.shape();
  if (ws.h != ws.w || ws.h % 2 == 0) {
    throw ShapeError("deformable_conv2d: kernel must be square with odd size, got " + ws.str());
  }
  if (ws.c != xs.c) {
    throw ShapeError("deformable_conv2d: weight " + ws.str() + " vs input " + xs.str());
  }
  const int k = ws.h;
  const int taps = k * k;
  const Shape os = offsets.shape();
  if (os.c != 2 * taps) {
    throw ShapeError("deformable_conv2d: offset field has " + std::to_string(os.c) +
                     " channels, expected 2 * " + std::to_string(taps));
  }
  if (os.n != xs.n || os.h != xs.h || os.w != xs.w) {
    throw ShapeError("deformable_conv2d: offset field " + os.str() +
                     " does not match output extent of " + xs.str());
  }
  if (kernel.bias.defined() && kernel.bias.shape() != Shape{1, ws.n, 1, 1}) {
    throw ShapeError("deformable_conv2d: bias " + kernel.bias.shape().str() + " mismatch");
  }
  const int plane = xs.h * xs.w;
  const int kdim = xs.c * taps;
  const Shape ys{xs.n, ws.n, xs.h, xs.w};
  std::vector<T> out(ys.numel());
  std::vector<T> col(static_cast<std::size_t>(kdim) * plane);
  for (int n = 0; n < xs.n; ++n) {
    const auto geo = deform_geometry(offsets.ptr() + static_cast<std::size_t>(n) * os.c * plane,
                                     k, xs.h, xs.w);
    deform_im2col(input.ptr() + static_cast<std::size_t>(n) * xs.c * plane, xs.c, xs.h, xs.w,
                  taps, geo, col.data());
    T* y = out.data() + static_cast<std::size_t>(n) * ws.n * plane;
    kernels::gemm(false, false, ws.n, plane, kdim, kernel.weight.ptr(), col.data(), y, false);
    if (kernel.bias.defined()) {
      for (int oc = 0; oc < ws.n; ++oc) {
        for (int p = 0; p < plane; ++p) y[oc * plane + p] += kernel.bias.data()[oc];
      }
    }
  }
  const Tensor<T> weight = kernel.weight;
  const Tensor<T> bias = kernel.bias;
  return make_result<T>(
      "deformable_conv2d", ys, std::move(out), {input, weight, bias, offsets},
      [input, weight, bias, offsets, xs, ws, k, taps, plane, kdim](const detail::TensorImpl<T>& o) {
        T* gx = grad_of(input);
        T* gw = grad_of(weight);
        T* gb = grad_of(bias);
        T* goff = grad_of(offsets);
        std::vector<T> col(static_cast<std::size_t>(kdim) * plane);
        std::vector<T> gcol(static_cast<std::size_t>(kdim) * plane);
        for (int n = 0; n < xs.n; ++n) {
          const T* gy = o.grad.data() + static_cast<std::size_t>(n) * ws.n * plane;
          const T* xn = input.ptr() + static_cast<std::size_t>(n) * xs.c * plane;
          const auto geo = deform_geometry(
              offsets.ptr() + static_cast<std::size_t>(n) * 2 * taps * plane, k, xs.h, xs.w);
          if (gw != nullptr) {
            deform_im2col(xn, xs.c, xs.h, xs.w, taps, geo, col.data());
            kernels::gemm(false, true, ws.n, kdim, plane, gy, col.data(), gw, true);
          }
          if (gb != nullptr) {
            for (int oc = 0; oc < ws.n; ++oc) {
              T acc = 0;
              for (int p = 0; p < plane; ++p) acc += gy[oc * plane + p];
              gb[oc] += acc;
            }
          }
          if (gx == nullptr && goff == nullptr) continue;
          kernels::gemm(true, false, kdim, plane, ws.n, weight.ptr(), gy, gcol.data(), false);
          T* gxn = gx != nullptr ? gx + static_cast<std::size_t>(n) * xs.c * plane : nullptr;
          T* goffn = goff != nullptr ? goff + static_cast<std::size_t>(n) * 2 * taps * plane : nullptr;
          for (int c = 0; c < xs.c; ++c) {
            const T* src = xn + static_cast<std::size_t>(c) * plane;
            for (int t = 0; t < taps; ++t) {
              const T* grow = gcol.data() + (static_cast<std::size_t>(c) * taps + t) * plane;
              const Corners<T>* g = geo.data() + static_cast<std::size_t>(t) * plane;
              for (int p = 0; p < plane; ++p) {
                const T gv = grow[p];
                if (gv == T(0)) continue;
                if (gxn != nullptr) scatter(gxn + static_cast<std::size_t>(c) * plane, xs.h, xs.w, g[p], gv);
                if (goffn != nullptr) {
                  const auto sg = lookup(src, xs.h, xs.w, g[p]);
                  goffn[(2 * t) * static_cast<std::size_t>(plane) + p] += gv * sg.d_dy;
                  goffn[(2 * t + 1) * static_cast<std::size_t>(plane) + p] += gv * sg.d_dx;
                }
              }
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Offset estimator and alignment module

template <typename T>
OffsetEstimator<T>::OffsetEstimator(ParameterSet<T>& ps, const std::string& prefix,
                                    int channels, int hidden, int kernel_size)
    : channels_(channels), kernel_size_(kernel_size) {
  static constexpr std::array<int, 3> kDilations{1, 2, 4};
  int in = 2 * channels;
  for (int b = 0; b < 3; ++b) {
    const std::string bp = prefix + ".block" + std::to_string(b);
    for (int d = 0; d < 3; ++d) {
      blocks_[b].dilated[d] = Conv2d<T>(ps, bp + ".dil" + std::to_string(kDilations[d]), in,
                                        hidden, 3, 1, kDilations[d], kDilations[d]);
    }
    blocks_[b].fuse = Conv2d<T>(ps, bp + ".fuse", 3 * hidden, hidden, 1);
    in = hidden;
  }
  // Zero head: training starts from the identity alignment.
  head_ = Conv2d<T>(ps, prefix + ".head", hidden, offset_channels(kernel_size), 1, 1, 0, 1,
                    Init::kZeros);
}

template <typename T>
Tensor<T> OffsetEstimator<T>::operator()(const Tensor<T>& target,
                                         const Tensor<T>& reference) const {
  require_same_shape(target.shape(), reference.shape(), "offset estimator");
  Tensor<T> h = concat_channels<T>({target, reference});
  for (const Block& b : blocks_) {
    h = concat_channels<T>({b.dilated[0](h), b.dilated[1](h), b.dilated[2](h)});
    h = leaky_relu(b.fuse(h), T(0.2));
  }
  return head_(h);
}

template <typename T>
FeatureAlign<T>::FeatureAlign(ParameterSet<T>& ps, const std::string& prefix, int channels,
                              int hidden, int kernel_size)
    : estimator_(ps, prefix + ".offsets", channels, hidden, kernel_size) {
  kernel_.weight = ps.create(prefix + ".deform.weight",
                             {channels, channels, kernel_size, kernel_size}, Init::kUniformFanIn);
  kernel_.bias = ps.create(prefix + ".deform.bias", {1, channels, 1, 1}, Init::kZeros);
  fuse_ = Conv2d<T>(ps, prefix + ".fuse", 2 * channels, channels, 1);
}

template <typename T>
Tensor<T> FeatureAlign<T>::align(const Tensor<T>& reference, const Tensor<T>& offsets) const {
  return deformable_conv2d(reference, kernel_, offsets);
}

template <typename T>
typename FeatureAlign<T>::Result FeatureAlign<T>::operator()(
    const Tensor<T>& input, const Tensor<T>& reference,
    const std::optional<Tensor<T>>& offsets_override) const {
  require_same_shape(input.shape(), reference.shape(), "feature_align");
  Tensor<T> offsets = offsets_override ? *offsets_override : estimator_(input, reference);
  Tensor<T> aligned = align(reference, offsets);
  Tensor<T> fused = add(fuse_(concat_channels<T>({input, aligned})), input);
  return {fused, aligned, offsets};
}

// ---------------------------------------------------------------------------
// Partial convolution

template <typename T>
void validate_binary_mask(const Tensor<T>& mask) {
  for (T v : mask.data()) {
    if (v != T(0) && v != T(1)) {
      throw std::invalid_argument("mask values must be 0 or 1, found " + std::to_string(v));
    }
  }
}

namespace {

struct WindowCounts {
  std::vector<double> valid;   // s: valid taps per output position
  std::vector<double> inside;  // N_w: in-image taps per output position
  int out_h;
  int out_w;
};

template <typename T>
WindowCounts window_counts(const Tensor<T>& mask, int kh, int kw, int stride, int padding) {
  const Shape ms = mask.shape();
  WindowCounts wc;
  wc.out_h = conv_out_extent(ms.h, kh, stride, padding, 1);
  wc.out_w = conv_out_extent(ms.w, kw, stride, padding, 1);
  if (wc.out_h <= 0 || wc.out_w <= 0) throw ShapeError("partial_conv2d: zero-sized output");
  const std::size_t plane = static_cast<std::size_t>(wc.out_h) * wc.out_w;
  wc.valid.assign(ms.n * plane, 0.0);
  wc.inside.assign(plane, 0.0);
  for (int oy = 0; oy < wc.out_h; ++oy) {
    for (int ox = 0; ox < wc.out_w; ++ox) {
      const std::size_t p = static_cast<std::size_t>(oy) * wc.out_w + ox;
      for (int ky = 0; ky < kh; ++ky) {
        const int iy = oy * stride - padding + ky;
        if (iy < 0 || iy >= ms.h) continue;
        for (int kx = 0; kx < kw; ++kx) {
          const int ix = ox * stride - padding + kx;
          if (ix < 0 || ix >= ms.w) continue;
          wc.inside[p] += 1.0;
          for (int n = 0; n < ms.n; ++n) {
            wc.valid[n * plane + p] += static_cast<double>(mask.at(n, 0, iy, ix));
          }
        }
      }
    }
  }
  return wc;
}

}  // namespace

template <typename T>
Tensor<T> partial_conv_mask_update(const Tensor<T>& mask, int kh, int kw, int stride,
                                   int padding) {
  if (mask.shape().c != 1) throw ShapeError("partial conv mask must be single-channel");
  validate_binary_mask(mask);
  const auto wc = window_counts(mask, kh, kw, stride, padding);
  std::vector<T> m(wc.valid.size());
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = wc.valid[i] > 0.0 ? T(1) : T(0);
  return Tensor<T>({mask.shape().n, 1, wc.out_h, wc.out_w}, std::move(m));
}

template <typename T>
PartialConvResult<T> partial_conv2d(const Tensor<T>& input, const Tensor<T>& mask,
                                    const Tensor<T>& weight, const Tensor<T>& bias,
                                    int stride, int padding) {
  const Shape xs = input.shape();
  const Shape ms = mask.shape();
  if (ms.c != 1 || ms.n != xs.n || ms.h != xs.h || ms.w != xs.w) {
    throw ShapeError("partial_conv2d: mask " + ms.str() + " must be single-channel with the "
                     "batch and spatial extent of input " + xs.str());
  }
  validate_binary_mask(mask);
  const Shape ws = weight.shape();
  const auto wc = window_counts(mask, ws.h, ws.w, stride, padding);
  const std::size_t plane = static_cast<std::size_t>(wc.out_h) * wc.out_w;

  std::vector<T> ratio(wc.valid.size());
  std::vector<T> updated(wc.valid.size());
  for (std::size_t i = 0; i < ratio.size(); ++i) {
    const double s = wc.valid[i];
    ratio[i] = s > 0.0 ? static_cast<T>(wc.inside[i % plane] / s) : T(0);
    updated[i] = s > 0.0 ? T(1) : T(0);
  }
  const Shape rs{xs.n, 1, wc.out_h, wc.out_w};
  const Tensor<T> ratio_t(rs, std::move(ratio));
  const Tensor<T> mask_const = mask.detach();

  Tensor<T> masked = mul(input, expand(mask_const, xs));
  Tensor<T> raw = conv2d(masked, weight, Tensor<T>(), stride, padding, 1);
  Tensor<T> out = mul(raw, expand(ratio_t, raw.shape()));
  if (bias.defined()) out = add_bias(out, bias);
  return {out, Tensor<T>(rs, std::move(updated))};
}

// ---------------------------------------------------------------------------
// Feature equalization

template <typename T>
Tensor<T> channel_gates(const Tensor<T>& feature, const Tensor<T>& fc_weight,
                        const Tensor<T>& fc_bias) {
  return sigmoid(linear(mean_hw(feature), fc_weight, fc_bias));
}

template <typename T>
Tensor<T> feature_equalize(const Tensor<T>& feature, const Tensor<T>& fc_weight,
                           const Tensor<T>& fc_bias) {
  const Tensor<T> gates = channel_gates(feature, fc_weight, fc_bias);
  const Tensor<T> common = mean_c(gates);  // (N, 1, 1, 1)
  return mul(feature, expand(common, feature.shape()));
}

template <typename T>
FeatureEqualizer<T>::FeatureEqualizer(ParameterSet<T>& ps, const std::string& prefix,
                                      int channels) {
  fc_weight = ps.create(prefix + ".fc.weight", {channels, channels, 1, 1}, Init::kUniformFanIn);
  fc_bias = ps.create(prefix + ".fc.bias", {1, channels, 1, 1}, Init::kZeros);
}

#define REFPAINT_INSTANTIATE_ALIGN(T)                                                        \
  template SampleWithGrad<T> bilinear_lookup(const T*, int, int, T, T);                      \
  template T bilinear_sample(const Tensor<T>&, T, T, int, int);                              \
  template Tensor<T> warp(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> deformable_conv2d(const Tensor<T>&, const DeformableKernel<T>&,         \
                                       const Tensor<T>&);                                    \
  template class OffsetEstimator<T>;                                                         \
  template class FeatureAlign<T>;                                                            \
  template void validate_binary_mask(const Tensor<T>&);                                      \
  template Tensor<T> partial_conv_mask_update(const Tensor<T>&, int, int, int, int);         \
  template PartialConvResult<T> partial_conv2d(const Tensor<T>&, const Tensor<T>&,           \
                                               const Tensor<T>&, const Tensor<T>&, int, int); \
  template Tensor<T> channel_gates(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);    \
  template Tensor<T> feature_equalize(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&); \
  template struct FeatureEqualizer<T>;

REFPAINT_INSTANTIATE_ALIGN(float)
REFPAINT_INSTANTIATE_ALIGN(double)

}  // namespace refpaint
