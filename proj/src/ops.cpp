#include "refpaint/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <string>

namespace refpaint {

namespace {

template <typename T>
T* grad_of(const Tensor<T>& t) {
  return t.defined() && t.requires_grad() ? t.impl()->grad_buffer() : nullptr;
}

}  // namespace

int conv_out_extent(int in, int kernel, int stride, int padding, int dilation) {
  const int span = dilation * (kernel - 1) + 1;
  const int numer = in + 2 * padding - span;
  if (numer < 0) return 0;
  return numer / stride + 1;
}

namespace kernels {

template <typename T>
void im2col(const T* x, int channels, int h, int w, int kh, int kw, int stride,
            int pad, int dil, int out_h, int out_w, T* col) {
  const int plane = out_h * out_w;
  for (int c = 0; c < channels; ++c) {
    const T* xc = x + static_cast<std::size_t>(c) * h * w;
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        T* row = col + static_cast<std::size_t>((c * kh + ky) * kw + kx) * plane;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride - pad + ky * dil;
          T* dst = row + oy * out_w;
          if (iy < 0 || iy >= h) {
            std::fill(dst, dst + out_w, T(0));
            continue;
          }
          const T* src = xc + static_cast<std::size_t>(iy) * w;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride - pad + kx * dil;
            dst[ox] = (ix >= 0 && ix < w) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* col, int channels, int h, int w, int kh, int kw, int stride,
            int pad, int dil, int out_h, int out_w, T* x) {
  const int plane = out_h * out_w;
  for (int c = 0; c < channels; ++c) {
    T* xc = x + static_cast<std::size_t>(c) * h * w;
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        const T* row = col + static_cast<std::size_t>((c * kh + ky) * kw + kx) * plane;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride - pad + ky * dil;
          if (iy < 0 || iy >= h) continue;
          T* dst = xc + static_cast<std::size_t>(iy) * w;
          const T* src = row + oy * out_w;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride - pad + kx * dil;
            if (ix >= 0 && ix < w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

template <typename T>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, const T* a, const T* b,
          T* c, bool accumulate) {
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<Mat> cm(c, m, n);
  if (k == 0) {
    if (!accumulate) cm.setZero();
    return;
  }
  auto run = [&](const auto& am, const auto& bm) {
    if (accumulate) {
      cm.noalias() += am * bm;
    } else {
      cm.noalias() = am * bm;
    }
  };
  Eigen::Map<const Mat> a_nt(a, trans_a ? k : m, trans_a ? m : k);
  Eigen::Map<const Mat> b_nt(b, trans_b ? n : k, trans_b ? k : n);
  if (!trans_a && !trans_b) run(a_nt, b_nt);
  if (!trans_a && trans_b) run(a_nt, b_nt.transpose());
  if (trans_a && !trans_b) run(a_nt.transpose(), b_nt);
  if (trans_a && trans_b) run(a_nt.transpose(), b_nt.transpose());
}

}  // namespace kernels

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return make_result<T>("add", a.shape(), std::move(out), {a, b},
                        [a, b](const detail::TensorImpl<T>& o) {
                          for (const Tensor<T>* t : {&a, &b}) {
                            if (T* g = grad_of(*t)) {
                              for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
                            }
                          }
                        });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "sub");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return make_result<T>("sub", a.shape(), std::move(out), {a, b},
                        [a, b](const detail::TensorImpl<T>& o) {
                          if (T* g = grad_of(a)) {
                            for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
                          }
                          if (T* g = grad_of(b)) {
                            for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] -= o.grad[i];
                          }
                        });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "mul");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return make_result<T>("mul", a.shape(), std::move(out), {a, b},
                        [a, b](const detail::TensorImpl<T>& o) {
                          if (T* g = grad_of(a)) {
                            for (std::size_t i = 0; i < o.grad.size(); ++i)
                              g[i] += o.grad[i] * b.data()[i];
                          }
                          if (T* g = grad_of(b)) {
                            for (std::size_t i = 0; i < o.grad.size(); ++i)
                              g[i] += o.grad[i] * a.data()[i];
                          }
                        });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * s;
  return make_result<T>("scale", a.shape(), std::move(out), {a},
                        [a, s](const detail::TensorImpl<T>& o) {
                          if (T* g = grad_of(a)) {
                            for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * s;
                          }
                        });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + s;
  return make_result<T>("add_scalar", a.shape(), std::move(out), {a},
                        [a](const detail::TensorImpl<T>& o) {
                          if (T* g = grad_of(a)) {
                            for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
                          }
                        });
}

template <typename T>
Tensor<T> expand(const Tensor<T>& a, Shape target) {
  const Shape s = a.shape();
  auto ok = [](int from, int to) { return from == to || from == 1; };
  if (!ok(s.n, target.n) || !ok(s.c, target.c) || !ok(s.h, target.h) || !ok(s.w, target.w)) {
    throw ShapeError("expand: cannot expand " + s.str() + " to " + target.str());
  }
  // Flat source index for every target element.
  std::vector<std::size_t> src(target.numel());
  std::size_t i = 0;
  for (int n = 0; n < target.n; ++n) {
    for (int c = 0; c < target.c; ++c) {
      for (int y = 0; y < target.h; ++y) {
        for (int x = 0; x < target.w; ++x) {
          const int sn = s.n == 1 ? 0 : n;
          const int sc = s.c == 1 ? 0 : c;
          const int sy = s.h == 1 ? 0 : y;
          const int sx = s.w == 1 ? 0 : x;
          src[i++] = ((static_cast<std::size_t>(sn) * s.c + sc) * s.h + sy) * s.w + sx;
        }
      }
    }
  }
  std::vector<T> out(target.numel());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = a.data()[src[k]];
  return make_result<T>("expand", target, std::move(out), {a},
                        [a, src = std::move(src)](const detail::TensorImpl<T>& o) {
                          if (T* g = grad_of(a)) {
                            for (std::size_t k = 0; k < src.size(); ++k) g[src[k]] += o.grad[k];
                          }
                        });
}

template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  const Shape s = x.shape();
  if (bias.shape() != Shape{1, s.c, 1, 1}) {
    throw ShapeError("add_bias: bias " + bias.shape().str() + " does not match channels of " +
                     s.str());
  }
  const std::size_t plane = s.plane();
  std::vector<T> out(x.data().begin(), x.data().end());
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      T* p = out.data() + (static_cast<std::size_t>(n) * s.c + c) * plane;
      const T b = bias.data()[c];
      for (std::size_t k = 0; k < plane; ++k) p[k] += b;
    }
  }
  return make_result<T>("add_bias", s, std::move(out), {x, bias},
                        [x, bias, s, plane](const detail::TensorImpl<T>& o) {
                          if (T* g = grad_of(x)) {
                            for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
                          }
                          if (T* g = grad_of(bias)) {
                            for (int n = 0; n < s.n; ++n) {
                              for (int c = 0; c < s.c; ++c) {
                                const T* p = o.grad.data() + (static_cast<std::size_t>(n) * s.c + c) * plane;
                                T acc = 0;
                                for (std::size_t k = 0; k < plane; ++k) acc += p[k];
                                g[c] += acc;
                              }
                            }
                          }
                        });
}

namespace {

// Pointwise op whose derivative is a function of (input, output).
template <typename T, typename Fwd, typename Deriv>
Tensor<T> pointwise(const char* name, const Tensor<T>& x, Fwd fwd, Deriv deriv) {
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(x.data()[i]);
  return make_result<T>(name, x.shape(), std::move(out), {x},
                        [x, deriv](const detail::TensorImpl<T>& o) {
                          if (T* g = grad_of(x)) {
                            for (std::size_t i = 0; i < o.grad.size(); ++i)
                              g[i] += o.grad[i] * deriv(x.data()[i], o.data[i]);
                          }
                        });
}

}  // namespace

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return pointwise(
      "relu", x, [](T v) { return v > T(0) ? v : T(0); },
      [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope) {
  return pointwise(
      "leaky_relu", x, [slope](T v) { return v > T(0) ? v : slope * v; },
      [slope](T v, T) { return v > T(0) ? T(1) : slope; });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return pointwise(
      "sigmoid", x, [](T v) { return T(1) / (T(1) + std::exp(-v)); },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  return pointwise(
      "tanh", x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> abs(const Tensor<T>& x) {
  return pointwise(
      "abs", x, [](T v) { return std::abs(v); },
      [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

template <typename T>
Tensor<T> square(const Tensor<T>& x) {
  return pointwise(
      "square", x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc = 0;
  for (T v : x.data()) acc += v;
  return make_result<T>("sum", {1, 1, 1, 1}, {acc}, {x}, [x](const detail::TensorImpl<T>& o) {
    if (T* g = grad_of(x)) {
      for (std::size_t i = 0; i < x.numel(); ++i) g[i] += o.grad[0];
    }
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  if (x.numel() == 0) throw ShapeError("mean of an empty tensor");
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

template <typename T>
Tensor<T> mean_hw(const Tensor<T>& x) {
  const Shape s = x.shape();
  const std::size_t plane = s.plane();
  std::vector<T> out(static_cast<std::size_t>(s.n) * s.c);
  for (std::size_t i = 0; i < out.size(); ++i) {
    T acc = 0;
    const T* p = x.ptr() + i * plane;
    for (std::size_t k = 0; k < plane; ++k) acc += p[k];
    out[i] = acc / static_cast<T>(plane);
  }
  return make_result<T>("mean_hw", {s.n, s.c, 1, 1}, std::move(out), {x},
                        [x, plane](const detail::TensorImpl<T>& o) {
                          if (T* g = grad_of(x)) {
                            for (std::size_t i = 0; i < o.grad.size(); ++i) {
                              const T v = o.grad[i] / static_cast<T>(plane);
                              for (std::size_t k = 0; k < plane; ++k) g[i * plane + k] += v;
                            }
                          }
                        });
}

template <typename T>
Tensor<T> mean_c(const Tensor<T>& x) {
  const Shape s = x.shape();
  const std::size_t plane = s.plane();
  std::vector<T> out(static_cast<std::size_t>(s.n) * plane, T(0));
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const T* p = x.ptr() + (static_cast<std::size_t>(n) * s.c + c) * plane;
      T* q = out.data() + n * plane;
      for (std::size_t k = 0; k < plane; ++k) q[k] += p[k];
    }
  }
  for (T& v : out) v /= static_cast<T>(s.c);
  return make_result<T>("mean_c", {s.n, 1, s.h, s.w}, std::move(out), {x},
                        [x, s, plane](const detail::TensorImpl<T>& o) {
                          if (T* g = grad_of(x)) {
                            for (int n = 0; n < s.n; ++n) {
                              for (int c = 0; c < s.c; ++c) {
                                T* p = g + (static_cast<std::size_t>(n) * s.c + c) * plane;
                                const T* q = o.grad.data() + n * plane;
                                for (std::size_t k = 0; k < plane; ++k)
                                  p[k] += q[k] / static_cast<T>(s.c);
                              }
                            }
                          }
                        });
}

template <typename T>
Tensor<T> instance_norm(const Tensor<T>& x, T eps) {
  const Shape s = x.shape();
  const std::size_t plane = s.plane();
  const std::size_t groups = static_cast<std::size_t>(s.n) * s.c;
  if (plane == 0) throw ShapeError("instance_norm on empty spatial extent");
  std::vector<T> out(x.numel());
  std::vector<T> inv_std(groups);
  for (std::size_t gi = 0; gi < groups; ++gi) {
    const T* p = x.ptr() + gi * plane;
    T mu = 0;
    for (std::size_t k = 0; k < plane; ++k) mu += p[k];
    mu /= static_cast<T>(plane);
    T var = 0;
    for (std::size_t k = 0; k < plane; ++k) var += (p[k] - mu) * (p[k] - mu);
    var /= static_cast<T>(plane);
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[gi] = is;
    for (std::size_t k = 0; k < plane; ++k) out[gi * plane + k] = (p[k] - mu) * is;
  }
  return make_result<T>(
      "instance_norm", s, std::move(out), {x},
      [x, plane, groups, inv_std = std::move(inv_std)](const detail::TensorImpl<T>& o) {
        T* g = grad_of(x);
        if (g == nullptr) return;
        const T inv_plane = T(1) / static_cast<T>(plane);
        for (std::size_t gi = 0; gi < groups; ++gi) {
          const T* gy = o.grad.data() + gi * plane;
          const T* y = o.data.data() + gi * plane;
          T mean_g = 0;
          T mean_gy = 0;
          for (std::size_t k = 0; k < plane; ++k) {
            mean_g += gy[k];
            mean_gy += gy[k] * y[k];
          }
          mean_g *= inv_plane;
          mean_gy *= inv_plane;
          for (std::size_t k = 0; k < plane; ++k)
            g[gi * plane + k] += inv_std[gi] * (gy[k] - mean_g - y[k] * mean_gy);
        }
      });
}

template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  Shape s = parts.front().shape();
  int total_c = 0;
  for (const auto& p : parts) {
    const Shape& ps = p.shape();
    if (ps.n != s.n || ps.h != s.h || ps.w != s.w) {
      throw ShapeError("concat_channels: incompatible " + ps.str() + " vs " + s.str());
    }
    total_c += ps.c;
  }
  const Shape out_shape{s.n, total_c, s.h, s.w};
  const std::size_t plane = s.plane();
  std::vector<T> out(out_shape.numel());
  for (int n = 0; n < s.n; ++n) {
    std::size_t off = static_cast<std::size_t>(n) * total_c * plane;
    for (const auto& p : parts) {
      const std::size_t len = static_cast<std::size_t>(p.shape().c) * plane;
      std::copy_n(p.ptr() + n * len, len, out.data() + off);
      off += len;
    }
  }
  return make_result<T>("concat_channels", out_shape, std::move(out), parts,
                        [parts, total_c, plane](const detail::TensorImpl<T>& o) {
                          const int batch = o.shape.n;
                          for (int n = 0; n < batch; ++n) {
                            std::size_t off = static_cast<std::size_t>(n) * total_c * plane;
                            for (const auto& p : parts) {
                              const std::size_t len = static_cast<std::size_t>(p.shape().c) * plane;
                              if (T* g = grad_of(p)) {
                                for (std::size_t k = 0; k < len; ++k)
                                  g[n * len + k] += o.grad[off + k];
                              }
                              off += len;
                            }
                          }
                        });
}

template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, int begin, int count) {
  const Shape s = x.shape();
  if (begin < 0 || count < 0 || begin + count > s.c) {
    throw ShapeError("slice_channels: range [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") outside " + s.str());
  }
  const Shape out_shape{s.n, count, s.h, s.w};
  const std::size_t plane = s.plane();
  std::vector<T> out(out_shape.numel());
  for (int n = 0; n < s.n; ++n) {
    std::copy_n(x.ptr() + (static_cast<std::size_t>(n) * s.c + begin) * plane, count * plane,
                out.data() + static_cast<std::size_t>(n) * count * plane);
  }
  return make_result<T>("slice_channels", out_shape, std::move(out), {x},
                        [x, s, begin, count, plane](const detail::TensorImpl<T>& o) {
                          if (T* g = grad_of(x)) {
                            for (int n = 0; n < s.n; ++n) {
                              T* dst = g + (static_cast<std::size_t>(n) * s.c + begin) * plane;
                              const T* src = o.grad.data() + static_cast<std::size_t>(n) * count * plane;
                              for (std::size_t k = 0; k < count * plane; ++k) dst[k] += src[k];
                            }
                          }
                        });
}

// ---------------------------------------------------------------------------
// Convolutions

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 int stride, int padding, int dilation) {
  const Shape xs = x.shape();
  const Shape ws = weight.shape();
  if (ws.c != xs.c) {
    throw ShapeError("conv2d: weight " + ws.str() + " expects " + std::to_string(ws.c) +
                     " input channels, input is " + xs.str());
  }
  if (stride < 1 || dilation < 1 || padding < 0) {
    throw ShapeError("conv2d: stride and dilation must be >= 1, padding >= 0");
  }
  if (bias.defined() && bias.shape() != Shape{1, ws.n, 1, 1}) {
    throw ShapeError("conv2d: bias " + bias.shape().str() + " does not match " +
                     std::to_string(ws.n) + " output channels");
  }
  const int oh = conv_out_extent(xs.h, ws.h, stride, padding, dilation);
  const int ow = conv_out_extent(xs.w, ws.w, stride, padding, dilation);
  if (oh <= 0 || ow <= 0) {
    throw ShapeError("conv2d: zero-sized output for input " + xs.str() + " and kernel " +
                     ws.str());
  }
  const Shape ys{xs.n, ws.n, oh, ow};
  const int k = ws.c * ws.h * ws.w;
  const int p = oh * ow;
  std::vector<T> out(ys.numel());
  std::vector<T> col(static_cast<std::size_t>(k) * p);
  for (int n = 0; n < xs.n; ++n) {
    kernels::im2col(x.ptr() + n * static_cast<std::size_t>(xs.c) * xs.plane(), xs.c, xs.h, xs.w,
                    ws.h, ws.w, stride, padding, dilation, oh, ow, col.data());
    T* y = out.data() + static_cast<std::size_t>(n) * ws.n * p;
    kernels::gemm(false, false, ws.n, p, k, weight.ptr(), col.data(), y, false);
    if (bias.defined()) {
      for (int oc = 0; oc < ws.n; ++oc) {
        const T b = bias.data()[oc];
        for (int i = 0; i < p; ++i) y[oc * p + i] += b;
      }
    }
  }
  return make_result<T>(
      "conv2d", ys, std::move(out), {x, weight, bias},
      [x, weight, bias, xs, ws, stride, padding, dilation, oh, ow](const detail::TensorImpl<T>& o) {
        const int k = ws.c * ws.h * ws.w;
        const int p = oh * ow;
        T* gx = grad_of(x);
        T* gw = grad_of(weight);
        T* gb = grad_of(bias);
        std::vector<T> col(static_cast<std::size_t>(k) * p);
        for (int n = 0; n < xs.n; ++n) {
          const T* gy = o.grad.data() + static_cast<std::size_t>(n) * ws.n * p;
          if (gw != nullptr) {
            kernels::im2col(x.ptr() + n * static_cast<std::size_t>(xs.c) * xs.plane(), xs.c, xs.h,
                            xs.w, ws.h, ws.w, stride, padding, dilation, oh, ow, col.data());
            kernels::gemm(false, true, ws.n, k, p, gy, col.data(), gw, true);
          }
          if (gx != nullptr) {
            kernels::gemm(true, false, k, p, ws.n, weight.ptr(), gy, col.data(), false);
            kernels::col2im(col.data(), xs.c, xs.h, xs.w, ws.h, ws.w, stride, padding, dilation,
                            oh, ow, gx + n * static_cast<std::size_t>(xs.c) * xs.plane());
          }
          if (gb != nullptr) {
            for (int oc = 0; oc < ws.n; ++oc) {
              T acc = 0;
              for (int i = 0; i < p; ++i) acc += gy[oc * p + i];
              gb[oc] += acc;
            }
          }
        }
      });
}

template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                           int stride, int padding) {
  const Shape xs = x.shape();
  const Shape ws = weight.shape();  // (inC, outC, kH, kW)
  if (ws.n != xs.c) {
    throw ShapeError("conv_transpose2d: weight " + ws.str() + " expects " +
                     std::to_string(ws.n) + " input channels, input is " + xs.str());
  }
  if (stride < 1 || padding < 0) throw ShapeError("conv_transpose2d: bad stride/padding");
  const int oh = (xs.h - 1) * stride - 2 * padding + ws.h;
  const int ow = (xs.w - 1) * stride - 2 * padding + ws.w;
  if (oh <= 0 || ow <= 0) throw ShapeError("conv_transpose2d: zero-sized output");
  if (conv_out_extent(oh, ws.h, stride, padding, 1) != xs.h ||
      conv_out_extent(ow, ws.w, stride, padding, 1) != xs.w) {
    throw ShapeError("conv_transpose2d: geometry does not invert for " + xs.str());
  }
  if (bias.defined() && bias.shape() != Shape{1, ws.c, 1, 1}) {
    throw ShapeError("conv_transpose2d: bias " + bias.shape().str() + " mismatch");
  }
  const Shape ys{xs.n, ws.c, oh, ow};
  const int k = ws.c * ws.h * ws.w;
  const int p = xs.h * xs.w;
  std::vector<T> out(ys.numel(), T(0));
  std::vector<T> col(static_cast<std::size_t>(k) * p);
  for (int n = 0; n < xs.n; ++n) {
    const T* xn = x.ptr() + static_cast<std::size_t>(n) * xs.c * p;
    kernels::gemm(true, false, k, p, xs.c, weight.ptr(), xn, col.data(), false);
    T* y = out.data() + static_cast<std::size_t>(n) * ys.c * ys.plane();
    kernels::col2im(col.data(), ws.c, oh, ow, ws.h, ws.w, stride, padding, 1, xs.h, xs.w, y);
    if (bias.defined()) {
      for (int oc = 0; oc < ws.c; ++oc) {
        const T b = bias.data()[oc];
        for (std::size_t i = 0; i < ys.plane(); ++i) y[oc * ys.plane() + i] += b;
      }
    }
  }
  return make_result<T>(
      "conv_transpose2d", ys, std::move(out), {x, weight, bias},
      [x, weight, bias, xs, ws, ys, stride, padding](const detail::TensorImpl<T>& o) {
        const int k = ws.c * ws.h * ws.w;
        const int p = xs.h * xs.w;
        T* gx = grad_of(x);
        T* gw = grad_of(weight);
        T* gb = grad_of(bias);
        std::vector<T> col(static_cast<std::size_t>(k) * p);
        for (int n = 0; n < xs.n; ++n) {
          const T* gy = o.grad.data() + static_cast<std::size_t>(n) * ys.c * ys.plane();
          kernels::im2col(gy, ws.c, ys.h, ys.w, ws.h, ws.w, stride, padding, 1, xs.h, xs.w,
                          col.data());
          if (gx != nullptr) {
            kernels::gemm(false, false, xs.c, p, k, weight.ptr(), col.data(),
                          gx + static_cast<std::size_t>(n) * xs.c * p, true);
          }
          if (gw != nullptr) {
            kernels::gemm(false, true, xs.c, k, p, x.ptr() + static_cast<std::size_t>(n) * xs.c * p,
                          col.data(), gw, true);
          }
          if (gb != nullptr) {
            for (int oc = 0; oc < ws.c; ++oc) {
              T acc = 0;
              for (std::size_t i = 0; i < ys.plane(); ++i) acc += gy[oc * ys.plane() + i];
              gb[oc] += acc;
            }
          }
        }
      });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  if (x.shape().h != 1 || x.shape().w != 1) {
    throw ShapeError("linear: expects (N, F, 1, 1) input, got " + x.shape().str());
  }
  if (weight.shape().h != 1 || weight.shape().w != 1) {
    throw ShapeError("linear: expects (O, F, 1, 1) weight, got " + weight.shape().str());
  }
  return conv2d(x, weight, bias, 1, 0, 1);
}

// ---------------------------------------------------------------------------
// Resampling

namespace {

struct LinearTap {
  int i0;
  int i1;
  double w1;  // weight of i1; i0 gets 1 - w1
};

std::vector<LinearTap> resize_taps(int in, int out) {
  std::vector<LinearTap> taps(out);
  const double ratio = static_cast<double>(in) / out;
  for (int d = 0; d < out; ++d) {
    double src = (d + 0.5) * ratio - 0.5;
    if (src < 0) src = 0;
    int i0 = static_cast<int>(std::floor(src));
    if (i0 > in - 1) i0 = in - 1;
    const int i1 = std::min(i0 + 1, in - 1);
    taps[d] = {i0, i1, src - i0};
  }
  return taps;
}

}  // namespace

template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& x, int out_h, int out_w) {
  if (out_h < 1 || out_w < 1) throw ShapeError("bilinear_resize: output extents must be >= 1");
  const Shape s = x.shape();
  if (s.h < 1 || s.w < 1) throw ShapeError("bilinear_resize: empty input " + s.str());
  if (s.h == out_h && s.w == out_w) {
    // Identity; still routed through the graph so gradients flow.
    return scale(x, T(1));
  }
  const auto ty = resize_taps(s.h, out_h);
  const auto tx = resize_taps(s.w, out_w);
  const Shape ys{s.n, s.c, out_h, out_w};
  std::vector<T> out(ys.numel());
  const std::size_t planes = static_cast<std::size_t>(s.n) * s.c;
  for (std::size_t pl = 0; pl < planes; ++pl) {
    const T* src = x.ptr() + pl * s.plane();
    T* dst = out.data() + pl * ys.plane();
    for (int y = 0; y < out_h; ++y) {
      const auto& a = ty[y];
      for (int xx = 0; xx < out_w; ++xx) {
        const auto& b = tx[xx];
        const T wy1 = static_cast<T>(a.w1), wy0 = T(1) - wy1;
        const T wx1 = static_cast<T>(b.w1), wx0 = T(1) - wx1;
        dst[y * out_w + xx] = wy0 * (wx0 * src[a.i0 * s.w + b.i0] + wx1 * src[a.i0 * s.w + b.i1]) +
                              wy1 * (wx0 * src[a.i1 * s.w + b.i0] + wx1 * src[a.i1 * s.w + b.i1]);
      }
    }
  }
  return make_result<T>("bilinear_resize", ys, std::move(out), {x},
                        [x, s, ys, ty, tx, planes](const detail::TensorImpl<T>& o) {
                          T* g = grad_of(x);
                          if (g == nullptr) return;
                          for (std::size_t pl = 0; pl < planes; ++pl) {
                            T* dst = g + pl * s.plane();
                            const T* gy = o.grad.data() + pl * ys.plane();
                            for (int y = 0; y < ys.h; ++y) {
                              const auto& a = ty[y];
                              for (int xx = 0; xx < ys.w; ++xx) {
                                const auto& b = tx[xx];
                                const T v = gy[y * ys.w + xx];
                                const T wy1 = static_cast<T>(a.w1), wy0 = T(1) - wy1;
                                const T wx1 = static_cast<T>(b.w1), wx0 = T(1) - wx1;
                                dst[a.i0 * s.w + b.i0] += v * wy0 * wx0;
                                dst[a.i0 * s.w + b.i1] += v * wy0 * wx1;
                                dst[a.i1 * s.w + b.i0] += v * wy1 * wx0;
                                dst[a.i1 * s.w + b.i1] += v * wy1 * wx1;
                              }
                            }
                          }
                        });
}

template <typename T>
Tensor<T> gram(const Tensor<T>& x) {
  const Shape s = x.shape();
  const int p = static_cast<int>(s.plane());
  const T norm = T(1) / static_cast<T>(static_cast<std::size_t>(s.c) * s.plane());
  const Shape gs{s.n, 1, s.c, s.c};
  std::vector<T> out(gs.numel());
  for (int n = 0; n < s.n; ++n) {
    const T* f = x.ptr() + static_cast<std::size_t>(n) * s.c * p;
    T* g = out.data() + static_cast<std::size_t>(n) * s.c * s.c;
    kernels::gemm(false, true, s.c, s.c, p, f, f, g, false);
    for (int i = 0; i < s.c * s.c; ++i) g[i] *= norm;
  }
  return make_result<T>("gram", gs, std::move(out), {x},
                        [x, s, p, norm](const detail::TensorImpl<T>& o) {
                          T* gx = grad_of(x);
                          if (gx == nullptr) return;
                          std::vector<T> sym(static_cast<std::size_t>(s.c) * s.c);
                          for (int n = 0; n < s.n; ++n) {
                            const T* gg = o.grad.data() + static_cast<std::size_t>(n) * s.c * s.c;
                            for (int i = 0; i < s.c; ++i)
                              for (int j = 0; j < s.c; ++j)
                                sym[i * s.c + j] = (gg[i * s.c + j] + gg[j * s.c + i]) * norm;
                            const T* f = x.ptr() + static_cast<std::size_t>(n) * s.c * p;
                            kernels::gemm(false, false, s.c, p, s.c, sym.data(), f,
                                          gx + static_cast<std::size_t>(n) * s.c * p, true);
                          }
                        });
}

#define REFPAINT_INSTANTIATE_OPS(T)                                                         \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> scale(const Tensor<T>&, T);                                            \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                                       \
  template Tensor<T> expand(const Tensor<T>&, Shape);                                       \
  template Tensor<T> add_bias(const Tensor<T>&, const Tensor<T>&);                          \
  template Tensor<T> relu(const Tensor<T>&);                                                \
  template Tensor<T> leaky_relu(const Tensor<T>&, T);                                       \
  template Tensor<T> sigmoid(const Tensor<T>&);                                             \
  template Tensor<T> tanh(const Tensor<T>&);                                                \
  template Tensor<T> abs(const Tensor<T>&);                                                 \
  template Tensor<T> square(const Tensor<T>&);                                              \
  template Tensor<T> sum(const Tensor<T>&);                                                 \
  template Tensor<T> mean(const Tensor<T>&);                                                \
  template Tensor<T> mean_hw(const Tensor<T>&);                                             \
  template Tensor<T> mean_c(const Tensor<T>&);                                              \
  template Tensor<T> instance_norm(const Tensor<T>&, T);                                    \
  template Tensor<T> concat_channels(const std::vector<Tensor<T>>&);                        \
  template Tensor<T> slice_channels(const Tensor<T>&, int, int);                            \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);          \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int, int, \
                            int);                                                           \
  template Tensor<T> conv_transpose2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                      int, int);                                            \
  template Tensor<T> bilinear_resize(const Tensor<T>&, int, int);                           \
  template Tensor<T> gram(const Tensor<T>&);                                                \
  template void kernels::im2col(const T*, int, int, int, int, int, int, int, int, int, int, \
                                T*);                                                        \
  template void kernels::col2im(const T*, int, int, int, int, int, int, int, int, int, int, \
                                T*);                                                        \
  template void kernels::gemm(bool, bool, int, int, int, const T*, const T*, T*, bool);

REFPAINT_INSTANTIATE_OPS(float)
REFPAINT_INSTANTIATE_OPS(double)

}  // namespace refpaint
