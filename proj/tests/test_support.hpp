#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "refpaint/rng.hpp"
#include "refpaint/tensor.hpp"

namespace refpaint::testing {

template <typename T = double>
Tensor<T> random_tensor(Shape s, std::uint64_t seed, double lo = -1.0, double hi = 1.0,
                        bool requires_grad = false) {
  Rng rng(seed);
  std::vector<T> d(s.numel());
  for (T& v : d) v = static_cast<T>(rng.uniform(lo, hi));
  return Tensor<T>(s, std::move(d), requires_grad);
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    m = std::max(m, std::abs(static_cast<double>(a.data()[i]) - static_cast<double>(b.data()[i])));
  }
  return m;
}

// Direct six-loop convolution, independent of the im2col/GEMM path.
inline Tensor<double> naive_conv2d(const Tensor<double>& x, const Tensor<double>& w,
                                   const Tensor<double>* bias, int stride, int pad, int dil) {
  const Shape xs = x.shape();
  const Shape ws = w.shape();
  const int oh = (xs.h + 2 * pad - dil * (ws.h - 1) - 1) / stride + 1;
  const int ow = (xs.w + 2 * pad - dil * (ws.w - 1) - 1) / stride + 1;
  Tensor<double> y = Tensor<double>::zeros({xs.n, ws.n, oh, ow});
  for (int n = 0; n < xs.n; ++n)
    for (int o = 0; o < ws.n; ++o)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          double acc = bias != nullptr ? bias->data()[o] : 0.0;
          for (int c = 0; c < ws.c; ++c)
            for (int ky = 0; ky < ws.h; ++ky)
              for (int kx = 0; kx < ws.w; ++kx) {
                const int iy = oy * stride - pad + ky * dil;
                const int ix = ox * stride - pad + kx * dil;
                if (iy < 0 || iy >= xs.h || ix < 0 || ix >= xs.w) continue;
                acc += w.at(o, c, ky, kx) * x.at(n, c, iy, ix);
              }
          y.at(n, o, oy, ox) = acc;
        }
  return y;
}

// Zero-filled translation: out(y, x) = in(y + dy, x + dx).
inline Tensor<double> shift_read(const Tensor<double>& in, int dy, int dx) {
  const Shape s = in.shape();
  Tensor<double> out = Tensor<double>::zeros(s);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x) {
          const int sy = y + dy, sx = x + dx;
          if (sy >= 0 && sy < s.h && sx >= 0 && sx < s.w) out.at(n, c, y, x) = in.at(n, c, sy, sx);
        }
  return out;
}

}  // namespace refpaint::testing
