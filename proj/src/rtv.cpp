#include "refpaint/rtv.hpp"

#include <Eigen/IterativeLinearSolvers>
#include <Eigen/SparseCore>
#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace refpaint {

namespace {

using Plane = std::vector<double>;

// Separable Gaussian blur with symmetric boundary handling.
Plane gaussian_blur(const Plane& in, int h, int w, double sigma) {
  const int radius = std::max(1, static_cast<int>(std::lround(2.5 * sigma)));
  std::vector<double> k(2 * radius + 1);
  double total = 0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    total += k[i + radius];
  }
  for (double& v : k) v /= total;
  auto reflect = [](int i, int n) {
    while (i < 0 || i >= n) i = i < 0 ? -i - 1 : 2 * n - i - 1;
    return i;
  };
  Plane tmp(in.size()), out(in.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0;
      for (int i = -radius; i <= radius; ++i) acc += k[i + radius] * in[y * w + reflect(x + i, w)];
      tmp[y * w + x] = acc;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0;
      for (int i = -radius; i <= radius; ++i) acc += k[i + radius] * tmp[reflect(y + i, h) * w + x];
      out[y * w + x] = acc;
    }
  return out;
}

// Horizontal (wx: between x and x+1) and vertical (wy: between y and y+1)
// smoothness weights computed from the current estimate.
void texture_weights(const std::vector<Plane>& s, int h, int w, double sigma,
                     const RtvParams& p, Plane& wx, Plane& wy) {
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  const double channels = static_cast<double>(s.size());
  Plane tv(hw, 0.0), bx(hw, 0.0), by(hw, 0.0);
  for (const Plane& c : s) {
    const Plane blurred = gaussian_blur(c, h, w, sigma);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * w + x;
        const double fx = x + 1 < w ? c[i + 1] - c[i] : 0.0;
        const double fy = y + 1 < h ? c[i + w] - c[i] : 0.0;
        tv[i] += std::sqrt(fx * fx + fy * fy) / channels;
        bx[i] += std::abs(x + 1 < w ? blurred[i + 1] - blurred[i] : 0.0) / channels;
        by[i] += std::abs(y + 1 < h ? blurred[i + w] - blurred[i] : 0.0) / channels;
      }
  }
  wx.assign(hw, 0.0);
  wy.assign(hw, 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      const double wto = 1.0 / std::max(tv[i], p.sharpness);
      if (x + 1 < w) wx[i] = wto / std::max(bx[i], p.epsilon);
      if (y + 1 < h) wy[i] = wto / std::max(by[i], p.epsilon);
    }
}

// I + lambda * L_w with L_w the weighted five-point graph Laplacian.
Eigen::SparseMatrix<double> system_matrix(const Plane& wx, const Plane& wy, int h, int w,
                                          double lambda) {
  const int n = h * w;
  std::vector<Eigen::Triplet<double>> t;
  t.reserve(static_cast<std::size_t>(n) * 5);
  std::vector<double> diag(n, 1.0);
  auto link = [&](int a, int b, double weight) {
    const double v = lambda * weight;
    if (v == 0.0) return;
    t.emplace_back(a, b, -v);
    t.emplace_back(b, a, -v);
    diag[a] += v;
    diag[b] += v;
  };
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int i = y * w + x;
      if (x + 1 < w) link(i, i + 1, wx[i]);
      if (y + 1 < h) link(i, i + w, wy[i]);
    }
  for (int i = 0; i < n; ++i) t.emplace_back(i, i, diag[i]);
  Eigen::SparseMatrix<double> a(n, n);
  a.setFromTriplets(t.begin(), t.end());
  return a;
}

RtvResult<double> smooth(const Tensor<double>& image, const RtvParams& p) {
  p.validate();
  const Shape s = image.shape();
  const int h = s.h, w = s.w;
  const std::size_t hw = s.plane();
  std::vector<double> out(image.numel());
  RtvResult<double> result;
  const int cap = p.solver_cap > 0
                      ? p.solver_cap
                      : static_cast<int>(std::ceil(10.0 * std::sqrt(static_cast<double>(hw))));

  for (int n = 0; n < s.n; ++n) {
    std::vector<Plane> input(s.c), current(s.c);
    for (int c = 0; c < s.c; ++c) {
      const double* src = image.ptr() + (static_cast<std::size_t>(n) * s.c + c) * hw;
      input[c].assign(src, src + hw);
      current[c] = input[c];
    }
    double sigma = p.sigma;
    for (int it = 0; it < p.iterations && p.lambda > 0; ++it) {
      Plane wx, wy;
      texture_weights(current, h, w, sigma, p, wx, wy);
      const auto a = system_matrix(wx, wy, h, w, p.lambda);
      Eigen::ConjugateGradient<Eigen::SparseMatrix<double>, Eigen::Lower | Eigen::Upper> cg;
      cg.setTolerance(1e-6);
      cg.setMaxIterations(cap);
      cg.compute(a);
      for (int c = 0; c < s.c; ++c) {
        const Eigen::Map<const Eigen::VectorXd> b(input[c].data(), static_cast<Eigen::Index>(hw));
        Eigen::VectorXd x = cg.solveWithGuess(b, b);
        if (cg.info() != Eigen::Success) result.converged = false;
        result.max_solver_iterations =
            std::max(result.max_solver_iterations, static_cast<int>(cg.iterations()));
        current[c].assign(x.data(), x.data() + hw);
      }
      sigma = std::max(0.5, sigma / 2.0);
    }
    for (int c = 0; c < s.c; ++c) {
      std::copy(current[c].begin(), current[c].end(),
                out.begin() + static_cast<std::ptrdiff_t>((static_cast<std::size_t>(n) * s.c + c) * hw));
    }
  }
  result.image = Tensor<double>(s, std::move(out));
  return result;
}

}  // namespace

void RtvParams::validate() const {
  if (!(lambda >= 0) || !(sigma > 0) || !(epsilon > 0) || !(sharpness > 0) || iterations < 1 ||
      solver_cap < 0) {
    throw std::invalid_argument("rtv: lambda >= 0, sigma > 0, epsilon > 0, sharpness > 0 and "
                                "iterations >= 1 required");
  }
}

RtvResult<double> rtv_smooth_unclamped(const Tensor<double>& image, const RtvParams& params) {
  return smooth(image, params);
}

RtvResult<float> rtv_smooth_report(const Tensor<float>& image, const RtvParams& params) {
  for (float v : image.data()) {
    if (!(v >= 0.0f && v <= 1.0f)) throw std::invalid_argument("rtv: image values must lie in [0, 1]");
  }
  std::vector<double> in(image.data().begin(), image.data().end());
  auto r = smooth(Tensor<double>(image.shape(), std::move(in)), params);
  std::vector<float> out(r.image.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<float>(std::clamp(r.image.data()[i], 0.0, 1.0));
  }
  return {Tensor<float>(image.shape(), std::move(out)), r.converged, r.max_solver_iterations};
}

Tensor<float> rtv_smooth(const Tensor<float>& image, const RtvParams& params) {
  return rtv_smooth_report(image, params).image;
}

}  // namespace refpaint
