#include "refpaint/sift.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <stdexcept>

#include "refpaint/rng.hpp"

namespace refpaint {

namespace {

constexpr int kBorder = 5;
constexpr int kRefineSteps = 5;
constexpr int kOrientationBins = 36;
constexpr double kPeakRatio = 0.8;
constexpr int kDescWidth = 4;
constexpr int kDescBins = 8;
constexpr float kDescClamp = 0.2f;
constexpr double kTwoPi = 2.0 * std::numbers::pi;

struct Image {
  int h = 0, w = 0;
  std::vector<float> d;
  Image() = default;
  Image(int h_, int w_) : h(h_), w(w_), d(static_cast<std::size_t>(h_) * w_, 0.0f) {}
  float& at(int y, int x) { return d[static_cast<std::size_t>(y) * w + x]; }
  float at(int y, int x) const { return d[static_cast<std::size_t>(y) * w + x]; }
};

int mirror(int i, int n) {
  while (i < 0 || i >= n) i = i < 0 ? -i - 1 : 2 * n - i - 1;
  return i;
}

Image blur(const Image& in, double sigma) {
  const int r = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<float> k(2 * r + 1);
  double total = 0;
  for (int i = -r; i <= r; ++i) total += k[i + r] = static_cast<float>(std::exp(-0.5 * i * i / (sigma * sigma)));
  for (float& v : k) v = static_cast<float>(v / total);
  Image tmp(in.h, in.w), out(in.h, in.w);
  for (int y = 0; y < in.h; ++y)
    for (int x = 0; x < in.w; ++x) {
      float acc = 0;
      for (int i = -r; i <= r; ++i) acc += k[i + r] * in.at(y, mirror(x + i, in.w));
      tmp.at(y, x) = acc;
    }
  for (int y = 0; y < in.h; ++y)
    for (int x = 0; x < in.w; ++x) {
      float acc = 0;
      for (int i = -r; i <= r; ++i) acc += k[i + r] * tmp.at(mirror(y + i, in.h), x);
      out.at(y, x) = acc;
    }
  return out;
}

Image halve(const Image& in) {
  Image out(in.h / 2, in.w / 2);
  for (int y = 0; y < out.h; ++y)
    for (int x = 0; x < out.w; ++x) out.at(y, x) = in.at(2 * y, 2 * x);
  return out;
}

struct Pyramid {
  std::vector<std::vector<Image>> gauss;  // [octave][scales + 3]
  std::vector<std::vector<Image>> dog;    // [octave][scales + 2]
};

Pyramid build_pyramid(const Image& base_in, const SiftParams& p) {
  Pyramid pyr;
  const int layers = p.scales + 3;
  const double k = std::pow(2.0, 1.0 / p.scales);
  std::vector<double> inc(layers, 0.0);
  for (int i = 1; i < layers; ++i) {
    const double prev = p.sigma * std::pow(k, i - 1), cur = prev * k;
    inc[i] = std::sqrt(cur * cur - prev * prev);
  }
  // The input is assumed to carry a blur of 0.5 px.
  Image base = blur(base_in, std::sqrt(std::max(p.sigma * p.sigma - 0.25, 0.01)));
  for (int o = 0; o < p.octaves; ++o) {
    if (o > 0) {
      const Image& src = pyr.gauss[o - 1][p.scales];
      if (src.h < 2 || src.w < 2) break;
      base = halve(src);
    }
    std::vector<Image> g{base};
    for (int i = 1; i < layers; ++i) g.push_back(blur(g.back(), inc[i]));
    std::vector<Image> d;
    for (int i = 0; i + 1 < layers; ++i) {
      Image diff(base.h, base.w);
      for (std::size_t j = 0; j < diff.d.size(); ++j) diff.d[j] = g[i + 1].d[j] - g[i].d[j];
      d.push_back(std::move(diff));
    }
    pyr.gauss.push_back(std::move(g));
    pyr.dog.push_back(std::move(d));
  }
  return pyr;
}

bool is_extremum(const std::vector<Image>& dog, int s, int y, int x) {
  const float v = dog[s].at(y, x);
  const bool is_max = v > 0;
  for (int ds = -1; ds <= 1; ++ds)
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        if (ds == 0 && dy == 0 && dx == 0) continue;
        const float n = dog[s + ds].at(y + dy, x + dx);
        if (is_max ? n >= v : n <= v) return false;
      }
  return true;
}

struct Refined {
  int s, y, x;
  double os, oy, ox;
  double response;
};

// Quadratic fit of the DoG around (s, y, x); nullopt when the extremum
// drifts out of the octave, is weak, or lies on an edge.
std::optional<Refined> refine(const std::vector<Image>& dog, int s, int y, int x, const SiftParams& p) {
  const int h = dog[0].h, w = dog[0].w;
  Eigen::Vector3d off = Eigen::Vector3d::Zero(), g;
  Eigen::Matrix3d H;
  int step = 0;
  for (; step < kRefineSteps; ++step) {
    const auto D = [&](int ds, int dy, int dx) { return static_cast<double>(dog[s + ds].at(y + dy, x + dx)); };
    g << 0.5 * (D(0, 0, 1) - D(0, 0, -1)), 0.5 * (D(0, 1, 0) - D(0, -1, 0)), 0.5 * (D(1, 0, 0) - D(-1, 0, 0));
    const double c = D(0, 0, 0);
    const double dxx = D(0, 0, 1) + D(0, 0, -1) - 2 * c;
    const double dyy = D(0, 1, 0) + D(0, -1, 0) - 2 * c;
    const double dss = D(1, 0, 0) + D(-1, 0, 0) - 2 * c;
    const double dxy = 0.25 * (D(0, 1, 1) - D(0, 1, -1) - D(0, -1, 1) + D(0, -1, -1));
    const double dxs = 0.25 * (D(1, 0, 1) - D(1, 0, -1) - D(-1, 0, 1) + D(-1, 0, -1));
    const double dys = 0.25 * (D(1, 1, 0) - D(1, -1, 0) - D(-1, 1, 0) + D(-1, -1, 0));
    H << dxx, dxy, dxs, dxy, dyy, dys, dxs, dys, dss;
    off = -H.colPivHouseholderQr().solve(g);
    if (!off.allFinite()) return std::nullopt;
    if (std::abs(off[0]) < 0.5 && std::abs(off[1]) < 0.5 && std::abs(off[2]) < 0.5) break;
    x += static_cast<int>(std::lround(off[0]));
    y += static_cast<int>(std::lround(off[1]));
    s += static_cast<int>(std::lround(off[2]));
    if (s < 1 || s > p.scales || y < kBorder || y >= h - kBorder || x < kBorder || x >= w - kBorder) {
      return std::nullopt;
    }
  }
  if (step == kRefineSteps) return std::nullopt;
  const double response = dog[s].at(y, x) + 0.5 * g.dot(off);
  if (std::abs(response) < p.contrast) return std::nullopt;
  const double tr = H(0, 0) + H(1, 1);
  const double det = H(0, 0) * H(1, 1) - H(0, 1) * H(0, 1);
  const double r = p.edge_ratio;
  if (det <= 0 || tr * tr * r >= (r + 1) * (r + 1) * det) return std::nullopt;
  return Refined{s, y, x, off[2], off[1], off[0], std::abs(response)};
}

bool gradient(const Image& img, int y, int x, float& mag, float& ori) {
  if (y <= 0 || y >= img.h - 1 || x <= 0 || x >= img.w - 1) return false;
  const float dx = img.at(y, x + 1) - img.at(y, x - 1);
  const float dy = img.at(y + 1, x) - img.at(y - 1, x);
  mag = std::sqrt(dx * dx + dy * dy);
  ori = std::atan2(dy, dx);
  return true;
}

std::vector<float> orientations(const Image& img, int y, int x, double sigma_oct) {
  const double ws = 1.5 * sigma_oct;
  const int radius = static_cast<int>(std::lround(3.0 * ws));
  std::array<double, kOrientationBins> hist{};
  for (int dy = -radius; dy <= radius; ++dy)
    for (int dx = -radius; dx <= radius; ++dx) {
      float mag, ori;
      if (!gradient(img, y + dy, x + dx, mag, ori)) continue;
      const double wgt = std::exp(-(dx * dx + dy * dy) / (2 * ws * ws));
      double b = (ori < 0 ? ori + kTwoPi : ori) * kOrientationBins / kTwoPi;
      int bin = static_cast<int>(std::floor(b)) % kOrientationBins;
      hist[bin] += wgt * mag;
    }
  std::array<double, kOrientationBins> smooth{};
  for (int i = 0; i < kOrientationBins; ++i) {
    auto at = [&](int j) { return hist[(j + kOrientationBins) % kOrientationBins]; };
    smooth[i] = (at(i - 2) + at(i + 2)) / 16.0 + 4.0 * (at(i - 1) + at(i + 1)) / 16.0 + 6.0 * at(i) / 16.0;
  }
  const double peak = *std::max_element(smooth.begin(), smooth.end());
  std::vector<float> out;
  if (peak <= 0) return out;
  for (int i = 0; i < kOrientationBins; ++i) {
    const double l = smooth[(i + kOrientationBins - 1) % kOrientationBins];
    const double r = smooth[(i + 1) % kOrientationBins];
    const double c = smooth[i];
    if (c > l && c > r && c >= kPeakRatio * peak) {
      const double shift = 0.5 * (l - r) / (l - 2 * c + r);
      double bin = i + shift;
      double angle = bin * kTwoPi / kOrientationBins;
      if (angle < 0) angle += kTwoPi;
      if (angle >= kTwoPi) angle -= kTwoPi;
      out.push_back(static_cast<float>(angle));
    }
  }
  return out;
}

std::array<float, 128> describe(const Image& img, double y, double x, double sigma_oct, double angle) {
  constexpr int d = kDescWidth, n = kDescBins;
  const double hist_width = 3.0 * sigma_oct;
  const int radius = static_cast<int>(std::lround(hist_width * std::sqrt(2.0) * (d + 1) * 0.5));
  const double c = std::cos(angle), s = std::sin(angle);
  std::array<double, (d + 2) * (d + 2) * (n + 2)> hist{};
  auto idx = [&](int r, int cc, int o) { return (r * (d + 2) + cc) * (n + 2) + o; };
  const int iy = static_cast<int>(std::lround(y)), ix = static_cast<int>(std::lround(x));
  for (int dy = -radius; dy <= radius; ++dy)
    for (int dx = -radius; dx <= radius; ++dx) {
      const double xr = (c * dx + s * dy) / hist_width;
      const double yr = (-s * dx + c * dy) / hist_width;
      const double rbin = yr + d / 2.0 - 0.5, cbin = xr + d / 2.0 - 0.5;
      if (rbin <= -1 || rbin >= d || cbin <= -1 || cbin >= d) continue;
      float mag, ori;
      if (!gradient(img, iy + dy, ix + dx, mag, ori)) continue;
      double rel = ori - angle;
      while (rel < 0) rel += kTwoPi;
      while (rel >= kTwoPi) rel -= kTwoPi;
      const double obin = rel * n / kTwoPi;
      const double wgt = mag * std::exp(-(xr * xr + yr * yr) / (2.0 * (0.5 * d) * (0.5 * d)));
      const int r0 = static_cast<int>(std::floor(rbin)), c0 = static_cast<int>(std::floor(cbin));
      const int o0 = static_cast<int>(std::floor(obin));
      const double fr = rbin - r0, fc = cbin - c0, fo = obin - o0;
      for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b)
          for (int e = 0; e < 2; ++e) {
            const double v = wgt * (a ? fr : 1 - fr) * (b ? fc : 1 - fc) * (e ? fo : 1 - fo);
            hist[idx(r0 + 1 + a, c0 + 1 + b, (o0 + e) % n)] += v;
          }
    }
  std::array<float, 128> desc{};
  for (int r = 0; r < d; ++r)
    for (int cc = 0; cc < d; ++cc)
      for (int o = 0; o < n; ++o) desc[(r * d + cc) * n + o] = static_cast<float>(hist[idx(r + 1, cc + 1, o)]);
  auto normalize = [&] {
    double norm = 0;
    for (float v : desc) norm += static_cast<double>(v) * v;
    norm = std::sqrt(norm);
    if (norm > 0) for (float& v : desc) v = static_cast<float>(v / norm);
  };
  normalize();
  for (float& v : desc) v = std::min(v, kDescClamp);
  normalize();
  return desc;
}

Image luminance(const Tensor<float>& image) {
  const Shape s = image.shape();
  if (s.n != 1 || (s.c != 1 && s.c != 3)) {
    throw ShapeError("sift_detect: expected (1, 1 or 3, H, W), got " + s.str());
  }
  if (s.h < 32 || s.w < 32) throw std::invalid_argument("sift_detect: image smaller than 32x32");
  Image g(s.h, s.w);
  for (int y = 0; y < s.h; ++y)
    for (int x = 0; x < s.w; ++x) {
      g.at(y, x) = s.c == 1 ? image.at(0, 0, y, x)
                            : 0.299f * image.at(0, 0, y, x) + 0.587f * image.at(0, 1, y, x) +
                                  0.114f * image.at(0, 2, y, x);
    }
  return g;
}

}  // namespace

std::vector<Keypoint> sift_detect(const Tensor<float>& image, const SiftParams& p) {
  if (p.octaves < 1 || p.scales < 1 || !(p.sigma > 0) || !(p.contrast >= 0) || !(p.edge_ratio > 1)) {
    throw std::invalid_argument("sift_detect: invalid parameters");
  }
  const Pyramid pyr = build_pyramid(luminance(image), p);
  std::vector<Keypoint> out;
  const double pre_threshold = 0.5 * p.contrast;
  for (std::size_t o = 0; o < pyr.dog.size(); ++o) {
    const auto& dog = pyr.dog[o];
    const int h = dog[0].h, w = dog[0].w;
    const double unit = std::ldexp(1.0, static_cast<int>(o));
    for (int s = 1; s <= p.scales; ++s)
      for (int y = kBorder; y < h - kBorder; ++y)
        for (int x = kBorder; x < w - kBorder; ++x) {
          if (std::abs(dog[s].at(y, x)) <= pre_threshold || !is_extremum(dog, s, y, x)) continue;
          const auto r = refine(dog, s, y, x, p);
          if (!r) continue;
          const double sigma_oct = p.sigma * std::pow(2.0, (r->s + r->os) / p.scales);
          const Image& g = pyr.gauss[o][r->s];
          for (float angle : orientations(g, r->y, r->x, sigma_oct)) {
            Keypoint k;
            k.x = static_cast<float>((r->x + r->ox) * unit);
            k.y = static_cast<float>((r->y + r->oy) * unit);
            k.scale = static_cast<float>(sigma_oct * unit);
            k.orientation = angle;
            k.response = static_cast<float>(r->response);
            k.octave = static_cast<int>(o);
            k.descriptor = describe(g, r->y + r->oy, r->x + r->ox, sigma_oct, angle);
            out.push_back(k);
          }
        }
  }
  return out;
}

namespace {

// Index of the nearest and the distances to the two nearest descriptors.
struct Nearest {
  std::size_t index = 0;
  float best = std::numeric_limits<float>::infinity();
  float second = std::numeric_limits<float>::infinity();
};

Nearest nearest(const Keypoint& q, const std::vector<Keypoint>& set) {
  Nearest n;
  for (std::size_t j = 0; j < set.size(); ++j) {
    float d2 = 0;
    for (int i = 0; i < 128; ++i) {
      const float diff = q.descriptor[i] - set[j].descriptor[i];
      d2 += diff * diff;
    }
    if (d2 < n.best) {
      n.second = n.best;
      n.best = d2;
      n.index = j;
    } else if (d2 < n.second) {
      n.second = d2;
    }
  }
  n.best = std::sqrt(n.best);
  n.second = std::sqrt(n.second);
  return n;
}

}  // namespace

std::vector<Match> match_descriptors(const std::vector<Keypoint>& a, const std::vector<Keypoint>& b,
                                     double ratio, bool cross_check) {
  std::vector<Match> out;
  if (a.empty() || b.empty()) return out;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const Nearest n = nearest(a[i], b);
    if (!(n.best < ratio * n.second)) continue;
    if (cross_check && nearest(b[n.index], a).index != i) continue;
    out.push_back({i, n.index, n.best});
  }
  return out;
}

MiningResult mine_pairs(const std::vector<Keypoint>& ka, const std::vector<Keypoint>& kb, Shape as,
                        Shape bs, const MiningOptions& opt) {
  if (opt.crop < 1 || opt.crops_per_image < 1 || opt.min_matches < 0) {
    throw std::invalid_argument("mine_pairs: crop and crops_per_image must be positive");
  }
  MiningResult res;
  if (as.h < opt.crop || as.w < opt.crop || bs.h < opt.crop || bs.w < opt.crop) {
    res.diagnostic = "images smaller than the crop size";
    return res;
  }
  const auto matches = match_descriptors(ka, kb, opt.ratio, true);
  Rng rng(opt.seed);
  for (int t = 0; t < opt.crops_per_image; ++t) {
    MinedPair pr;
    pr.input_y = static_cast<int>(rng.below(static_cast<std::uint64_t>(as.h - opt.crop + 1)));
    pr.input_x = static_cast<int>(rng.below(static_cast<std::uint64_t>(as.w - opt.crop + 1)));
    double sy = 0, sx = 0;
    int count = 0;
    for (const auto& m : matches) {
      const Keypoint& p = ka[m.a];
      if (p.y < pr.input_y || p.y >= pr.input_y + opt.crop || p.x < pr.input_x || p.x >= pr.input_x + opt.crop) {
        continue;
      }
      sy += kb[m.b].y - p.y;
      sx += kb[m.b].x - p.x;
      ++count;
    }
    if (count < opt.min_matches || count == 0) {
      ++res.rejected;
      continue;
    }
    pr.match_score = count;
    pr.reference_y = std::clamp(static_cast<int>(std::lround(pr.input_y + sy / count)), 0, bs.h - opt.crop);
    pr.reference_x = std::clamp(static_cast<int>(std::lround(pr.input_x + sx / count)), 0, bs.w - opt.crop);
    res.pairs.push_back(pr);
  }
  if (res.pairs.empty()) {
    res.diagnostic = std::to_string(matches.size()) + " matches overall; every crop had fewer than " +
                     std::to_string(opt.min_matches) + " interior matches";
  }
  return res;
}

MiningResult mine_pairs(const Tensor<float>& a, const Tensor<float>& b, const MiningOptions& opt) {
  return mine_pairs(sift_detect(a), sift_detect(b), a.shape(), b.shape(), opt);
}

}  // namespace refpaint
