#include "refpaint/data.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "refpaint/rng.hpp"

namespace refpaint {

namespace fs = std::filesystem;

namespace {

std::vector<std::uint8_t> read_png(const fs::path& path, png_uint_32 format, int& h, int& w) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw ImageIoError("cannot read PNG " + path.string() + ": " + img.message);
  }
  img.format = format;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&img);
    throw ImageIoError("cannot decode PNG " + path.string() + ": " + img.message);
  }
  h = static_cast<int>(img.height);
  w = static_cast<int>(img.width);
  return buf;
}

void write_png(const fs::path& path, png_uint_32 format, int h, int w,
               const std::vector<std::uint8_t>& buf) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.format = format;
  img.height = static_cast<png_uint_32>(h);
  img.width = static_cast<png_uint_32>(w);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  if (!png_image_write_to_file(&img, path.c_str(), 0, buf.data(), 0, nullptr)) {
    throw ImageIoError("cannot write PNG " + path.string() + ": " + img.message);
  }
}

std::uint8_t to_byte(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

}  // namespace

Tensor<float> load_image(const fs::path& path) {
  int h = 0, w = 0;
  const auto buf = read_png(path, PNG_FORMAT_RGB, h, w);
  auto t = Tensor<float>::zeros({1, 3, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) t.at(0, c, y, x) = buf[(static_cast<std::size_t>(y) * w + x) * 3 + c] / 255.0f;
  return t;
}

void save_image(const fs::path& path, const Tensor<float>& image) {
  const Shape s = image.shape();
  if (s.n != 1 || (s.c != 3 && s.c != 1)) {
    throw ShapeError("save_image: expected (1, 3, H, W) or (1, 1, H, W), got " + s.str());
  }
  std::vector<std::uint8_t> buf(static_cast<std::size_t>(s.h) * s.w * s.c);
  for (int y = 0; y < s.h; ++y)
    for (int x = 0; x < s.w; ++x)
      for (int c = 0; c < s.c; ++c) buf[(static_cast<std::size_t>(y) * s.w + x) * s.c + c] = to_byte(image.at(0, c, y, x));
  write_png(path, s.c == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY, s.h, s.w, buf);
}

Tensor<float> load_mask(const fs::path& path) {
  int h = 0, w = 0;
  const auto buf = read_png(path, PNG_FORMAT_GRAY, h, w);
  auto t = Tensor<float>::zeros({1, 1, h, w});
  for (std::size_t i = 0; i < buf.size(); ++i) t.data()[i] = buf[i] >= 128 ? 1.0f : 0.0f;
  return t;
}

void save_mask(const fs::path& path, const Tensor<float>& mask) {
  const Shape s = mask.shape();
  if (s.n != 1 || s.c != 1) throw ShapeError("save_mask: expected (1, 1, H, W), got " + s.str());
  std::vector<std::uint8_t> buf(mask.numel());
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = mask.data()[i] >= 0.5f ? 255 : 0;
  write_png(path, PNG_FORMAT_GRAY, s.h, s.w, buf);
}

Tensor<float> crop(const Tensor<float>& image, int y, int x, int h, int w) {
  const Shape s = image.shape();
  if (y < 0 || x < 0 || h <= 0 || w <= 0 || y + h > s.h || x + w > s.w) {
    throw ShapeError("crop: window (" + std::to_string(y) + ", " + std::to_string(x) + ", " +
                     std::to_string(h) + ", " + std::to_string(w) + ") outside " + s.str());
  }
  auto out = Tensor<float>::zeros({s.n, s.c, h, w});
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int r = 0; r < h; ++r)
        for (int q = 0; q < w; ++q) out.at(n, c, r, q) = image.at(n, c, y + r, x + q);
  return out;
}

HoleCount count_holes(const Tensor<float>& mask) {
  if (mask.shape().c != 1) throw ShapeError("count_holes: mask must be single-channel");
  HoleCount hc;
  hc.total = mask.numel();
  for (float v : mask.data()) hc.holes += v == 0.0f ? 1 : 0;
  return hc;
}

std::optional<int> classify_bucket(const HoleCount& count) {
  if (count.total == 0) return std::nullopt;
  const std::size_t decile = 10 * count.holes / count.total;  // floor(10 * ratio)
  if (decile < 1 || decile > 5) return std::nullopt;
  return static_cast<int>(decile) - 1;
}

std::optional<int> classify_bucket(const Tensor<float>& mask) { return classify_bucket(count_holes(mask)); }

Tensor<float> generate_mask(int size, double lo, double hi, std::uint64_t seed) {
  if (size < 8 || !(lo >= 0 && lo < hi && hi <= 1)) {
    throw std::invalid_argument("generate_mask: need size >= 8 and 0 <= lo < hi <= 1");
  }
  Rng rng(seed);
  for (int attempt = 0; attempt < 64; ++attempt) {
    std::vector<std::uint8_t> hole(static_cast<std::size_t>(size) * size, 0);
    std::size_t holes = 0;
    const std::size_t total = hole.size();
    auto stamp = [&](double cy, double cx, double r) {
      const int y0 = std::max(0, static_cast<int>(cy - r)), y1 = std::min(size - 1, static_cast<int>(cy + r));
      const int x0 = std::max(0, static_cast<int>(cx - r)), x1 = std::min(size - 1, static_cast<int>(cx + r));
      for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
          if ((y - cy) * (y - cy) + (x - cx) * (x - cx) > r * r) continue;
          std::uint8_t& cell = hole[static_cast<std::size_t>(y) * size + x];
          if (cell) continue;
          // Never overshoot the upper bound.
          if (static_cast<double>(holes + 1) >= hi * total) return false;
          cell = 1;
          ++holes;
        }
      return true;
    };
    const double target = rng.uniform(lo, hi);
    bool open = true;
    while (open && static_cast<double>(holes) < target * total) {
      double y = rng.uniform(0, size), x = rng.uniform(0, size);
      double angle = rng.uniform(0, 2 * 3.141592653589793);
      const double radius = rng.uniform(0.03, 0.08) * size;
      const int segments = 4 + static_cast<int>(rng.below(8));
      for (int s = 0; s < segments && open; ++s) {
        angle += rng.uniform(-0.9, 0.9);
        const double len = rng.uniform(0.05, 0.2) * size;
        for (double t = 0; t < len && open; t += 0.5 * radius) {
          open = stamp(y, x, radius);
          y = std::clamp(y + 0.5 * radius * std::sin(angle), 0.0, size - 1.0);
          x = std::clamp(x + 0.5 * radius * std::cos(angle), 0.0, size - 1.0);
          if (static_cast<double>(holes) >= target * total) break;
        }
      }
    }
    const HoleCount hc{holes, total};
    if (hc.ratio() >= lo && hc.ratio() < hi) {
      auto m = Tensor<float>::full({1, 1, size, size}, 1.0f);
      for (std::size_t i = 0; i < total; ++i) if (hole[i]) m.data()[i] = 0.0f;
      return m;
    }
  }
  throw std::runtime_error("generate_mask: could not reach the requested hole ratio");
}

ReferenceMode parse_reference_mode(const std::string& name) {
  if (name == "real") return ReferenceMode::kReal;
  if (name == "black") return ReferenceMode::kBlack;
  if (name == "shuffled") return ReferenceMode::kShuffled;
  throw std::invalid_argument("unknown reference mode '" + name + "' (real, black, shuffled)");
}

std::string to_string(ReferenceMode mode) {
  switch (mode) {
    case ReferenceMode::kReal: return "real";
    case ReferenceMode::kBlack: return "black";
    case ReferenceMode::kShuffled: return "shuffled";
  }
  return "?";
}

std::vector<std::size_t> derangement(std::size_t n, std::uint64_t seed) {
  if (n < 2) throw std::invalid_argument("derangement: needs at least 2 elements");
  Rng rng(seed);
  std::vector<std::size_t> p(n);
  for (;;) {
    std::iota(p.begin(), p.end(), std::size_t{0});
    for (std::size_t i = n - 1; i > 0; --i) std::swap(p[i], p[rng.below(i + 1)]);
    bool fixed = false;
    for (std::size_t i = 0; i < n && !fixed; ++i) fixed = p[i] == i;
    if (!fixed) return p;
  }
}

ReferenceSelector::ReferenceSelector(ReferenceMode mode, std::size_t dataset_size, std::uint64_t seed)
    : mode_(mode) {
  if (mode == ReferenceMode::kShuffled) {
    if (dataset_size < 2) {
      throw std::invalid_argument("shuffled reference mode needs at least 2 pairs");
    }
    permutation_ = derangement(dataset_size, seed);
  }
}

std::optional<std::size_t> ReferenceSelector::source(std::size_t pair_index) const {
  switch (mode_) {
    case ReferenceMode::kReal: return pair_index;
    case ReferenceMode::kBlack: return std::nullopt;
    case ReferenceMode::kShuffled: return permutation_.at(pair_index);
  }
  return std::nullopt;
}

Tensor<float> ReferenceSelector::reference(std::size_t pair_index,
                                           const std::vector<Tensor<float>>& references) const {
  const auto src = source(pair_index);
  if (!src) return Tensor<float>::zeros(references.at(pair_index).shape());
  return references.at(*src);
}

void write_manifest(const fs::path& path, const std::vector<ManifestRecord>& records) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  out << "# input\treference\tsource_a\tsource_b\tinput_y\tinput_x\treference_y\treference_x\tmatch_score\n";
  for (const auto& r : records) {
    out << r.input << '\t' << r.reference << '\t' << r.source_a << '\t' << r.source_b << '\t'
        << r.input_y << '\t' << r.input_x << '\t' << r.reference_y << '\t' << r.reference_x << '\t'
        << r.match_score << '\n';
  }
  if (!out) throw std::runtime_error("cannot write manifest " + path.string());
}

std::vector<ManifestRecord> read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest " + path.string());
  std::vector<ManifestRecord> records;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, '\t');) f.push_back(cell);
    if (f.size() != 9) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": expected 9 fields");
    }
    ManifestRecord r{f[0], f[1], f[2], f[3]};
    try {
      r.input_y = std::stoi(f[4]);
      r.input_x = std::stoi(f[5]);
      r.reference_y = std::stoi(f[6]);
      r.reference_x = std::stoi(f[7]);
      r.match_score = std::stoi(f[8]);
    } catch (const std::exception&) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": bad integer field");
    }
    records.push_back(std::move(r));
  }
  return records;
}

}  // namespace refpaint
