#include "refpaint/evaluation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include "refpaint/metrics.hpp"
#include "refpaint/rng.hpp"

namespace refpaint {

namespace {

using Clock = std::chrono::steady_clock;

double mean_of_sorted(std::vector<double> v) {
  // Sorting first makes the sum independent of sample order.
  std::sort(v.begin(), v.end());
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

MaskAssignment assign_masks(const std::vector<PairSample>& pairs, const std::vector<Tensor<float>>& masks,
                            std::uint64_t seed) {
  MaskAssignment out;
  std::array<std::vector<std::size_t>, kBucketCount> by_bucket;
  for (std::size_t i = 0; i < masks.size(); ++i) {
    const auto b = classify_bucket(masks[i]);
    if (b) {
      by_bucket[*b].push_back(i);
    } else {
      ++out.excluded_masks;
    }
  }
  Rng rng(seed);
  std::vector<int> nonempty;
  for (int b = 0; b < kBucketCount; ++b) {
    auto& v = by_bucket[b];
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
    if (!v.empty()) nonempty.push_back(b);
  }
  if (nonempty.empty()) throw std::invalid_argument("no mask falls inside a ratio bucket");
  std::array<std::size_t, kBucketCount> next{};
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const int b = nonempty[i % nonempty.size()];
    const auto& v = by_bucket[b];
    out.samples.push_back({pairs[i].image, pairs[i].reference, masks[v[next[b]++ % v.size()]]});
  }
  return out;
}

std::string mode_label(ReferenceMode mode) {
  switch (mode) {
    case ReferenceMode::kReal: return "Reference";
    case ReferenceMode::kBlack: return "No reference";
    case ReferenceMode::kShuffled: return "Random reference";
  }
  return "?";
}

EvalReport score_outputs(const std::vector<Tensor<float>>& outputs, const std::vector<EvalSample>& samples,
                         ReferenceMode mode) {
  if (outputs.size() != samples.size()) throw std::invalid_argument("score_outputs: one output per sample");
  EvalReport r;
  r.mode = mode;
  std::array<std::vector<double>, kBucketCount> psnrs, ssims;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto bucket = classify_bucket(samples[i].mask);
    if (!bucket) {
      ++r.excluded;
      continue;
    }
    const auto out = composite(outputs[i], samples[i].image, samples[i].mask);
    psnrs[*bucket].push_back(psnr(out, samples[i].image));
    ssims[*bucket].push_back(ssim(out, samples[i].image));
    ++r.evaluated;
  }
  if (r.excluded) r.warnings.push_back(std::to_string(r.excluded) + " samples with out-of-range masks excluded");
  std::vector<double> bucket_psnr, bucket_ssim;
  for (int b = 0; b < kBucketCount; ++b) {
    r.buckets[b].count = psnrs[b].size();
    if (psnrs[b].empty()) {
      r.warnings.push_back(std::string("bucket ") + kBucketLabels[b] + " is empty; excluded from Average");
      continue;
    }
    r.buckets[b].psnr = mean_of_sorted(psnrs[b]);
    r.buckets[b].ssim = mean_of_sorted(ssims[b]);
    bucket_psnr.push_back(r.buckets[b].psnr);
    bucket_ssim.push_back(r.buckets[b].ssim);
  }
  const double nan = std::numeric_limits<double>::quiet_NaN();
  r.average_psnr = bucket_psnr.empty() ? nan : std::accumulate(bucket_psnr.begin(), bucket_psnr.end(), 0.0) / bucket_psnr.size();
  r.average_ssim = bucket_ssim.empty() ? nan : std::accumulate(bucket_ssim.begin(), bucket_ssim.end(), 0.0) / bucket_ssim.size();
  return r;
}

EvalReport evaluate(const Generator<float>& generator, const std::vector<EvalSample>& samples, ReferenceMode mode,
                    std::uint64_t seed) {
  std::vector<Tensor<float>> refs;
  for (const auto& s : samples) refs.push_back(s.reference);
  const ReferenceSelector selector(mode, samples.size(), seed);
  std::vector<Tensor<float>> outputs;
  std::size_t ran = 0;
  NoGradGuard guard;
  const auto start = Clock::now();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (!classify_bucket(samples[i].mask)) {
      outputs.push_back(samples[i].image);
      continue;
    }
    outputs.push_back(generator.forward(samples[i].image, samples[i].mask, selector.reference(i, refs)).raw);
    ++ran;
  }
  const double seconds = std::chrono::duration<double>(Clock::now() - start).count();
  EvalReport r = score_outputs(outputs, samples, mode);
  r.seconds_per_image = ran ? seconds / static_cast<double>(ran) : 0.0;
  return r;
}

std::string render_table(const std::vector<EvalReport>& reports) {
  auto cell = [](std::size_t count, double p, double s) -> std::string {
    if (count == 0 || std::isnan(p)) return "n/a";
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.2f/%.3f", p, s);
    return buf;
  };
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> header{"Mask of Ratio"};
  for (const char* l : kBucketLabels) header.push_back(l);
  header.push_back("Average");
  rows.push_back(header);
  for (const auto& r : reports) {
    std::vector<std::string> row{mode_label(r.mode)};
    for (const auto& b : r.buckets) row.push_back(cell(b.count, b.psnr, b.ssim));
    row.push_back(cell(r.evaluated, r.average_psnr, r.average_ssim));
    rows.push_back(row);
  }
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& row : rows)
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  std::string out;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t c = 0; c < rows[i].size(); ++c) {
      out += rows[i][c] + std::string(width[c] - rows[i][c].size(), ' ');
      out += c + 1 < rows[i].size() ? " | " : "\n";
    }
    if (i == 0) {
      for (std::size_t c = 0; c < width.size(); ++c) out += std::string(width[c], '-') + (c + 1 < width.size() ? "-+-" : "\n");
    }
  }
  return out;
}

Tensor<float> inpaint(const Generator<float>& generator, const Tensor<float>& image, const Tensor<float>& mask,
                      const std::optional<Tensor<float>>& reference) {
  const Shape s = image.shape();
  if (mask.shape().h != s.h || mask.shape().w != s.w) {
    throw ShapeError("inpaint: mask " + mask.shape().str() + " does not match image " + s.str());
  }
  if (reference && reference->shape() != s) {
    throw ShapeError("inpaint: reference " + reference->shape().str() + " does not match image " + s.str());
  }
  NoGradGuard guard;
  const Tensor<float> ref = reference ? *reference : Tensor<float>::zeros(s);
  return generator.forward(image, mask, ref).composite;
}

BenchResult bench(const Generator<float>& generator, int runs, std::uint64_t seed) {
  if (runs < 10) throw std::invalid_argument("bench: need at least 10 timed runs");
  const int size = generator.config().image_size;
  Rng rng(seed);
  auto image = Tensor<float>::zeros({1, 3, size, size});
  auto reference = Tensor<float>::zeros({1, 3, size, size});
  for (float& v : image.data()) v = static_cast<float>(rng.uniform());
  for (float& v : reference.data()) v = static_cast<float>(rng.uniform());
  auto mask = Tensor<float>::full({1, 1, size, size}, 1.0f);
  for (int y = size / 4; y < 3 * size / 4; ++y)
    for (int x = size / 4; x < 3 * size / 4; ++x) mask.at(0, 0, y, x) = 0.0f;
  NoGradGuard guard;
  std::vector<double> ms;
  for (int i = 0; i < kBenchWarmups + runs; ++i) {
    const auto t0 = Clock::now();
    const auto out = generator.forward(image, mask, reference);
    const double elapsed = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
    if (i >= kBenchWarmups) ms.push_back(elapsed);
  }
  BenchResult b;
  b.runs = runs;
  b.mean_ms = std::accumulate(ms.begin(), ms.end(), 0.0) / runs;
  double var = 0;
  for (double v : ms) var += (v - b.mean_ms) * (v - b.mean_ms);
  b.std_ms = std::sqrt(var / (runs - 1));
  return b;
}

}  // namespace refpaint
