#pragma once

// Bucketed PSNR/SSIM evaluation, single-image inference and timing.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "refpaint/data.hpp"
#include "refpaint/network.hpp"
#include "refpaint/training.hpp"

namespace refpaint {

struct EvalSample {
  Tensor<float> image;
  Tensor<float> reference;
  Tensor<float> mask;
};

struct MaskAssignment {
  std::vector<EvalSample> samples;
  std::size_t excluded_masks = 0;  // masks whose ratio falls outside every bucket
};

/// Gives test pair i a mask from bucket b = (i mod k) of the k non-empty
/// buckets, cycling through that bucket's masks in an order shuffled by
/// `seed`.
MaskAssignment assign_masks(const std::vector<PairSample>& pairs, const std::vector<Tensor<float>>& masks,
                            std::uint64_t seed);

struct BucketStats {
  std::size_t count = 0;
  double psnr = 0;  // means over the bucket's images
  double ssim = 0;
};

struct EvalReport {
  ReferenceMode mode = ReferenceMode::kReal;
  std::array<BucketStats, kBucketCount> buckets{};
  double average_psnr = 0;  // mean of the non-empty bucket means; NaN when all are empty
  double average_ssim = 0;
  std::size_t evaluated = 0;
  std::size_t excluded = 0;  // samples whose mask is outside every bucket
  double seconds_per_image = 0;
  std::vector<std::string> warnings;
};

/// Runs the generator on every sample with the reference chosen by `mode`
/// (shuffled mode permutes references with `seed`) and scores the composite
/// against the ground truth.
EvalReport evaluate(const Generator<float>& generator, const std::vector<EvalSample>& samples, ReferenceMode mode,
                    std::uint64_t seed);

/// Scores precomputed outputs (composited with each sample's mask) against
/// the samples' ground truth.
EvalReport score_outputs(const std::vector<Tensor<float>>& outputs, const std::vector<EvalSample>& samples,
                         ReferenceMode mode);

/// "Reference", "No reference" or "Random reference".
std::string mode_label(ReferenceMode mode);

/// Rows are reports, columns the five mask-ratio buckets plus Average, each
/// cell PSNR/SSIM or n/a.
std::string render_table(const std::vector<EvalReport>& reports);

/// Composite output for one image; no reference means the black image.
/// Throws ShapeError unless image, mask and reference sizes agree with the
/// generator's resolution.
Tensor<float> inpaint(const Generator<float>& generator, const Tensor<float>& image, const Tensor<float>& mask,
                      const std::optional<Tensor<float>>& reference);

struct BenchResult {
  int runs = 0;
  double mean_ms = 0;
  double std_ms = 0;
};

inline constexpr int kBenchWarmups = 3;

/// Forward wall-clock over `runs` timed passes after kBenchWarmups untimed
/// ones. Throws std::invalid_argument for runs < 10.
BenchResult bench(const Generator<float>& generator, int runs, std::uint64_t seed = 0);

}  // namespace refpaint
