#pragma once

// Image and mask files, hole-ratio buckets, reference substitution modes and
// the pair manifest.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "refpaint/tensor.hpp"

namespace refpaint {

class ImageIoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// 8-bit RGB PNG as (1, 3, H, W) with values v / 255. Gray and alpha inputs
/// are converted to RGB.
Tensor<float> load_image(const std::filesystem::path& path);

/// Writes a (1, 3, H, W) or (1, 1, H, W) tensor as 8-bit PNG, rounding
/// clamp(v, 0, 1) * 255 to nearest.
void save_image(const std::filesystem::path& path, const Tensor<float>& image);

/// Mask PNG as (1, 1, H, W): gray value >= 128 is valid (1), else hole (0).
Tensor<float> load_mask(const std::filesystem::path& path);

/// Writes a binary mask as 255 (valid) / 0 (hole).
void save_mask(const std::filesystem::path& path, const Tensor<float>& mask);

/// Crops rows [y, y + h) and columns [x, x + w) of every channel.
Tensor<float> crop(const Tensor<float>& image, int y, int x, int h, int w);

// Hole-ratio buckets [0.1, 0.2), [0.2, 0.3), ..., [0.5, 0.6).
inline constexpr int kBucketCount = 5;
inline constexpr std::array<const char*, kBucketCount> kBucketLabels{"10-20%", "20-30%", "30-40%",
                                                                    "40-50%", "50-60%"};

struct HoleCount {
  std::size_t holes = 0;
  std::size_t total = 0;
  double ratio() const { return total == 0 ? 0.0 : static_cast<double>(holes) / total; }
};

HoleCount count_holes(const Tensor<float>& mask);

/// Bucket index in [0, kBucketCount) or nullopt for ratios outside [0.1, 0.6).
/// Decided with integer arithmetic on the hole count, so boundaries are exact.
std::optional<int> classify_bucket(const HoleCount& count);
std::optional<int> classify_bucket(const Tensor<float>& mask);

/// Irregular mask of random thick strokes with a hole ratio in [lo, hi).
/// Throws if the target cannot be met.
Tensor<float> generate_mask(int size, double lo, double hi, std::uint64_t seed);

enum class ReferenceMode { kReal, kBlack, kShuffled };

ReferenceMode parse_reference_mode(const std::string& name);
std::string to_string(ReferenceMode mode);

/// Uniformly drawn permutation of [0, n) without fixed points.
std::vector<std::size_t> derangement(std::size_t n, std::uint64_t seed);

/// Chooses the reference shown to the network for each pair of a dataset.
class ReferenceSelector {
 public:
  ReferenceSelector(ReferenceMode mode, std::size_t dataset_size, std::uint64_t seed);

  /// Index of the pair whose reference is used, or nullopt for black.
  std::optional<std::size_t> source(std::size_t pair_index) const;

  Tensor<float> reference(std::size_t pair_index, const std::vector<Tensor<float>>& references) const;

  ReferenceMode mode() const { return mode_; }

 private:
  ReferenceMode mode_;
  std::vector<std::size_t> permutation_;
};

/// One mined pair. Paths are relative to the manifest's directory.
struct ManifestRecord {
  std::string input;
  std::string reference;
  std::string source_a;
  std::string source_b;
  int input_y = 0;
  int input_x = 0;
  int reference_y = 0;
  int reference_x = 0;
  int match_score = 0;
};

/// Tab-separated, one record per line after a '#' header.
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRecord>& records);
std::vector<ManifestRecord> read_manifest(const std::filesystem::path& path);

}  // namespace refpaint
