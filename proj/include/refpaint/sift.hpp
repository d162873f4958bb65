#pragma once

// Scale-invariant keypoints, ratio-test matching and reference-crop mining.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "refpaint/tensor.hpp"

namespace refpaint {

struct SiftParams {
  int octaves = 4;
  int scales = 3;               // scales per octave
  double sigma = 1.6;           // blur of the first scale of each octave
  double contrast = 0.03;       // minimum |DoG| at the refined extremum
  double edge_ratio = 10.0;     // principal-curvature ratio bound
};

struct Keypoint {
  float x = 0;  // image coordinates, sub-pixel
  float y = 0;
  float scale = 0;        // blur sigma in image pixels
  float orientation = 0;  // radians, gradient direction
  float response = 0;     // |DoG| at the refined extremum
  int octave = 0;
  std::array<float, 128> descriptor{};
};

/// Detects keypoints on the luminance of a (1, 1 or 3, H, W) image in [0, 1].
/// Throws std::invalid_argument when either side is below 32 pixels.
std::vector<Keypoint> sift_detect(const Tensor<float>& image, const SiftParams& params = {});

struct Match {
  std::size_t a = 0;
  std::size_t b = 0;
  float distance = 0;
};

/// Nearest neighbours with Lowe's ratio test, optionally kept only when
/// the match is also mutual.
std::vector<Match> match_descriptors(const std::vector<Keypoint>& a, const std::vector<Keypoint>& b,
                                     double ratio = 0.75, bool cross_check = true);

struct MinedPair {
  int input_y = 0;
  int input_x = 0;
  int reference_y = 0;
  int reference_x = 0;
  int match_score = 0;  // matches whose A-side keypoint lies inside the input crop
};

struct MiningResult {
  std::vector<MinedPair> pairs;
  int rejected = 0;
  std::string diagnostic;
};

struct MiningOptions {
  int crop = 256;
  int min_matches = 20;
  int crops_per_image = 1;
  std::uint64_t seed = 0;
  double ratio = 0.75;
};

/// Random input crops from `a`. Each reference crop of `b` is placed at the
/// input origin plus the mean displacement of the matches inside the input
/// crop (centroid of the B-side keypoints relative to the A-side centroid),
/// clamped to the bounds of `b`. Crops with fewer than min_matches interior
/// matches are rejected.
MiningResult mine_pairs(const Tensor<float>& a, const Tensor<float>& b, const MiningOptions& options);

/// Same, reusing detections.
MiningResult mine_pairs(const std::vector<Keypoint>& ka, const std::vector<Keypoint>& kb,
                        Shape a_shape, Shape b_shape, const MiningOptions& options);

}  // namespace refpaint
