#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "refpaint/layers.hpp"
#include "refpaint/tensor.hpp"

namespace refpaint {

struct LossWeights {
  double reconstruction = 1.0;
  double perceptual = 0.1;
  double style = 250.0;
  double adversarial = 0.2;
  double branch = 1.0;

  void validate() const;
};

inline constexpr double kHoleWeight = 6.0;

/// Fixed five-stage convolutional pyramid for perceptual and style terms.
/// Stage 1 keeps resolution, each later stage halves it. Its parameters never
/// receive gradients; gradients still flow to the input image.
template <typename T>
class FeatureNet {
 public:
  static constexpr int kStages = 5;

  explicit FeatureNet(std::uint64_t seed = 1234, int width = 8);

  FeatureNet(const FeatureNet&) = delete;
  FeatureNet& operator=(const FeatureNet&) = delete;

  std::vector<Tensor<T>> operator()(const Tensor<T>& image) const;

  /// Replaces the seeded weights with an exported set stored in the archive
  /// format, tensor names `featnet.stage<i>.weight` / `.bias`.
  void import_weights(const std::filesystem::path& archive_dir);

  const ParameterSet<T>& parameters() const { return params_; }
  ParameterSet<T>& parameters() { return params_; }

 private:
  ParameterSet<T> params_;
  std::vector<Conv2d<T>> stages_;
};

/// mean |out - target| over valid pixels + kHoleWeight * mean over holes. A
/// side with no pixels contributes nothing.
template <typename T>
Tensor<T> reconstruction_loss(const Tensor<T>& output, const Tensor<T>& target, const Tensor<T>& mask);

/// L1 restricted to the holes, used for progress reporting.
template <typename T>
Tensor<T> hole_l1(const Tensor<T>& output, const Tensor<T>& target, const Tensor<T>& mask);

template <typename T>
Tensor<T> perceptual_loss(const Tensor<T>& output, const Tensor<T>& target, const FeatureNet<T>& net);

template <typename T>
Tensor<T> style_loss(const Tensor<T>& output, const Tensor<T>& target, const FeatureNet<T>& net);

enum class AdversarialSide { kGenerator, kDiscriminator };

/// Relativistic average least-squares loss over critic score maps.
template <typename T>
Tensor<T> ra_lsgan_loss(const Tensor<T>& real_scores, const Tensor<T>& fake_scores,
                        AdversarialSide side);

/// L1(texture projection, image) + L1(structure projection, structure image),
/// both over the full image.
template <typename T>
Tensor<T> branch_supervision_loss(const Tensor<T>& texture_rgb, const Tensor<T>& structure_rgb,
                                  const Tensor<T>& gt_image, const Tensor<T>& gt_structure);

template <typename T>
struct LossTerms {
  Tensor<T> reconstruction;
  Tensor<T> perceptual;
  Tensor<T> style;
  Tensor<T> adversarial;
  Tensor<T> branch;
};

template <typename T>
struct TotalLoss {
  Tensor<T> total;
  // Component values in the order reconstruction, perceptual, style,
  // adversarial, branch, for logging.
  std::vector<double> components;
};

/// Weighted sum. Undefined terms count as zero.
template <typename T>
TotalLoss<T> total_loss(const LossTerms<T>& terms, const LossWeights& weights);

}  // namespace refpaint
