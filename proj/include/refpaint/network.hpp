#pragma once

// Reference-guided inpainting generator and its patch critic.
//
// Data flow for one sample:
//   encode(input, mask), encode(reference, ones)  -> per-stage features
//   split                                          -> texture / structure
//   FeatureAlign x2                                -> aligned features
//   fill_branches (multi-kernel partial convs)     -> filled features
//   fuse_and_equalize                              -> F_sf
//   decode (residual blocks + skip decoder)        -> raw output, composite

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "refpaint/align.hpp"
#include "refpaint/layers.hpp"
#include "refpaint/tensor.hpp"

namespace refpaint {

struct NetworkConfig {
  int image_size = 64;
  int base_channels = 16;
  int encoder_depth = 5;
  std::vector<int> texture_layers{1, 2};       // 1-based encoder stage indices
  std::vector<int> structure_layers{3, 4, 5};
  std::vector<int> branch_kernel_sizes{3, 5, 7};
  std::vector<int> residual_dilations{2, 2, 4, 4};  // one residual block per entry
  int fam_hidden = 0;                               // 0 selects 2 * base_channels

  void validate() const;
  int working_size() const { return image_size / 8; }
  int feature_channels() const { return 4 * base_channels; }
  int stage_channels(int stage) const;  // stage in [1, encoder_depth]
  int hidden() const { return fam_hidden > 0 ? fam_hidden : 2 * base_channels; }
};

/// Nearest-neighbour resize of a (N, 1, H, W) binary mask. Carries no gradient.
template <typename T>
Tensor<T> resize_mask_nearest(const Tensor<T>& mask, int out_h, int out_w);

/// out * (1 - mask) + input * mask, with the single-channel mask broadcast.
template <typename T>
Tensor<T> composite(const Tensor<T>& output, const Tensor<T>& input, const Tensor<T>& mask);

template <typename T>
struct BranchOutput {
  Tensor<T> texture;
  Tensor<T> structure;
  // Final updated mask of every stream: texture streams, then structure.
  std::vector<Tensor<T>> stream_masks;
};

template <typename T>
struct ForwardOutput {
  Tensor<T> composite;
  Tensor<T> raw;
  Tensor<T> texture;    // F_fte
  Tensor<T> structure;  // F_fst
};

template <typename T>
class Generator {
 public:
  Generator(const NetworkConfig& config, std::uint64_t seed);

  Generator(const Generator&) = delete;
  Generator& operator=(const Generator&) = delete;

  /// Stage features for concat(image * mask, mask); stage i has spatial size
  /// image_size / 2^i.
  std::vector<Tensor<T>> encode(const Tensor<T>& image, const Tensor<T>& mask) const;

  /// Texture and structure features at the working resolution.
  std::pair<Tensor<T>, Tensor<T>> split(const std::vector<Tensor<T>>& stages) const;

  /// `mask` is at the working resolution.
  BranchOutput<T> fill_branches(const Tensor<T>& aligned_texture,
                                const Tensor<T>& aligned_structure, const Tensor<T>& mask) const;

  Tensor<T> fuse_and_equalize(const Tensor<T>& texture, const Tensor<T>& structure) const;

  /// Raw sigmoid output at image resolution.
  Tensor<T> decode(const Tensor<T>& fused, const std::vector<Tensor<T>>& stages) const;

  ForwardOutput<T> forward(const Tensor<T>& input, const Tensor<T>& mask,
                           const Tensor<T>& reference) const;

  /// 1x1 projections of F_fte / F_fst to RGB, resized to image resolution.
  std::pair<Tensor<T>, Tensor<T>> project_branches(const Tensor<T>& texture,
                                                   const Tensor<T>& structure) const;

  const NetworkConfig& config() const { return config_; }
  ParameterSet<T>& parameters() { return params_; }
  const ParameterSet<T>& parameters() const { return params_; }

 private:
  struct Stream {
    int kernel = 3;
    std::vector<Conv2d<T>> layers;  // weights/biases used by partial_conv2d
  };
  struct ResidualBlock {
    Conv2d<T> first;
    Conv2d<T> second;
  };

  void check_image(const Tensor<T>& image, int channels, const char* what) const;
  Tensor<T> run_stream(const Stream& s, Tensor<T> x, Tensor<T>& mask) const;

  NetworkConfig config_;
  ParameterSet<T> params_;
  std::vector<Conv2d<T>> encoder_;
  Conv2d<T> texture_proj_;
  Conv2d<T> structure_proj_;
  FeatureAlign<T> align_texture_;
  FeatureAlign<T> align_structure_;
  std::vector<Stream> texture_streams_;
  std::vector<Stream> structure_streams_;
  Conv2d<T> texture_fuse_;
  Conv2d<T> structure_fuse_;
  Conv2d<T> branch_fuse_;
  FeatureEqualizer<T> equalizer_;
  std::vector<ResidualBlock> residual_;
  std::vector<ConvTranspose2d<T>> decoder_;  // decoder_[i] upsamples stage i + 1
  Conv2d<T> output_conv_;
  Conv2d<T> texture_rgb_;
  Conv2d<T> structure_rgb_;
};

/// Four strided 4x4 convolutions producing a (N, 1, H/16, W/16) score map.
template <typename T>
class Discriminator {
 public:
  Discriminator(int base_channels, std::uint64_t seed);

  Discriminator(const Discriminator&) = delete;
  Discriminator& operator=(const Discriminator&) = delete;

  Tensor<T> operator()(const Tensor<T>& image) const;

  ParameterSet<T>& parameters() { return params_; }
  const ParameterSet<T>& parameters() const { return params_; }

 private:
  ParameterSet<T> params_;
  std::vector<Conv2d<T>> layers_;
};

/// Instance norm, skipped on maps with fewer than 16 positions where the
/// per-channel statistics degenerate.
template <typename T>
Tensor<T> norm_if_large(const Tensor<T>& x);

extern template class Generator<float>;
extern template class Generator<double>;
extern template class Discriminator<float>;
extern template class Discriminator<double>;

}  // namespace refpaint
