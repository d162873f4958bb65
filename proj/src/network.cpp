#include "refpaint/network.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>

#include "refpaint/ops.hpp"

namespace refpaint {

void NetworkConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("network config: " + msg); };
  if (base_channels < 1) fail("base_channels must be positive");
  if (encoder_depth < 1) fail("encoder_depth must be positive");
  if (image_size < 8 || image_size % 8 != 0) fail("image_size must be a positive multiple of 8");
  if (image_size % (1 << encoder_depth) != 0) {
    fail("image_size " + std::to_string(image_size) + " is not divisible by 2^" +
         std::to_string(encoder_depth));
  }
  std::set<int> covered;
  for (const auto* layers : {&texture_layers, &structure_layers}) {
    if (layers->empty()) fail("texture_layers and structure_layers must be non-empty");
    for (int s : *layers) {
      if (s < 1 || s > encoder_depth) fail("stage index " + std::to_string(s) + " out of range");
      covered.insert(s);
    }
  }
  if (static_cast<int>(covered.size()) != encoder_depth) {
    fail("texture_layers and structure_layers must cover every encoder stage");
  }
  if (branch_kernel_sizes.empty()) fail("branch_kernel_sizes must be non-empty");
  for (int k : branch_kernel_sizes) {
    if (k < 1 || k % 2 == 0) fail("branch kernel sizes must be odd");
  }
  for (int d : residual_dilations) {
    if (d < 1) fail("residual dilations must be positive");
  }
  if (fam_hidden < 0) fail("fam_hidden must be >= 0");
}

int NetworkConfig::stage_channels(int stage) const {
  return base_channels * std::min(1 << (stage - 1), 4);
}

template <typename T>
Tensor<T> resize_mask_nearest(const Tensor<T>& mask, int out_h, int out_w) {
  const Shape s = mask.shape();
  if (s.c != 1) throw ShapeError("resize_mask_nearest: mask must be single-channel, got " + s.str());
  auto out = Tensor<T>::zeros({s.n, 1, out_h, out_w});
  for (int n = 0; n < s.n; ++n)
    for (int y = 0; y < out_h; ++y) {
      const int sy = std::min(s.h - 1, static_cast<int>((y + 0.5) * s.h / out_h));
      for (int x = 0; x < out_w; ++x) {
        const int sx = std::min(s.w - 1, static_cast<int>((x + 0.5) * s.w / out_w));
        out.at(n, 0, y, x) = mask.at(n, 0, sy, sx);
      }
    }
  return out;
}

template <typename T>
Tensor<T> composite(const Tensor<T>& output, const Tensor<T>& input, const Tensor<T>& mask) {
  require_same_shape(output.shape(), input.shape(), "composite");
  const Shape s = output.shape();
  auto m = mask.detach();
  auto inverse = add_scalar(scale(m, T(-1)), T(1));
  return add(mul(output, expand(inverse, s)), mul(input, expand(m, s)));
}

template <typename T>
Tensor<T> norm_if_large(const Tensor<T>& x) {
  return x.shape().plane() >= 16 ? instance_norm(x) : x;
}

template <typename T>
Generator<T>::Generator(const NetworkConfig& config, std::uint64_t seed)
    : config_(config), params_(seed) {
  config_.validate();
  const int c = config_.feature_channels();
  int in = 4;
  for (int i = 1; i <= config_.encoder_depth; ++i) {
    encoder_.emplace_back(params_, "encoder.stage" + std::to_string(i), in,
                          config_.stage_channels(i), 3, 2, 1);
    in = config_.stage_channels(i);
  }
  auto stage_sum = [&](const std::vector<int>& layers) {
    int total = 0;
    for (int s : layers) total += config_.stage_channels(s);
    return total;
  };
  texture_proj_ = Conv2d<T>(params_, "encoder.texture_proj", stage_sum(config_.texture_layers), c, 1);
  structure_proj_ =
      Conv2d<T>(params_, "encoder.structure_proj", stage_sum(config_.structure_layers), c, 1);

  align_texture_ = FeatureAlign<T>(params_, "align.texture", c, config_.hidden());
  align_structure_ = FeatureAlign<T>(params_, "align.structure", c, config_.hidden());

  for (auto [streams, name] : {std::pair{&texture_streams_, "texture"},
                               std::pair{&structure_streams_, "structure"}}) {
    for (int k : config_.branch_kernel_sizes) {
      Stream s;
      s.kernel = k;
      for (int l = 0; l < 3; ++l) {
        s.layers.emplace_back(params_,
                              std::string("branch.") + name + ".k" + std::to_string(k) + ".pconv" +
                                  std::to_string(l),
                              c, c, k);
      }
      streams->push_back(std::move(s));
    }
  }
  const int streams = static_cast<int>(config_.branch_kernel_sizes.size());
  texture_fuse_ = Conv2d<T>(params_, "branch.texture.fuse", streams * c, c, 1);
  structure_fuse_ = Conv2d<T>(params_, "branch.structure.fuse", streams * c, c, 1);
  branch_fuse_ = Conv2d<T>(params_, "fusion.conv", 2 * c, c, 1);
  equalizer_ = FeatureEqualizer<T>(params_, "fusion.equalize", c);

  const int deepest = config_.stage_channels(config_.encoder_depth);
  for (std::size_t b = 0; b < config_.residual_dilations.size(); ++b) {
    const int d = config_.residual_dilations[b];
    const std::string p = "decoder.res" + std::to_string(b);
    residual_.push_back({Conv2d<T>(params_, p + ".conv1", deepest, deepest, 3, 1, d, d),
                         Conv2d<T>(params_, p + ".conv2", deepest, deepest, 3)});
  }
  for (int i = 1; i <= config_.encoder_depth; ++i) {
    // decoder_[i - 1] consumes concat(d, stage i, F_sf) where d already has
    // the channel count of stage i.
    const int in_ch = 2 * config_.stage_channels(i) + c;
    const int out_ch = i == 1 ? config_.base_channels : config_.stage_channels(i - 1);
    decoder_.emplace_back(params_, "decoder.up" + std::to_string(i), in_ch, out_ch, 4, 2, 1);
  }
  output_conv_ = Conv2d<T>(params_, "decoder.output", config_.base_channels, 3, 3);
  texture_rgb_ = Conv2d<T>(params_, "project.texture", c, 3, 1);
  structure_rgb_ = Conv2d<T>(params_, "project.structure", c, 3, 1);
}

template <typename T>
void Generator<T>::check_image(const Tensor<T>& image, int channels, const char* what) const {
  const Shape s = image.shape();
  if (s.c != channels || s.h != config_.image_size || s.w != config_.image_size) {
    throw ShapeError(std::string(what) + ": expected (N, " + std::to_string(channels) + ", " +
                     std::to_string(config_.image_size) + ", " +
                     std::to_string(config_.image_size) + "), got " + s.str());
  }
}

template <typename T>
std::vector<Tensor<T>> Generator<T>::encode(const Tensor<T>& image, const Tensor<T>& mask) const {
  check_image(image, 3, "encode image");
  check_image(mask, 1, "encode mask");
  if (mask.shape().n != image.shape().n) throw ShapeError("encode: batch mismatch");
  validate_binary_mask(mask);
  const auto m = mask.detach();
  Tensor<T> h = concat_channels<T>({mul(image, expand(m, image.shape())), m});
  std::vector<Tensor<T>> stages;
  for (const auto& conv : encoder_) {
    h = leaky_relu(norm_if_large(conv(h)), T(0.2));
    stages.push_back(h);
  }
  return stages;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> Generator<T>::split(const std::vector<Tensor<T>>& stages) const {
  if (static_cast<int>(stages.size()) != config_.encoder_depth) {
    throw std::invalid_argument("split: expected one feature map per encoder stage");
  }
  const int ws = config_.working_size();
  auto gather = [&](const std::vector<int>& layers) {
    std::vector<Tensor<T>> parts;
    for (int s : layers) parts.push_back(bilinear_resize(stages[s - 1], ws, ws));
    return concat_channels(parts);
  };
  return {texture_proj_(gather(config_.texture_layers)),
          structure_proj_(gather(config_.structure_layers))};
}

template <typename T>
Tensor<T> Generator<T>::run_stream(const Stream& s, Tensor<T> x, Tensor<T>& mask) const {
  for (const auto& layer : s.layers) {
    auto r = partial_conv2d(x, mask, layer.weight, layer.bias, 1, (s.kernel - 1) / 2);
    x = leaky_relu(r.output, T(0.2));
    mask = r.mask;
  }
  return x;
}

template <typename T>
BranchOutput<T> Generator<T>::fill_branches(const Tensor<T>& aligned_texture,
                                            const Tensor<T>& aligned_structure,
                                            const Tensor<T>& mask) const {
  require_same_shape(aligned_texture.shape(), aligned_structure.shape(), "fill_branches");
  BranchOutput<T> out;
  auto branch = [&](const std::vector<Stream>& streams, const Tensor<T>& x, const Conv2d<T>& fuse) {
    std::vector<Tensor<T>> outputs;
    for (const auto& s : streams) {
      Tensor<T> m = mask.detach();
      outputs.push_back(run_stream(s, x, m));
      out.stream_masks.push_back(m);
    }
    return fuse(concat_channels(outputs));
  };
  out.texture = branch(texture_streams_, aligned_texture, texture_fuse_);
  out.structure = branch(structure_streams_, aligned_structure, structure_fuse_);
  return out;
}

template <typename T>
Tensor<T> Generator<T>::fuse_and_equalize(const Tensor<T>& texture,
                                          const Tensor<T>& structure) const {
  require_same_shape(texture.shape(), structure.shape(), "fuse_and_equalize");
  return equalizer_(branch_fuse_(concat_channels<T>({texture, structure})));
}

template <typename T>
Tensor<T> Generator<T>::decode(const Tensor<T>& fused, const std::vector<Tensor<T>>& stages) const {
  if (static_cast<int>(stages.size()) != config_.encoder_depth) {
    throw std::invalid_argument("decode: expected one feature map per encoder stage");
  }
  Tensor<T> d = stages.back();
  for (const auto& block : residual_) {
    Tensor<T> h = relu(norm_if_large(block.first(d)));
    d = add(d, norm_if_large(block.second(h)));
  }
  for (int i = config_.encoder_depth; i >= 1; --i) {
    const Tensor<T>& skip = stages[i - 1];
    const Tensor<T> guide = bilinear_resize(fused, skip.shape().h, skip.shape().w);
    d = relu(norm_if_large(decoder_[i - 1](concat_channels<T>({d, skip, guide}))));
  }
  return sigmoid(output_conv_(d));
}

template <typename T>
ForwardOutput<T> Generator<T>::forward(const Tensor<T>& input, const Tensor<T>& mask,
                                       const Tensor<T>& reference) const {
  check_image(reference, 3, "forward reference");
  require_same_shape(input.shape(), reference.shape(), "forward input/reference");
  const auto input_stages = encode(input, mask);
  const auto ref_mask = Tensor<T>::full(mask.shape(), T(1));
  const auto ref_stages = encode(reference, ref_mask);

  const auto [input_texture, input_structure] = split(input_stages);
  const auto [ref_texture, ref_structure] = split(ref_stages);
  const auto aligned_texture = align_texture_(input_texture, ref_texture).output;
  const auto aligned_structure = align_structure_(input_structure, ref_structure).output;

  const int ws = config_.working_size();
  auto branches = fill_branches(aligned_texture, aligned_structure, resize_mask_nearest(mask, ws, ws));
  const auto fused = fuse_and_equalize(branches.texture, branches.structure);
  auto raw = decode(fused, input_stages);
  auto comp = composite(raw, input, mask);
  return {comp, raw, branches.texture, branches.structure};
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> Generator<T>::project_branches(const Tensor<T>& texture,
                                                               const Tensor<T>& structure) const {
  const int s = config_.image_size;
  return {bilinear_resize(texture_rgb_(texture), s, s),
          bilinear_resize(structure_rgb_(structure), s, s)};
}

template <typename T>
Discriminator<T>::Discriminator(int base_channels, std::uint64_t seed) : params_(seed) {
  const int widths[] = {3, base_channels, 2 * base_channels, 4 * base_channels, 1};
  for (int i = 0; i < 4; ++i) {
    layers_.emplace_back(params_, "disc.conv" + std::to_string(i + 1), widths[i], widths[i + 1], 4,
                         2, 1);
  }
}

template <typename T>
Tensor<T> Discriminator<T>::operator()(const Tensor<T>& image) const {
  const Shape s = image.shape();
  if (s.c != 3 || s.h % 16 != 0 || s.w % 16 != 0) {
    throw ShapeError("discriminator: expected RGB with sides divisible by 16, got " + s.str());
  }
  Tensor<T> h = image;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    h = layers_[i](h);
    if (i + 1 < layers_.size()) h = leaky_relu(h, T(0.2));
  }
  return h;
}

#define REFPAINT_INSTANTIATE_NETWORK(T)                                                        \
  template Tensor<T> resize_mask_nearest<T>(const Tensor<T>&, int, int);                       \
  template Tensor<T> composite<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);       \
  template Tensor<T> norm_if_large<T>(const Tensor<T>&);                                       \
  template class Generator<T>;                                                                 \
  template class Discriminator<T>;

REFPAINT_INSTANTIATE_NETWORK(float)
REFPAINT_INSTANTIATE_NETWORK(double)

}  // namespace refpaint
