#include "refpaint/losses.hpp"

#include <cmath>
#include <stdexcept>

#include "refpaint/archive.hpp"
#include "refpaint/ops.hpp"

namespace refpaint {

void LossWeights::validate() const {
  for (double w : {reconstruction, perceptual, style, adversarial, branch}) {
    if (!std::isfinite(w) || w < 0) {
      throw std::invalid_argument("loss weights must be finite and non-negative");
    }
  }
}

template <typename T>
FeatureNet<T>::FeatureNet(std::uint64_t seed, int width) : params_(seed) {
  const int widths[] = {3, width, 2 * width, 4 * width, 4 * width, 4 * width};
  for (int i = 0; i < kStages; ++i) {
    stages_.emplace_back(params_, "featnet.stage" + std::to_string(i + 1), widths[i], widths[i + 1],
                         3, i == 0 ? 1 : 2, 1, 1, Init::kHeNormal);
  }
  params_.set_requires_grad(false);
}

template <typename T>
std::vector<Tensor<T>> FeatureNet<T>::operator()(const Tensor<T>& image) const {
  std::vector<Tensor<T>> out;
  Tensor<T> h = image;
  for (const auto& s : stages_) {
    h = relu(s(h));
    out.push_back(h);
  }
  return out;
}

template <typename T>
void FeatureNet<T>::import_weights(const std::filesystem::path& archive_dir) {
  load_parameters(load_archive(archive_dir), params_);
}

namespace {

template <typename T>
Tensor<T> masked_mean_abs(const Tensor<T>& diff, const Tensor<T>& weight, double count) {
  return scale(sum(mul(diff, weight)), T(1.0 / count));
}

template <typename T>
Tensor<T> mean_l1(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "l1");
  return mean(abs(sub(a, b)));
}

template <typename T>
void check_mask(const Tensor<T>& image, const Tensor<T>& mask, const char* what) {
  const Shape s = image.shape(), m = mask.shape();
  if (m.c != 1 || m.n != s.n || m.h != s.h || m.w != s.w) {
    throw ShapeError(std::string(what) + ": mask " + m.str() + " does not match image " + s.str());
  }
}

}  // namespace

template <typename T>
Tensor<T> reconstruction_loss(const Tensor<T>& output, const Tensor<T>& target, const Tensor<T>& mask) {
  require_same_shape(output.shape(), target.shape(), "reconstruction_loss");
  check_mask(output, mask, "reconstruction_loss");
  const Shape s = output.shape();
  const auto valid = expand(mask.detach(), s);
  const auto holes = add_scalar(scale(valid, T(-1)), T(1));
  double n_valid = 0;
  for (T v : valid.data()) n_valid += static_cast<double>(v);
  const double n_holes = static_cast<double>(s.numel()) - n_valid;
  const auto diff = abs(sub(output, target));
  Tensor<T> loss = Tensor<T>::scalar(T(0));
  if (n_valid > 0) loss = add(loss, masked_mean_abs(diff, valid, n_valid));
  if (n_holes > 0) loss = add(loss, scale(masked_mean_abs(diff, holes, n_holes), T(kHoleWeight)));
  return loss;
}

template <typename T>
Tensor<T> hole_l1(const Tensor<T>& output, const Tensor<T>& target, const Tensor<T>& mask) {
  require_same_shape(output.shape(), target.shape(), "hole_l1");
  check_mask(output, mask, "hole_l1");
  const auto holes = add_scalar(scale(expand(mask.detach(), output.shape()), T(-1)), T(1));
  double n = 0;
  for (T v : holes.data()) n += static_cast<double>(v);
  if (n == 0) return Tensor<T>::scalar(T(0));
  return masked_mean_abs(abs(sub(output, target)), holes, n);
}

template <typename T>
Tensor<T> perceptual_loss(const Tensor<T>& output, const Tensor<T>& target, const FeatureNet<T>& net) {
  require_same_shape(output.shape(), target.shape(), "perceptual_loss");
  const auto fo = net(output);
  std::vector<Tensor<T>> ft;
  {
    NoGradGuard guard;
    ft = net(target.detach());
  }
  Tensor<T> loss = Tensor<T>::scalar(T(0));
  for (std::size_t i = 0; i < fo.size(); ++i) loss = add(loss, mean_l1(fo[i], ft[i]));
  return loss;
}

template <typename T>
Tensor<T> style_loss(const Tensor<T>& output, const Tensor<T>& target, const FeatureNet<T>& net) {
  require_same_shape(output.shape(), target.shape(), "style_loss");
  const auto fo = net(output);
  std::vector<Tensor<T>> gt;
  {
    NoGradGuard guard;
    for (const auto& f : net(target.detach())) gt.push_back(gram(f));
  }
  Tensor<T> loss = Tensor<T>::scalar(T(0));
  for (std::size_t i = 0; i < fo.size(); ++i) loss = add(loss, mean_l1(gram(fo[i]), gt[i]));
  return loss;
}

template <typename T>
Tensor<T> ra_lsgan_loss(const Tensor<T>& real_scores, const Tensor<T>& fake_scores,
                        AdversarialSide side) {
  const auto& pos = side == AdversarialSide::kDiscriminator ? real_scores : fake_scores;
  const auto& neg = side == AdversarialSide::kDiscriminator ? fake_scores : real_scores;
  const auto pos_rel = sub(pos, expand(mean(neg), pos.shape()));
  const auto neg_rel = sub(neg, expand(mean(pos), neg.shape()));
  return add(mean(square(add_scalar(pos_rel, T(-1)))), mean(square(add_scalar(neg_rel, T(1)))));
}

template <typename T>
Tensor<T> branch_supervision_loss(const Tensor<T>& texture_rgb, const Tensor<T>& structure_rgb,
                                  const Tensor<T>& gt_image, const Tensor<T>& gt_structure) {
  return add(mean_l1(texture_rgb, gt_image.detach()), mean_l1(structure_rgb, gt_structure.detach()));
}

template <typename T>
TotalLoss<T> total_loss(const LossTerms<T>& terms, const LossWeights& weights) {
  weights.validate();
  TotalLoss<T> out;
  out.total = Tensor<T>::scalar(T(0));
  const std::pair<const Tensor<T>*, double> parts[] = {
      {&terms.reconstruction, weights.reconstruction},
      {&terms.perceptual, weights.perceptual},
      {&terms.style, weights.style},
      {&terms.adversarial, weights.adversarial},
      {&terms.branch, weights.branch}};
  for (const auto& [t, w] : parts) {
    if (!t->defined()) {
      out.components.push_back(0.0);
      continue;
    }
    if (t->numel() != 1) throw ShapeError("total_loss: loss terms must be scalars");
    out.components.push_back(static_cast<double>(t->item()));
    if (w != 0.0) out.total = add(out.total, scale(*t, static_cast<T>(w)));
  }
  return out;
}

#define REFPAINT_INSTANTIATE_LOSSES(T)                                                            \
  template class FeatureNet<T>;                                                                   \
  template Tensor<T> reconstruction_loss<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&); \
  template Tensor<T> hole_l1<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);            \
  template Tensor<T> perceptual_loss<T>(const Tensor<T>&, const Tensor<T>&, const FeatureNet<T>&); \
  template Tensor<T> style_loss<T>(const Tensor<T>&, const Tensor<T>&, const FeatureNet<T>&);      \
  template Tensor<T> ra_lsgan_loss<T>(const Tensor<T>&, const Tensor<T>&, AdversarialSide);       \
  template Tensor<T> branch_supervision_loss<T>(const Tensor<T>&, const Tensor<T>&,               \
                                                const Tensor<T>&, const Tensor<T>&);              \
  template TotalLoss<T> total_loss<T>(const LossTerms<T>&, const LossWeights&);

REFPAINT_INSTANTIATE_LOSSES(float)
REFPAINT_INSTANTIATE_LOSSES(double)

}  // namespace refpaint
