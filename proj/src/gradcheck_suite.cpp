// Registered finite-difference checks for the command-line `gradcheck`.

#include <cmath>
#include <functional>
#include <map>
#include <stdexcept>

#include "refpaint/align.hpp"
#include "refpaint/gradcheck.hpp"
#include "refpaint/losses.hpp"
#include "refpaint/network.hpp"
#include "refpaint/ops.hpp"
#include "refpaint/rng.hpp"

namespace refpaint {

namespace {

using Groups = std::vector<std::pair<std::string, Tensor<double>>>;

constexpr double kOperatorThreshold = 1e-5;
constexpr double kEndToEndThreshold = 1e-4;

Tensor<double> random(Shape s, std::uint64_t seed, double lo = -1.0, double hi = 1.0, bool grad = false) {
  Rng rng(seed);
  std::vector<double> d(s.numel());
  for (double& v : d) v = rng.uniform(lo, hi);
  return Tensor<double>(s, std::move(d), grad);
}

// Offsets whose sampling points stay at least 0.05 px off the integer lattice.
Tensor<double> fractional(Shape s, std::uint64_t seed, double span) {
  auto t = random(s, seed, -span, span, true);
  for (double& v : t.data()) {
    const double frac = v - std::floor(v);
    if (frac < 0.05) v += 0.1;
    if (frac > 0.95) v -= 0.1;
  }
  return t;
}

Tensor<double> half_hole_mask(int size) {
  auto m = Tensor<double>::full({1, 1, size, size}, 1.0);
  for (int y = 0; y < size; ++y)
    for (int x = size / 2; x < size; ++x) m.at(0, 0, y, x) = 0.0;
  return m;
}

ComponentReport report(const std::string& name, double threshold, std::vector<GradCheckStats> groups) {
  ComponentReport r{name, threshold, std::move(groups), true};
  for (const auto& g : r.groups) r.passed = r.passed && g.checked > 0 && g.max_rel_error < threshold;
  return r;
}

ComponentReport conv2d_check(std::uint64_t seed) {
  auto x = random({2, 3, 6, 5}, seed + 1, -1, 1, true);
  auto w = random({4, 3, 3, 3}, seed + 2, -1, 1, true);
  auto b = random({1, 4, 1, 1}, seed + 3, -1, 1, true);
  auto probe = random({2, 4, 3, 3}, seed + 4);
  auto loss = [&] { return sum(mul(conv2d(x, w, b, 2, 1, 1), probe)); };
  return report("conv2d", kOperatorThreshold, check_gradients(loss, {{"input", x}, {"weight", w}, {"bias", b}}));
}

ComponentReport bilinear_check(std::uint64_t seed) {
  auto f = random({2, 3, 5, 6}, seed + 1, -1, 1, true);
  auto flow = fractional({2, 2, 5, 6}, seed + 2, 1.7);
  auto probe = random({2, 3, 5, 6}, seed + 3);
  auto loss = [&] { return sum(mul(warp(f, flow), probe)); };
  return report("bilinear", kOperatorThreshold, check_gradients(loss, {{"feature", f}, {"coordinates", flow}}));
}

ComponentReport deformable_check(std::uint64_t seed, bool zero_offsets) {
  auto x = random({1, 2, 5, 5}, seed + 1, -1, 1, true);
  DeformableKernel<double> k{random({3, 2, 3, 3}, seed + 2, -1, 1, true), random({1, 3, 1, 1}, seed + 3, -1, 1, true)};
  const Shape os{1, offset_channels(3), 5, 5};
  auto off = zero_offsets ? Tensor<double>::zeros(os, true) : fractional(os, seed + 4, 1.5);
  auto probe = random({1, 3, 5, 5}, seed + 5);
  auto loss = [&] { return sum(mul(deformable_conv2d(x, k, off), probe)); };
  Groups groups{{"input", x}, {"weight", k.weight}, {"bias", k.bias}};
  // At zero offsets every tap sits on the lattice, where bilinear sampling
  // has a kink, so the offset group is only checked off-lattice.
  if (!zero_offsets) groups.emplace_back("offsets", off);
  return report(zero_offsets ? "deformable_conv_zero_offset" : "deformable_conv", kOperatorThreshold,
                check_gradients(loss, groups));
}

ComponentReport partial_conv_check(std::uint64_t seed) {
  auto x = random({1, 3, 6, 6}, seed + 1, -1, 1, true);
  auto w = random({2, 3, 3, 3}, seed + 2, -1, 1, true);
  auto b = random({1, 2, 1, 1}, seed + 3, -1, 1, true);
  Rng rng(seed + 4);
  auto m = Tensor<double>::zeros({1, 1, 6, 6});
  for (double& v : m.data()) v = rng.uniform() < 0.6 ? 1.0 : 0.0;
  auto probe = random({1, 2, 3, 3}, seed + 5);
  auto loss = [&] { return sum(mul(partial_conv2d(x, m, w, b, 2, 1).output, probe)); };
  return report("partial_conv", kOperatorThreshold, check_gradients(loss, {{"input", x}, {"weight", w}, {"bias", b}}));
}

ComponentReport fam_check(std::uint64_t seed) {
  ParameterSet<double> ps(seed + 20);
  FeatureAlign<double> fam(ps, "fam", 4, 6, 3);
  // Non-zero head so gradients reach every estimator layer; the head bias
  // keeps sampling positions off the lattice. O(1) hidden biases keep the
  // LeakyReLU pre-activations away from zero.
  Rng bias_rng(seed + 77);
  for (const auto& [name, t] : ps.with_prefix("fam.offsets.block")) {
    if (!name.ends_with(".bias")) continue;
    Tensor<double> b = t;
    for (double& v : b.data()) v = bias_rng.uniform(-0.5, 0.5);
  }
  Tensor<double> head = fam.estimator().head().weight;
  for (std::size_t i = 0; i < head.numel(); ++i) head.data()[i] = 0.5 * std::cos(3.0 * i);
  Tensor<double> head_bias = fam.estimator().head().bias;
  for (std::size_t i = 0; i < head_bias.numel(); ++i) head_bias.data()[i] = 0.4 + 0.02 * (i % 5);
  auto fi = random({1, 4, 6, 6}, seed + 25, -1, 1, true);
  auto fr = random({1, 4, 6, 6}, seed + 26, -1, 1, true);
  auto probe = random({1, 4, 6, 6}, seed + 27);
  auto loss = [&] { return sum(mul(fam(fi, fr).output, probe)); };
  Groups groups{{"input_features", fi}, {"reference_features", fr}};
  for (const auto& [name, t] : ps.all()) groups.emplace_back(name, t);
  return report("fam", kOperatorThreshold,
                check_gradients(loss, groups, {.step = 3e-5, .group_floor = 1e-2, .max_entries = 12, .seed = 5}));
}

ComponentReport equalize_check(std::uint64_t seed) {
  auto f = random({2, 5, 4, 4}, seed + 1, -1, 1, true);
  auto w = random({5, 5, 1, 1}, seed + 2, -1, 1, true);
  auto b = random({1, 5, 1, 1}, seed + 3, -1, 1, true);
  auto probe = random({2, 5, 4, 4}, seed + 4);
  auto loss = [&] { return sum(mul(feature_equalize(f, w, b), probe)); };
  return report("equalize", kOperatorThreshold, check_gradients(loss, {{"feature", f}, {"fc.weight", w}, {"fc.bias", b}}));
}

struct LossFixture {
  FeatureNet<double> net;
  Tensor<double> target, out, mask;
  explicit LossFixture(std::uint64_t seed)
      : net(seed + 11, 2),
        target(random({1, 3, 16, 16}, seed + 12, 0, 1)),
        out(random({1, 3, 16, 16}, seed + 13, 0, 1, true)),
        mask(half_hole_mask(16)) {}
};

const GradCheckOptions kLossOptions{.max_entries = 40, .seed = 1};

ComponentReport loss_check(const std::string& which, std::uint64_t seed) {
  LossFixture fx(seed);
  if (which == "loss_reconstruction") {
    return report(which, kOperatorThreshold,
                  check_gradients([&] { return reconstruction_loss(fx.out, fx.target, fx.mask); },
                                  {{"output", fx.out}}, kLossOptions));
  }
  if (which == "loss_perceptual") {
    return report(which, kOperatorThreshold,
                  check_gradients([&] { return perceptual_loss(fx.out, fx.target, fx.net); }, {{"output", fx.out}},
                                  kLossOptions));
  }
  if (which == "loss_style") {
    return report(which, kOperatorThreshold,
                  check_gradients([&] { return style_loss(fx.out, fx.target, fx.net); }, {{"output", fx.out}},
                                  kLossOptions));
  }
  if (which == "loss_adversarial") {
    auto r = random({2, 1, 2, 2}, seed + 14, -1, 1, true);
    auto f = random({2, 1, 2, 2}, seed + 15, -1, 1, true);
    std::vector<GradCheckStats> all;
    for (auto side : {AdversarialSide::kGenerator, AdversarialSide::kDiscriminator}) {
      const std::string tag = side == AdversarialSide::kGenerator ? "generator." : "discriminator.";
      for (auto st : check_gradients([&] { return ra_lsgan_loss(r, f, side); }, {{"real", r}, {"fake", f}})) {
        st.group = tag + st.group;
        all.push_back(st);
      }
    }
    return report(which, kOperatorThreshold, all);
  }
  auto st = random({1, 3, 16, 16}, seed + 16, 0, 1, true);
  return report(which, kOperatorThreshold,
                check_gradients([&] { return branch_supervision_loss(fx.out, st, fx.target, fx.target); },
                                {{"texture", fx.out}, {"structure", st}}, kLossOptions));
}

ComponentReport end_to_end_check(std::uint64_t seed) {
  // A 16x16 image supports at most four stride-2 stages at the working
  // resolution of image / 8.
  NetworkConfig c;
  c.image_size = 16;
  c.base_channels = 16;
  c.encoder_depth = 4;
  c.texture_layers = {1, 2};
  c.structure_layers = {3, 4};
  Generator<double> g(c, seed + 21);
  Discriminator<double> d(4, seed + 22);
  FeatureNet<double> net(seed + 23, 2);
  auto input = random({1, 3, 16, 16}, seed + 24, 0, 1);
  auto reference = random({1, 3, 16, 16}, seed + 25, 0, 1);
  auto structure = random({1, 3, 16, 16}, seed + 26, 0, 1);
  auto mask = half_hole_mask(16);
  Tensor<double> real_scores;
  {
    NoGradGuard guard;
    real_scores = d(input);
  }
  auto loss = [&] {
    auto out = g.forward(input, mask, reference);
    auto [pt, ps] = g.project_branches(out.texture, out.structure);
    LossTerms<double> t{reconstruction_loss(out.raw, input, mask), perceptual_loss(out.composite, input, net),
                        style_loss(out.composite, input, net),
                        ra_lsgan_loss(real_scores, d(out.composite), AdversarialSide::kGenerator),
                        branch_supervision_loss(pt, ps, input, structure)};
    return total_loss(t, LossWeights{}).total;
  };
  Groups groups;
  for (const auto& [name, t] : g.parameters().all()) groups.emplace_back(name, t);
  return report("end_to_end", kEndToEndThreshold,
                {check_random_scalars(loss, groups, 20, "generator", {.step = 1e-4, .seed = 7})});
}

const std::map<std::string, std::function<ComponentReport(std::uint64_t)>>& registry() {
  static const std::map<std::string, std::function<ComponentReport(std::uint64_t)>> r{
      {"conv2d", conv2d_check},
      {"bilinear", bilinear_check},
      {"deformable_conv", [](std::uint64_t s) { return deformable_check(s, false); }},
      {"deformable_conv_zero_offset", [](std::uint64_t s) { return deformable_check(s, true); }},
      {"partial_conv", partial_conv_check},
      {"fam", fam_check},
      {"equalize", equalize_check},
      {"loss_reconstruction", [](std::uint64_t s) { return loss_check("loss_reconstruction", s); }},
      {"loss_perceptual", [](std::uint64_t s) { return loss_check("loss_perceptual", s); }},
      {"loss_style", [](std::uint64_t s) { return loss_check("loss_style", s); }},
      {"loss_adversarial", [](std::uint64_t s) { return loss_check("loss_adversarial", s); }},
      {"loss_branch", [](std::uint64_t s) { return loss_check("loss_branch", s); }},
      {"end_to_end", end_to_end_check},
  };
  return r;
}

}  // namespace

std::vector<std::string> gradcheck_components() {
  std::vector<std::string> names;
  for (const auto& [name, fn] : registry()) names.push_back(name);
  return names;
}

ComponentReport run_gradcheck(const std::string& component, std::uint64_t seed) {
  const auto it = registry().find(component);
  if (it == registry().end()) throw std::invalid_argument("unknown gradcheck component '" + component + "'");
  return it->second(seed);
}

}  // namespace refpaint
