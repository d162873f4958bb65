#pragma once

// Translation-recovery protocol: reference features are the target features
// translated by an integer (dy, dx); only the offset field of the alignment
// branch is optimized, by plain gradient descent.

#include <cmath>

#include "refpaint/align.hpp"
#include "refpaint/ops.hpp"
#include "test_support.hpp"

namespace refpaint::testing {

struct TranslationOutcome {
  double initial_loss = 0;
  double final_loss = 0;
  double ratio() const { return final_loss / initial_loss; }
};

// Sum of Gaussian blobs kept away from the border so a zero-filled
// translation by up to 3 px is exact.
inline Tensor<double> blob_features(int channels, int size, std::uint64_t seed) {
  Rng rng(seed);
  auto f = Tensor<double>::zeros({1, channels, size, size});
  const double sigma = 3.0;
  for (int c = 0; c < channels; ++c) {
    for (int b = 0; b < 3; ++b) {
      const double cy = rng.uniform(0.35 * size, 0.65 * size);
      const double cx = rng.uniform(0.35 * size, 0.65 * size);
      const double amp = rng.uniform(0.6, 1.2) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
          const double r2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
          f.at(0, c, y, x) += amp * std::exp(-r2 / (2 * sigma * sigma));
        }
    }
  }
  return f;
}

inline TranslationOutcome recover_translation(int dy, int dx, std::uint64_t seed, int steps = 100,
                                              double lr = 0.1) {
  const int channels = 4;
  const int size = 24;
  ParameterSet<double> ps(seed);
  FeatureAlign<double> fam(ps, "fam", channels, 8, 3);
  // Center-tap identity kernel: A(p) = F_r(p + dp_center(p)).
  auto& k = fam.kernel();
  std::fill(k.weight.data().begin(), k.weight.data().end(), 0.0);
  std::fill(k.bias.data().begin(), k.bias.data().end(), 0.0);
  for (int c = 0; c < channels; ++c) k.weight.at(c, c, 1, 1) = 1.0;

  const auto target = blob_features(channels, size, seed);
  // reference(q) = target(q - t), so sampling at p + t recovers target(p).
  const auto reference = shift_read(target, -dy, -dx);
  auto offsets = Tensor<double>::zeros({1, offset_channels(3), size, size}, true);

  auto loss_of = [&] {
    auto r = fam(target, reference, offsets);
    return sum(square(sub(r.aligned, target)));
  };
  TranslationOutcome out;
  for (int i = 0; i < steps; ++i) {
    offsets.clear_grad();
    auto loss = loss_of();
    if (i == 0) out.initial_loss = loss.item();
    loss.backward();
    for (std::size_t j = 0; j < offsets.numel(); ++j) offsets.data()[j] -= lr * offsets.grad()[j];
  }
  NoGradGuard guard;
  out.final_loss = loss_of().item();
  return out;
}

}  // namespace refpaint::testing
