#pragma once

// Dataset loading, the adversarial training loop and checkpoints.
//
// A checkpoint is an archive directory (see archive.hpp) holding
//   generator.<param>, discriminator.<param>        weights
//   adam.<net>.m.<param>, adam.<net>.v.<param>      optimizer moments
// and meta keys step, epoch, rng, adam.<net>.steps and config.<key> for every
// configuration key.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "refpaint/archive.hpp"
#include "refpaint/config.hpp"
#include "refpaint/losses.hpp"
#include "refpaint/network.hpp"
#include "refpaint/optim.hpp"
#include "refpaint/rng.hpp"

namespace refpaint {

struct PairSample {
  Tensor<float> image;      // ground truth, (1, 3, S, S)
  Tensor<float> reference;  // (1, 3, S, S)
};

struct Dataset {
  std::vector<PairSample> pairs;
  std::vector<Tensor<float>> masks;  // (1, 1, H, W), resized to S when they differ
};

/// Every PNG in `dir`, sorted by file name.
std::vector<Tensor<float>> load_masks(const std::filesystem::path& dir);

/// Pairs listed in `manifest` (paths relative to its directory) plus the masks
/// in `mask_dir`.
Dataset load_dataset(const std::filesystem::path& manifest, const std::filesystem::path& mask_dir);

struct StepLog {
  std::int64_t step = 0;  // 1-based optimizer step
  int epoch = 0;
  double total = 0;
  std::array<double, 5> components{};  // reconstruction, perceptual, style, adversarial, branch
  double discriminator = 0;
  double hole_l1 = 0;  // of the composite before this update
};

inline constexpr const char* kLogHeader =
    "# step\tepoch\ttotal\treconstruction\tperceptual\tstyle\tadversarial\tbranch\tdiscriminator\thole_l1";

std::string format_log_line(const StepLog& log);

struct TrainResult {
  std::int64_t steps = 0;  // global step count at exit
  bool halted = false;
  std::string halt_reason;
};

class Trainer {
 public:
  Trainer(TrainConfig config, Dataset data);

  /// Restores weights, moments, RNG state and counters. The checkpoint must
  /// describe the same network and critic.
  void resume(const std::filesystem::path& checkpoint);

  /// Trains until `epochs` (or `max_steps`) is reached. With a non-empty
  /// output_dir, appends to output_dir/train.log and writes
  /// output_dir/checkpoint at every interval and at exit. A non-finite loss
  /// or gradient stops training with the last finite state checkpointed.
  TrainResult run();

  /// One optimizer step of both networks. Throws NonFiniteError, before any
  /// parameter changes, on a non-finite loss or gradient.
  StepLog step();

  void save_checkpoint(const std::filesystem::path& dir) const;

  /// Structure target of a pair, computed once and cached in memory and, with
  /// an output_dir, on disk.
  const Tensor<float>& structure(std::size_t pair);

  std::int64_t global_step() const { return step_; }
  std::int64_t steps_per_epoch() const;
  const TrainConfig& config() const { return config_; }
  const std::vector<StepLog>& history() const { return history_; }
  Generator<float>& generator() { return *generator_; }
  const Generator<float>& generator() const { return *generator_; }
  Discriminator<float>& discriminator() { return *discriminator_; }

 private:
  std::vector<std::size_t> epoch_order(int epoch) const;
  Tensor<float> mask_for_step();
  void rewrite_log_prefix() const;
  void append_log(const StepLog& log) const;

  TrainConfig config_;
  Dataset data_;
  std::vector<Tensor<float>> references_;
  ReferenceSelector selector_;
  std::unique_ptr<Generator<float>> generator_;
  std::unique_ptr<Discriminator<float>> discriminator_;
  std::unique_ptr<FeatureNet<float>> feature_net_;
  std::unique_ptr<Adam<float>> gen_opt_;
  std::unique_ptr<Adam<float>> disc_opt_;
  std::map<std::size_t, Tensor<float>> structure_cache_;
  Rng rng_;
  std::int64_t step_ = 0;
  std::vector<StepLog> history_;
};

/// Configuration snapshot stored in a checkpoint.
TrainConfig checkpoint_config(const Archive& checkpoint);

struct LoadedModel {
  TrainConfig config;
  std::unique_ptr<Generator<float>> generator;
};

/// Generator of a checkpoint, rebuilt from its configuration snapshot.
LoadedModel load_model(const std::filesystem::path& checkpoint);

}  // namespace refpaint
