// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
// failure. Run a subset with `acceptance 3 7`.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>

#include "alignment_protocol.hpp"
#include "refpaint/align.hpp"
#include "refpaint/data.hpp"
#include "refpaint/evaluation.hpp"
#include "refpaint/gradcheck.hpp"
#include "refpaint/losses.hpp"
#include "refpaint/metrics.hpp"
#include "refpaint/ops.hpp"
#include "refpaint/rtv.hpp"
#include "refpaint/sift.hpp"
#include "refpaint/training.hpp"
#include "rtv_fixtures.hpp"
#include "scene_fixtures.hpp"
#include "test_support.hpp"

using namespace refpaint;
using namespace refpaint::testing;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

fs::path scratch(const std::string& name) {
  fs::path p = fs::current_path() / "scratch_acceptance" / name;
  fs::remove_all(p);
  fs::create_directories(p.parent_path());
  return p;
}

// Deformable conv with one integer offset for every tap equals a standard
// conv of the input read at (y + dy, x + dx) on a zero-padded canvas.
Tensor<double> shifted_conv_oracle(const Tensor<double>& x, const DeformableKernel<double>& k, int dy, int dx) {
  const Shape s = x.shape();
  const int pad = 6;
  auto big = Tensor<double>::zeros({1, s.c, s.h + 2 * pad, s.w + 2 * pad});
  for (int c = 0; c < s.c; ++c)
    for (int i = 0; i < s.h; ++i)
      for (int j = 0; j < s.w; ++j) big.at(0, c, i + pad, j + pad) = x.at(0, c, i, j);
  auto conv_big = naive_conv2d(big, k.weight, &k.bias, 1, 1, 1);
  auto out = Tensor<double>::zeros({1, k.weight.shape().n, s.h, s.w});
  for (int o = 0; o < out.shape().c; ++o)
    for (int i = 0; i < s.h; ++i)
      for (int j = 0; j < s.w; ++j) out.at(0, o, i, j) = conv_big.at(0, o, i + pad + dy, j + pad + dx);
  return out;
}

Outcome operator_oracles() {
  const auto t0 = Clock::now();
  double worst_zero = 0, worst_int = 0, worst_pconv = 0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    Rng rng(seed);
    const int cin = 1 + static_cast<int>(rng.below(3)), cout = 1 + static_cast<int>(rng.below(3));
    auto x = random_tensor<double>({1, cin, 8, 8}, 1000 + seed);
    DeformableKernel<double> k{random_tensor<double>({cout, cin, 3, 3}, 2000 + seed),
                               random_tensor<double>({1, cout, 1, 1}, 3000 + seed)};
    auto zero = Tensor<double>::zeros({1, offset_channels(3), 8, 8});
    worst_zero = std::max(worst_zero, max_abs_diff(deformable_conv2d(x, k, zero), naive_conv2d(x, k.weight, &k.bias, 1, 1, 1)));

    const int dy = static_cast<int>(rng.below(7)) - 3, dx = static_cast<int>(rng.below(7)) - 3;
    auto off = Tensor<double>::zeros({1, offset_channels(3), 8, 8});
    for (int t = 0; t < 9; ++t)
      for (int p = 0; p < 64; ++p) {
        off.data()[(2 * t) * 64 + p] = dy;
        off.data()[(2 * t + 1) * 64 + p] = dx;
      }
    worst_int = std::max(worst_int, max_abs_diff(deformable_conv2d(x, k, off), shifted_conv_oracle(x, k, dy, dx)));

    auto ones = Tensor<double>::full({1, 1, 8, 8}, 1.0);
    const auto pc = partial_conv2d(x, ones, k.weight, k.bias, 1, 1);
    worst_pconv = std::max(worst_pconv, max_abs_diff(pc.output, naive_conv2d(x, k.weight, &k.bias, 1, 1, 1)));
  }
  const double secs = seconds_since(t0);
  const bool pass = worst_zero <= 1e-6 && worst_int <= 1e-6 && worst_pconv <= 1e-6 && secs < 30;
  return {pass, fmt("200 seeds: zero-offset %.1e, integer-offset %.1e, full-mask pconv %.1e (<= 1e-6); %.1f s (< 30 s)",
                    worst_zero, worst_int, worst_pconv, secs)};
}

Outcome gradient_suite() {
  const auto t0 = Clock::now();
  bool all = true;
  std::string worst_name;
  double worst_ratio = 0;
  std::vector<std::string> failed;
  for (const auto& name : gradcheck_components()) {
    const auto r = run_gradcheck(name, 0);
    all = all && r.passed;
    if (!r.passed) failed.push_back(name);
    for (const auto& g : r.groups) {
      if (g.max_rel_error / r.threshold > worst_ratio) {
        worst_ratio = g.max_rel_error / r.threshold;
        worst_name = name + "/" + g.group + fmt(" %.2e (threshold %.0e)", g.max_rel_error, r.threshold);
      }
    }
  }
  const double secs = seconds_since(t0);
  std::string detail = fmt("%zu components, worst ", gradcheck_components().size()) + worst_name +
                       fmt("; %.1f s (< 300 s)", secs);
  for (const auto& f : failed) detail += "; FAILED " + f;
  return {all && secs < 300, detail};
}

Outcome translation_recovery() {
  int ok = 0;
  double worst = 0;
  std::string cases;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(500 + seed);
    int dy = 0, dx = 0;
    while (dy == 0 && dx == 0) {
      dy = static_cast<int>(rng.below(7)) - 3;
      dx = static_cast<int>(rng.below(7)) - 3;
    }
    const auto r = recover_translation(dy, dx, seed);
    worst = std::max(worst, r.ratio());
    ok += r.ratio() <= 0.2;
    cases += fmt(" (%d,%d)", dy, dx);
  }
  return {ok == 10, fmt("%d/10 seeds reach <= 20%% of the zero-offset loss in 100 steps, worst ratio %.3f; shifts", ok,
                        worst) + cases};
}

TrainConfig toy_config() {
  TrainConfig c;  // defaults are the toy preset: 64 px, 16 base channels
  c.output_dir.clear();
  c.seed = 1;
  return c;
}

double hole_error(const Generator<float>& g, const Tensor<float>& image, const Tensor<float>& mask,
                  const Tensor<float>& reference) {
  NoGradGuard guard;
  return hole_l1(g.forward(image, mask, reference).composite, image, mask).item();
}

Outcome overfit_smoke() {
  const auto t0 = Clock::now();
  const auto scene = synthetic_scene(80, 80, 42);
  const auto image = crop(scene, 8, 8, 64, 64);
  const auto reference = crop(scene, 10, 5, 64, 64);
  const auto mask = generate_mask(64, 0.2, 0.3, 42);
  TrainConfig cfg = toy_config();
  cfg.epochs = 200;
  Trainer t(cfg, Dataset{{{image, reference}}, {mask}});
  const double before = hole_error(t.generator(), image, mask, reference);
  const auto r = t.run();
  const double after = hole_error(t.generator(), image, mask, reference);
  const double secs = seconds_since(t0);
  const bool pass = !r.halted && r.steps == 200 && after <= 0.5 * before && secs < 300;
  return {pass, fmt("hole L1 %.4f -> %.4f after %lld steps (ratio %.3f, need <= 0.5); %.0f s (< 300 s)", before, after,
                    static_cast<long long>(r.steps), after / before, secs)};
}

Outcome reference_ordering() {
  const auto t0 = Clock::now();
  Dataset data;
  std::vector<Tensor<float>> eval_masks;
  for (std::uint64_t i = 0; i < 5; ++i) {
    const auto scene = synthetic_scene(80, 80, 60 + i);
    const int dy = static_cast<int>(i % 3) - 1, dx = 2 - static_cast<int>(i % 5);
    data.pairs.push_back({crop(scene, 8, 8, 64, 64), crop(scene, 8 + dy, 8 + dx, 64, 64)});
    data.masks.push_back(generate_mask(64, 0.4, 0.5, 70 + i));
    eval_masks.push_back(data.masks.back());
  }
  std::map<ReferenceMode, double> score;
  for (auto mode : {ReferenceMode::kReal, ReferenceMode::kShuffled, ReferenceMode::kBlack}) {
    TrainConfig cfg = toy_config();
    cfg.reference_mode = mode;
    cfg.epochs = 40;  // 200 steps over 5 pairs
    Trainer t(cfg, data);
    t.run();
    std::vector<Tensor<float>> refs;
    for (const auto& p : data.pairs) refs.push_back(p.reference);
    const ReferenceSelector selector(mode, data.pairs.size(), cfg.seed);
    double total = 0;
    for (std::size_t i = 0; i < data.pairs.size(); ++i) {
      total += hole_error(t.generator(), data.pairs[i].image, eval_masks[i], selector.reference(i, refs));
    }
    score[mode] = total / data.pairs.size();
  }
  const double real = score[ReferenceMode::kReal], shuffled = score[ReferenceMode::kShuffled],
               black = score[ReferenceMode::kBlack];
  return {real <= shuffled && real <= black,
          fmt("hole L1 real %.4f, shuffled %.4f, black %.4f (need real <= both); %.0f s", real, shuffled, black,
              seconds_since(t0))};
}

Outcome rtv_criterion() {
  const auto c = Tensor<float>::full({1, 3, 32, 32}, 0.37f);
  const auto cs = rtv_smooth(c);
  bool fixed = true;
  for (std::size_t i = 0; i < c.numel(); ++i) fixed = fixed && cs.data()[i] == c.data()[i];
  const auto img = textured_step();
  RtvParams zero;
  zero.lambda = 0.0;
  const auto id = rtv_smooth(img, zero);
  bool identity = true;
  for (std::size_t i = 0; i < img.numel(); ++i) identity = identity && id.data()[i] == img.data()[i];
  const auto out = rtv_smooth(img);
  const double e_in = band_energy(img, 16), e_out = band_energy(out, 16);
  const double c_in = edge_contrast(img), c_out = edge_contrast(out);
  const double removed = 1.0 - e_out / e_in, kept = c_out / c_in;
  return {fixed && identity && removed >= 0.9 && kept >= 0.5,
          fmt("constant fixed point %s, lambda=0 identity %s, texture energy removed %.1f%% (>= 90%%), edge contrast "
              "kept %.1f%% (>= 50%%)",
              fixed ? "exact" : "broken", identity ? "exact" : "broken", 100 * removed, 100 * kept)};
}

Outcome metrics_criterion() {
  double worst_psnr = 0, worst_ssim = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto a = random_tensor<double>({1, 3, 16, 16}, 900 + seed, 0, 1);
    auto b = random_tensor<double>({1, 3, 16, 16}, 950 + seed, 0, 1);
    double se = 0;
    for (std::size_t i = 0; i < a.numel(); ++i) se += (a.data()[i] - b.data()[i]) * (a.data()[i] - b.data()[i]);
    worst_psnr = std::max(worst_psnr, std::abs(psnr(a, b) - 10 * std::log10(a.numel() / se)));
    // Per-window oracle with an explicit 2-D Gaussian.
    double g[11][11], gt = 0;
    for (int i = 0; i < 11; ++i)
      for (int j = 0; j < 11; ++j) gt += g[i][j] = std::exp(-((i - 5.0) * (i - 5.0) + (j - 5.0) * (j - 5.0)) / 4.5);
    double acc = 0;
    int n = 0;
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y + 11 <= 16; ++y)
        for (int x = 0; x + 11 <= 16; ++x) {
          double ma = 0, mb = 0, va = 0, vb = 0, cov = 0;
          for (int i = 0; i < 11; ++i)
            for (int j = 0; j < 11; ++j) {
              ma += g[i][j] / gt * a.at(0, c, y + i, x + j);
              mb += g[i][j] / gt * b.at(0, c, y + i, x + j);
            }
          for (int i = 0; i < 11; ++i)
            for (int j = 0; j < 11; ++j) {
              const double da = a.at(0, c, y + i, x + j) - ma, db = b.at(0, c, y + i, x + j) - mb;
              va += g[i][j] / gt * da * da;
              vb += g[i][j] / gt * db * db;
              cov += g[i][j] / gt * da * db;
            }
          acc += (2 * ma * mb + 1e-4) * (2 * cov + 9e-4) / ((ma * ma + mb * mb + 1e-4) * (va + vb + 9e-4));
          ++n;
        }
    worst_ssim = std::max(worst_ssim, std::abs(ssim(a, b) - acc / n));
  }
  const double hand = psnr(Tensor<double>::zeros({1, 3, 8, 8}), Tensor<double>::full({1, 3, 8, 8}, 10.0 / 255.0));
  return {worst_psnr <= 1e-8 && worst_ssim <= 1e-8 && std::abs(hand - 28.13) <= 0.01,
          fmt("oracle gaps psnr %.1e, ssim %.1e (<= 1e-8); constant 0 vs 10/255 gives %.4f dB (28.13 +- 0.01)",
              worst_psnr, worst_ssim, hand)};
}

Outcome pair_mining() {
  int ok = 0, rejected = 0;
  for (std::uint64_t trial = 0; trial < 50; ++trial) {
    Rng rng(7000 + trial);
    const int dy = static_cast<int>(rng.below(41)) - 20, dx = static_cast<int>(rng.below(41)) - 20;
    const auto scene = synthetic_scene(200, 200, 8000 + trial);
    // Content at p in A sits at p + (dy, dx) in B.
    const auto a = crop(scene, 30 + dy, 30 + dx, 140, 140);
    const auto b = crop(scene, 30, 30, 140, 140);
    MiningOptions opt;
    opt.crop = 64;
    opt.min_matches = 8;
    opt.crops_per_image = 1;
    opt.seed = trial;
    const auto res = mine_pairs(a, b, opt);
    if (res.pairs.empty()) {
      ++rejected;
      continue;
    }
    const auto& p = res.pairs[0];
    const int ey = std::clamp(p.input_y + dy, 0, 140 - 64), ex = std::clamp(p.input_x + dx, 0, 140 - 64);
    ok += std::abs(p.reference_y - ey) <= 2 && std::abs(p.reference_x - ex) <= 2;
  }
  return {ok >= 45, fmt("%d/50 trials within 2 px of the true offset (need >= 45), %d rejected", ok, rejected)};
}

Outcome bucketing() {
  // 20 x 20 masks: every listed ratio is a whole number of pixels.
  const std::vector<std::pair<double, std::optional<int>>> expected{
      {0.10, 0}, {0.15, 0}, {0.20, 1}, {0.25, 1}, {0.30, 2}, {0.35, 2}, {0.40, 3},
      {0.45, 3}, {0.50, 4}, {0.55, 4}, {0.59, 4}, {0.60, std::nullopt}};
  int ok = 0;
  for (const auto& [ratio, bucket] : expected) {
    const auto holes = static_cast<std::size_t>(std::lround(ratio * 400));
    auto m = Tensor<float>::full({1, 1, 20, 20}, 1.0f);
    Rng rng(holes);
    std::vector<std::size_t> idx(400);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = 399; i > 0; --i) std::swap(idx[i], idx[rng.below(i + 1)]);
    for (std::size_t i = 0; i < holes; ++i) m.data()[idx[i]] = 0.0f;
    const auto hc = count_holes(m);
    ok += hc.holes == holes && hc.ratio() == static_cast<double>(holes) / 400.0 && classify_bucket(m) == bucket;
  }
  return {ok == static_cast<int>(expected.size()),
          fmt("%d/%zu ratios in {0.10, 0.15, ..., 0.55, 0.59, 0.60} exact and in the expected bucket", ok, expected.size())};
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome persistence() {
  Dataset data;
  for (std::uint64_t i = 0; i < 3; ++i) {
    const auto scene = synthetic_scene(72, 72, 300 + i);
    data.pairs.push_back({crop(scene, 4, 4, 64, 64), crop(scene, 6, 2, 64, 64)});
  }
  data.masks = {generate_mask(64, 0.2, 0.3, 1), generate_mask(64, 0.3, 0.4, 2)};
  const fs::path full = scratch("full"), split = scratch("split");
  TrainConfig cfg = toy_config();
  cfg.epochs = 2;
  cfg.output_dir = full.string();
  Trainer a(cfg, data);
  a.run();

  TrainConfig first = cfg;
  first.output_dir = split.string();
  first.max_steps = 4;
  Trainer b(first, data);
  b.run();
  // Bit-exact reload: every tensor and meta value of the saved archive.
  Trainer reload(first, data);
  reload.resume(split / "checkpoint");
  reload.save_checkpoint(split / "resaved");
  const Archive x = load_archive(split / "checkpoint"), y = load_archive(split / "resaved");
  bool exact = x.meta == y.meta && x.tensors.size() == y.tensors.size();
  for (const auto& [name, t] : x.tensors) exact = exact && y.tensors.count(name) && y.tensors.at(name).data == t.data;
  for (const auto& [name, t] : b.generator().parameters().all()) {
    const auto u = reload.generator().parameters().get(name);
    for (std::size_t i = 0; i < t.numel(); ++i) exact = exact && t.data()[i] == u.data()[i];
  }
  TrainConfig second = first;
  second.max_steps = 0;
  Trainer c(second, data);
  c.resume(split / "checkpoint");
  c.run();
  const std::string la = read_file(full / "train.log"), lc = read_file(split / "train.log");
  const bool same_log = !la.empty() && la == lc;
  return {exact && same_log, fmt("%zu tensors round-trip %s; resumed log (%lld steps) %s the uninterrupted log",
                                 x.tensors.size(), exact ? "bit-exactly" : "WITH DIFFERENCES",
                                 static_cast<long long>(c.global_step()), same_log ? "matches" : "DIFFERS FROM")};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"operator oracles", operator_oracles},
      {"gradient suite", gradient_suite},
      {"alignment recovers translation", translation_recovery},
      {"overfit smoke training", overfit_smoke},
      {"reference-mode ordering", reference_ordering},
      {"structure extraction", rtv_criterion},
      {"metrics", metrics_criterion},
      {"pair mining", pair_mining},
      {"mask bucketing", bucketing},
      {"persistence", persistence},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("%s criterion %d (%s): %s\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first, o.detail.c_str());
    std::fflush(stdout);
    failures += !o.pass;
  }
  return failures == 0 ? 0 : 1;
}
