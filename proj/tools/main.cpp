// Command-line front end: data preparation, training, evaluation, inference,
// timing and gradient checks.

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>

#include "refpaint/config.hpp"
#include "refpaint/data.hpp"
#include "refpaint/evaluation.hpp"
#include "refpaint/gradcheck.hpp"
#include "refpaint/rtv.hpp"
#include "refpaint/sift.hpp"
#include "refpaint/training.hpp"

namespace fs = std::filesystem;
using namespace refpaint;

namespace {

std::vector<fs::path> pngs_in(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  return files;
}

struct MineArgs {
  std::string dir_a, dir_b, out;
  int crop = 256;
  int min_matches = 20;
  int crops = 4;
  std::uint64_t seed = 0;
};

int mine(const MineArgs& a) {
  const fs::path out(a.out);
  std::vector<ManifestRecord> records;
  std::uint64_t scene = 0;
  for (const auto& pa : pngs_in(a.dir_a)) {
    const fs::path pb = fs::path(a.dir_b) / pa.filename();
    if (!fs::exists(pb)) {
      std::cerr << "skip " << pa.filename().string() << ": no counterpart in " << a.dir_b << "\n";
      continue;
    }
    const auto ia = load_image(pa), ib = load_image(pb);
    MiningOptions opt;
    opt.crop = a.crop;
    opt.min_matches = a.min_matches;
    opt.crops_per_image = a.crops;
    opt.seed = a.seed + scene++;
    const auto res = mine_pairs(ia, ib, opt);
    if (res.pairs.empty()) std::cerr << pa.filename().string() << ": " << res.diagnostic << "\n";
    for (std::size_t k = 0; k < res.pairs.size(); ++k) {
      const auto& p = res.pairs[k];
      const std::string stem = pa.stem().string() + "_" + std::to_string(k) + ".png";
      save_image(out / "input" / stem, crop(ia, p.input_y, p.input_x, a.crop, a.crop));
      save_image(out / "reference" / stem, crop(ib, p.reference_y, p.reference_x, a.crop, a.crop));
      records.push_back({"input/" + stem, "reference/" + stem, fs::absolute(pa).string(), fs::absolute(pb).string(),
                         p.input_y, p.input_x, p.reference_y, p.reference_x, p.match_score});
    }
  }
  write_manifest(out / "pairs.tsv", records);
  std::cout << records.size() << " pairs written to " << (out / "pairs.tsv").string() << "\n";
  return records.empty() ? 1 : 0;
}

int classify(const std::string& dir) {
  std::array<int, kBucketCount> counts{};
  int outside = 0;
  for (const auto& f : pngs_in(dir)) {
    const auto hc = count_holes(load_mask(f));
    const auto b = classify_bucket(hc);
    std::printf("%s\t%.4f\t%s\n", f.filename().string().c_str(), hc.ratio(), b ? kBucketLabels[*b] : "out-of-range");
    b ? ++counts[*b] : ++outside;
  }
  for (int b = 0; b < kBucketCount; ++b) std::printf("# %s\t%d\n", kBucketLabels[b], counts[b]);
  std::printf("# out-of-range\t%d\n", outside);
  return 0;
}

int generate(const std::string& out, int size, int per_bucket, std::uint64_t seed) {
  for (int b = 0; b < kBucketCount; ++b)
    for (int i = 0; i < per_bucket; ++i) {
      const double lo = 0.1 * (b + 1);
      char name[64];
      std::snprintf(name, sizeof name, "mask_%d%d_%04d.png", b + 1, b + 2, i);
      save_mask(fs::path(out) / name, generate_mask(size, lo, lo + 0.1, seed + static_cast<std::uint64_t>(b * 100000 + i)));
    }
  std::cout << kBucketCount * per_bucket << " masks written to " << out << "\n";
  return 0;
}

int print_report(const std::vector<EvalReport>& reports) {
  std::cout << render_table(reports);
  for (const auto& r : reports) {
    std::printf("# %s: %zu images, %zu excluded, %.1f ms/image\n", mode_label(r.mode).c_str(), r.evaluated, r.excluded,
                1000.0 * r.seconds_per_image);
    for (const auto& w : r.warnings) std::cerr << "warning: " << w << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reference-guided image inpainting toolkit"};
  app.require_subcommand(1);

  auto* pairs = app.add_subcommand("pairs", "Training pair preparation");
  pairs->require_subcommand(1);
  MineArgs mine_args;
  auto* pairs_mine = pairs->add_subcommand("mine", "Crop input/reference pairs from two photo folders");
  pairs_mine->add_option("dirA", mine_args.dir_a, "Folder of input-side photos")->required()->check(CLI::ExistingDirectory);
  pairs_mine->add_option("dirB", mine_args.dir_b, "Folder of reference-side photos with matching file names")
      ->required()
      ->check(CLI::ExistingDirectory);
  pairs_mine->add_option("--crop", mine_args.crop, "Crop size")->capture_default_str();
  pairs_mine->add_option("--min-matches", mine_args.min_matches, "Matches required inside a crop")->capture_default_str();
  pairs_mine->add_option("--crops-per-image", mine_args.crops, "Input crops tried per photo")->capture_default_str();
  pairs_mine->add_option("--seed", mine_args.seed, "Crop placement seed")->capture_default_str();
  pairs_mine->add_option("--out", mine_args.out, "Output folder")->required();

  auto* masks = app.add_subcommand("masks", "Mask utilities");
  masks->require_subcommand(1);
  std::string mask_dir, mask_out;
  int mask_size = 256, per_bucket = 10;
  std::uint64_t mask_seed = 0;
  auto* masks_classify = masks->add_subcommand("classify", "Print hole ratio and bucket of every mask");
  masks_classify->add_option("dir", mask_dir, "Mask folder")->required()->check(CLI::ExistingDirectory);
  auto* masks_generate = masks->add_subcommand("generate", "Write random stroke masks for every bucket");
  masks_generate->add_option("--out", mask_out, "Output folder")->required();
  masks_generate->add_option("--size", mask_size, "Mask side length")->capture_default_str();
  masks_generate->add_option("--per-bucket", per_bucket, "Masks per bucket")->capture_default_str();
  masks_generate->add_option("--seed", mask_seed, "Seed")->capture_default_str();

  auto* rtv = app.add_subcommand("rtv", "Extract the structure image of a photo");
  std::string rtv_in, rtv_out;
  RtvParams rtv_params;
  rtv->add_option("input", rtv_in, "Input PNG")->required()->check(CLI::ExistingFile);
  rtv->add_option("output", rtv_out, "Output PNG")->required();
  rtv->add_option("--lambda", rtv_params.lambda, "Smoothing strength")->capture_default_str();
  rtv->add_option("--sigma", rtv_params.sigma, "Texture window scale")->capture_default_str();
  rtv->add_option("--iterations", rtv_params.iterations, "Reweighting passes")->capture_default_str();

  auto* train = app.add_subcommand("train", "Train a model");
  std::string config_path;
  bool print_config = false, resume = false;
  train->add_option("--config", config_path, "key = value configuration file")->check(CLI::ExistingFile);
  train->add_flag("--print-default-config", print_config, "Print every key with its default and exit");
  train->add_flag("--resume", resume, "Continue from <output_dir>/checkpoint");

  auto* eval = app.add_subcommand("eval", "Bucketed PSNR/SSIM on a test set");
  std::string ckpt, eval_manifest, eval_masks, eval_mode = "real";
  std::uint64_t eval_seed = 0;
  eval->add_option("--checkpoint", ckpt, "Checkpoint directory")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--mode", eval_mode, "Reference mode")
      ->check(CLI::IsMember({"real", "black", "shuffled", "all"}))
      ->capture_default_str();
  eval->add_option("--manifest", eval_manifest, "Test pair manifest")->required()->check(CLI::ExistingFile);
  eval->add_option("--masks", eval_masks, "Test mask folder")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--seed", eval_seed, "Mask assignment and shuffle seed")->capture_default_str();

  auto* inp = app.add_subcommand("inpaint", "Fill the holes of one image");
  std::string inp_ckpt, inp_input, inp_mask, inp_ref, inp_out;
  bool no_ref = false;
  inp->add_option("--checkpoint", inp_ckpt, "Checkpoint directory")->required()->check(CLI::ExistingDirectory);
  inp->add_option("--input", inp_input, "Input PNG")->required()->check(CLI::ExistingFile);
  inp->add_option("--mask", inp_mask, "Mask PNG (255 valid, 0 hole)")->required()->check(CLI::ExistingFile);
  auto* ref_opt = inp->add_option("--reference", inp_ref, "Reference PNG")->check(CLI::ExistingFile);
  auto* no_ref_opt = inp->add_flag("--no-reference", no_ref, "Use a black reference");
  ref_opt->excludes(no_ref_opt);
  inp->add_option("--output", inp_out, "Output PNG")->required();

  auto* bench_cmd = app.add_subcommand("bench", "Time the forward pass");
  std::string bench_ckpt;
  int bench_runs = 10;
  bench_cmd->add_option("--checkpoint", bench_ckpt, "Checkpoint directory; omitted means a fresh default model")
      ->check(CLI::ExistingDirectory);
  bench_cmd->add_option("--runs", bench_runs, "Timed runs (at least 10)")->capture_default_str();

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  std::string component = "all";
  std::uint64_t gc_seed = 0;
  bool list = false;
  gc->add_option("component", component, "Component name or all")->capture_default_str();
  gc->add_option("--seed", gc_seed, "Data seed")->capture_default_str();
  gc->add_flag("--list", list, "List components");

  CLI11_PARSE(app, argc, argv);

  try {
    if (pairs_mine->parsed()) return mine(mine_args);
    if (masks_classify->parsed()) return classify(mask_dir);
    if (masks_generate->parsed()) return generate(mask_out, mask_size, per_bucket, mask_seed);

    if (rtv->parsed()) {
      const auto res = rtv_smooth_report(load_image(rtv_in), rtv_params);
      save_image(rtv_out, res.image);
      if (!res.converged) std::cerr << "warning: a linear solve hit its iteration cap\n";
      return 0;
    }

    if (train->parsed()) {
      if (print_config) {
        std::cout << default_config_text();
        return 0;
      }
      if (config_path.empty()) throw ConfigError("train needs --config (see --print-default-config)");
      const TrainConfig cfg = load_config(config_path);
      cfg.validate();
      Trainer trainer(cfg, load_dataset(cfg.manifest, cfg.mask_dir));
      const fs::path checkpoint = fs::path(cfg.output_dir) / "checkpoint";
      if (resume && fs::exists(checkpoint)) trainer.resume(checkpoint);
      const auto r = trainer.run();
      std::cout << "step " << r.steps << ", checkpoint " << checkpoint.string() << "\n";
      if (r.halted) {
        std::cerr << "training halted: " << r.halt_reason << "\n";
        return 2;
      }
      return 0;
    }

    if (eval->parsed()) {
      const auto model = load_model(ckpt);
      const auto data = load_dataset(eval_manifest, eval_masks);
      const auto assigned = assign_masks(data.pairs, data.masks, eval_seed);
      if (assigned.excluded_masks) std::cerr << "warning: " << assigned.excluded_masks << " masks outside every bucket\n";
      std::vector<EvalReport> reports;
      for (const char* m : {"real", "black", "shuffled"}) {
        if (eval_mode == "all" || eval_mode == m) {
          reports.push_back(evaluate(*model.generator, assigned.samples, parse_reference_mode(m), eval_seed));
        }
      }
      return print_report(reports);
    }

    if (inp->parsed()) {
      const auto model = load_model(inp_ckpt);
      std::optional<Tensor<float>> reference;
      if (!inp_ref.empty()) reference = load_image(inp_ref);
      if (!reference && !no_ref) throw std::invalid_argument("pass --reference <png> or --no-reference");
      save_image(inp_out, inpaint(*model.generator, load_image(inp_input), load_mask(inp_mask), reference));
      return 0;
    }

    if (bench_cmd->parsed()) {
      std::unique_ptr<Generator<float>> fresh;
      LoadedModel model;
      const Generator<float>* g = nullptr;
      if (bench_ckpt.empty()) {
        fresh = std::make_unique<Generator<float>>(NetworkConfig{}, 0);
        g = fresh.get();
      } else {
        model = load_model(bench_ckpt);
        g = model.generator.get();
      }
      const auto b = bench(*g, bench_runs);
      std::printf("%d x %d: %.2f ms/image (std %.2f ms) over %d runs after %d warmups, single CPU thread\n",
                  g->config().image_size, g->config().image_size, b.mean_ms, b.std_ms, b.runs, kBenchWarmups);
      return 0;
    }

    if (gc->parsed()) {
      if (list) {
        for (const auto& n : gradcheck_components()) std::cout << n << "\n";
        return 0;
      }
      std::vector<std::string> names = component == "all" ? gradcheck_components() : std::vector<std::string>{component};
      bool ok = true;
      for (const auto& n : names) {
        const auto r = run_gradcheck(n, gc_seed);
        for (const auto& g : r.groups) {
          std::printf("%s\t%s\t%zu entries\tmax rel error %.3e\n", n.c_str(), g.group.c_str(), g.checked, g.max_rel_error);
        }
        std::printf("%s %s (threshold %.0e)\n", r.passed ? "PASS" : "FAIL", n.c_str(), r.threshold);
        ok = ok && r.passed;
      }
      return ok ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
