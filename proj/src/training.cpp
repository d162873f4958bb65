#include "refpaint/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "refpaint/data.hpp"
#include "refpaint/ops.hpp"
#include "refpaint/rtv.hpp"

namespace refpaint {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kEpochSalt = 0x9E3779B97F4A7C15ULL;

std::string g9(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 1469598103934665603ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) h = (h ^ p[i]) * 1099511628211ULL;
  return h;
}

bool grads_finite(const std::map<std::string, Tensor<float>>& params) {
  for (const auto& [name, t] : params) {
    if (!t.has_grad()) continue;
    for (float g : t.grad())
      if (!std::isfinite(g)) return false;
  }
  return true;
}

void put_moments(Archive& a, const std::string& net, const Adam<float>& opt) {
  for (const auto& [name, m] : opt.moments()) {
    if (m.m.empty()) continue;
    const Shape s = opt.params().at(name).shape();
    a.put("adam." + net + ".m." + name, s, m.m);
    a.put("adam." + net + ".v." + name, s, m.v);
  }
  a.meta["adam." + net + ".steps"] = std::to_string(opt.steps());
}

void get_moments(const Archive& a, const std::string& net, Adam<float>& opt) {
  opt.moments().clear();
  for (const auto& [name, t] : opt.params()) {
    const auto m = a.tensors.find("adam." + net + ".m." + name);
    const auto v = a.tensors.find("adam." + net + ".v." + name);
    if (m == a.tensors.end() || v == a.tensors.end()) continue;
    if (m->second.shape != t.shape() || v->second.shape != t.shape()) {
      throw ArchiveError("checkpoint: moment shape mismatch for " + name);
    }
    opt.moments()[name] = AdamMoments<float>{m->second.data, v->second.data};
  }
  opt.set_steps(std::stoll(a.meta_value("adam." + net + ".steps")));
}

}  // namespace

std::vector<Tensor<float>> load_masks(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw ImageIoError("mask directory not found: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<Tensor<float>> masks;
  for (const auto& f : files) masks.push_back(load_mask(f));
  return masks;
}

Dataset load_dataset(const fs::path& manifest, const fs::path& mask_dir) {
  Dataset d;
  const fs::path base = manifest.parent_path();
  for (const auto& r : read_manifest(manifest)) d.pairs.push_back({load_image(base / r.input), load_image(base / r.reference)});
  d.masks = load_masks(mask_dir);
  return d;
}

std::string format_log_line(const StepLog& l) {
  std::string s = std::to_string(l.step) + "\t" + std::to_string(l.epoch) + "\t" + g9(l.total);
  for (double c : l.components) s += "\t" + g9(c);
  s += "\t" + g9(l.discriminator) + "\t" + g9(l.hole_l1);
  return s;
}

Trainer::Trainer(TrainConfig config, Dataset data)
    : config_(std::move(config)),
      data_(std::move(data)),
      selector_(config_.reference_mode, data_.pairs.size(), config_.seed),
      rng_(config_.seed) {
  config_.validate();
  if (data_.pairs.empty()) throw std::invalid_argument("training set is empty");
  if (data_.masks.empty()) throw std::invalid_argument("no training masks");
  const int s = config_.network.image_size;
  for (const auto& p : data_.pairs) {
    if (p.image.shape() != Shape{1, 3, s, s} || p.reference.shape() != Shape{1, 3, s, s}) {
      throw ShapeError("training pair must be (1, 3, " + std::to_string(s) + ", " + std::to_string(s) + "), got " +
                       p.image.shape().str() + " / " + p.reference.shape().str());
    }
    references_.push_back(p.reference);
  }
  for (auto& m : data_.masks) {
    if (m.shape().h != s || m.shape().w != s) m = resize_mask_nearest(m, s, s);
  }
  generator_ = std::make_unique<Generator<float>>(config_.network, config_.seed);
  discriminator_ = std::make_unique<Discriminator<float>>(config_.discriminator_channels, config_.seed + 1);
  feature_net_ = std::make_unique<FeatureNet<float>>();
  if (!config_.feature_weights.empty()) feature_net_->import_weights(config_.feature_weights);
  AdamConfig adam;
  adam.lr = config_.lr;
  gen_opt_ = std::make_unique<Adam<float>>(generator_->parameters().all(), adam);
  disc_opt_ = std::make_unique<Adam<float>>(discriminator_->parameters().all(), adam);
}

std::int64_t Trainer::steps_per_epoch() const {
  return std::max<std::int64_t>(1, static_cast<std::int64_t>(data_.pairs.size()) / config_.batch);
}

std::vector<std::size_t> Trainer::epoch_order(int epoch) const {
  std::vector<std::size_t> order(data_.pairs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng r(config_.seed ^ (kEpochSalt * static_cast<std::uint64_t>(epoch + 1)));
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[r.below(i)]);
  return order;
}

Tensor<float> Trainer::mask_for_step() { return data_.masks[rng_.below(data_.masks.size())]; }

const Tensor<float>& Trainer::structure(std::size_t pair) {
  auto it = structure_cache_.find(pair);
  if (it != structure_cache_.end()) return it->second;
  const Tensor<float>& image = data_.pairs.at(pair).image;
  fs::path file;
  if (!config_.output_dir.empty()) {
    std::uint64_t h = fnv1a(image.ptr(), image.numel() * sizeof(float));
    for (const char* key : {"rtv.lambda", "rtv.sigma", "rtv.epsilon", "rtv.sharpness", "rtv.iterations"}) {
      const std::string v = get_config_value(config_, key);
      h = fnv1a(v.data(), v.size(), h);
    }
    char name[32];
    std::snprintf(name, sizeof name, "%016llx.f32", static_cast<unsigned long long>(h));
    file = fs::path(config_.output_dir) / "structure_cache" / name;
    if (fs::exists(file) && fs::file_size(file) == image.numel() * sizeof(float)) {
      std::vector<float> d(image.numel());
      std::ifstream in(file, std::ios::binary);
      in.read(reinterpret_cast<char*>(d.data()), static_cast<std::streamsize>(d.size() * sizeof(float)));
      if (in) return structure_cache_[pair] = Tensor<float>(image.shape(), std::move(d));
    }
  }
  Tensor<float> s = rtv_smooth(image, config_.rtv);
  if (!file.empty()) {
    fs::create_directories(file.parent_path());
    const fs::path tmp = file.string() + ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary);
      out.write(reinterpret_cast<const char*>(s.ptr()), static_cast<std::streamsize>(s.numel() * sizeof(float)));
    }
    fs::rename(tmp, file);
  }
  return structure_cache_[pair] = s;
}

StepLog Trainer::step() {
  const std::int64_t spe = steps_per_epoch();
  const int epoch = static_cast<int>(step_ / spe);
  const std::int64_t pos = step_ % spe;
  const auto order = epoch_order(epoch);
  const int batch = config_.batch;
  const float inv_batch = 1.0f / static_cast<float>(batch);

  StepLog log;
  log.step = step_ + 1;
  log.epoch = epoch;

  struct Sample {
    Tensor<float> image, fake;
  };
  std::vector<Sample> samples;
  gen_opt_->zero_grad();
  for (int b = 0; b < batch; ++b) {
    const std::size_t idx = order[static_cast<std::size_t>((pos * batch + b) % static_cast<std::int64_t>(order.size()))];
    const Tensor<float>& image = data_.pairs[idx].image;
    const Tensor<float> mask = mask_for_step();
    const Tensor<float> reference = selector_.reference(idx, references_);
    const Tensor<float>& gt_structure = structure(idx);

    auto out = generator_->forward(image, mask, reference);
    auto [tex_rgb, str_rgb] = generator_->project_branches(out.texture, out.structure);
    Tensor<float> real_scores;
    {
      NoGradGuard guard;
      real_scores = (*discriminator_)(image);
    }
    LossTerms<float> terms{reconstruction_loss(out.raw, image, mask),
                           perceptual_loss(out.composite, image, *feature_net_),
                           style_loss(out.composite, image, *feature_net_),
                           ra_lsgan_loss(real_scores, (*discriminator_)(out.composite), AdversarialSide::kGenerator),
                           branch_supervision_loss(tex_rgb, str_rgb, image, gt_structure)};
    auto total = total_loss(terms, config_.weights);
    if (!std::isfinite(total.total.item())) throw NonFiniteError("generator loss is not finite");
    scale(total.total, inv_batch).backward();
    log.total += total.total.item() / batch;
    for (int i = 0; i < 5; ++i) log.components[i] += total.components[i] / batch;
    log.hole_l1 += hole_l1(out.composite.detach(), image, mask).item() / batch;
    samples.push_back({image, out.composite.detach()});
  }
  if (!grads_finite(gen_opt_->params())) throw NonFiniteError("generator gradient is not finite");

  // The critic update is computed before either optimizer moves so a
  // non-finite critic loss leaves both networks untouched.
  disc_opt_->zero_grad();
  double disc_total = 0;
  for (const auto& s : samples) {
    auto loss = ra_lsgan_loss((*discriminator_)(s.image), (*discriminator_)(s.fake), AdversarialSide::kDiscriminator);
    if (!std::isfinite(loss.item())) throw NonFiniteError("discriminator loss is not finite");
    scale(loss, inv_batch).backward();
    disc_total += loss.item() / batch;
  }
  if (!grads_finite(disc_opt_->params())) throw NonFiniteError("discriminator gradient is not finite");
  gen_opt_->step();
  disc_opt_->step();
  log.discriminator = disc_total;
  ++step_;
  history_.push_back(log);
  return log;
}

void Trainer::save_checkpoint(const fs::path& dir) const {
  Archive a;
  a.meta["kind"] = "checkpoint";
  a.meta["step"] = std::to_string(step_);
  a.meta["epoch"] = std::to_string(step_ / steps_per_epoch());
  a.meta["rng"] = rng_.state();
  for (const auto& k : config_keys()) a.meta["config." + k.name] = get_config_value(config_, k.name);
  put_parameters(a, generator_->parameters(), "generator.");
  put_parameters(a, discriminator_->parameters(), "discriminator.");
  put_moments(a, "generator", *gen_opt_);
  put_moments(a, "discriminator", *disc_opt_);
  save_archive(dir, a);
}

void Trainer::resume(const fs::path& checkpoint) {
  const Archive a = load_archive(checkpoint);
  const TrainConfig saved = checkpoint_config(a);
  for (const auto& k : config_keys()) {
    if (!k.name.starts_with("network.") && k.name != "discriminator_channels") continue;
    if (get_config_value(saved, k.name) != get_config_value(config_, k.name)) {
      throw ConfigError("checkpoint " + checkpoint.string() + " was trained with " + k.name + " = " +
                        get_config_value(saved, k.name));
    }
  }
  load_parameters(a, generator_->parameters(), "generator.");
  load_parameters(a, discriminator_->parameters(), "discriminator.");
  get_moments(a, "generator", *gen_opt_);
  get_moments(a, "discriminator", *disc_opt_);
  rng_.set_state(a.meta_value("rng"));
  step_ = std::stoll(a.meta_value("step"));
  history_.clear();
}

void Trainer::rewrite_log_prefix() const {
  const fs::path path = fs::path(config_.output_dir) / "train.log";
  std::vector<std::string> kept;
  if (step_ > 0 && fs::exists(path)) {
    std::ifstream in(path);
    for (std::string line; std::getline(in, line);) {
      if (line.empty() || line[0] == '#') continue;
      if (std::stoll(line.substr(0, line.find('\t'))) <= step_) kept.push_back(line);
    }
  }
  std::ofstream out(path, std::ios::trunc);
  out << kLogHeader << '\n';
  for (const auto& l : kept) out << l << '\n';
}

void Trainer::append_log(const StepLog& log) const {
  std::ofstream out(fs::path(config_.output_dir) / "train.log", std::ios::app);
  out << format_log_line(log) << '\n';
}

TrainResult Trainer::run() {
  const bool persist = !config_.output_dir.empty();
  const fs::path ckpt = fs::path(config_.output_dir) / "checkpoint";
  if (persist) {
    fs::create_directories(config_.output_dir);
    rewrite_log_prefix();
  }
  std::int64_t target = static_cast<std::int64_t>(config_.epochs) * steps_per_epoch();
  if (config_.max_steps > 0) target = std::min<std::int64_t>(target, config_.max_steps);
  TrainResult result;
  std::int64_t saved_at = -1;
  while (step_ < target) {
    try {
      const StepLog log = step();
      if (persist) append_log(log);
    } catch (const NonFiniteError& e) {
      result.halted = true;
      result.halt_reason = "step " + std::to_string(step_ + 1) + ": " + e.what();
      break;
    }
    if (persist && config_.checkpoint_interval > 0 && step_ % config_.checkpoint_interval == 0) {
      save_checkpoint(ckpt);
      saved_at = step_;
    }
  }
  if (persist && saved_at != step_) save_checkpoint(ckpt);
  result.steps = step_;
  return result;
}

TrainConfig checkpoint_config(const Archive& a) {
  TrainConfig c;
  for (const auto& k : config_keys()) {
    const auto it = a.meta.find("config." + k.name);
    if (it == a.meta.end()) throw ArchiveError("checkpoint: missing config key " + k.name);
    set_config_value(c, k.name, it->second);
  }
  return c;
}

LoadedModel load_model(const fs::path& checkpoint) {
  const Archive a = load_archive(checkpoint);
  LoadedModel m;
  m.config = checkpoint_config(a);
  m.generator = std::make_unique<Generator<float>>(m.config.network, m.config.seed);
  load_parameters(a, m.generator->parameters(), "generator.");
  return m;
}

}  // namespace refpaint
