#include "refpaint/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

namespace refpaint {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Shortest text that parses back to the same double.
std::string fmt(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

double to_double(const std::string& s) {
  double v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw ConfigError("expected a number, got '" + s + "'");
  return v;
}

template <typename I>
I to_int(const std::string& s) {
  I v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw ConfigError("expected an integer, got '" + s + "'");
  return v;
}

std::string fmt_list(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

std::vector<int> to_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) out.push_back(to_int<int>(trim(item)));
  if (out.empty()) throw ConfigError("expected a comma-separated integer list");
  return out;
}

struct Field {
  const char* name;
  const char* doc;
  std::function<std::string(const TrainConfig&)> get;
  std::function<void(TrainConfig&, const std::string&)> set;
};

#define REAL(key, member, doc) \
  Field{key, doc, [](const TrainConfig& c) { return fmt(c.member); }, [](TrainConfig& c, const std::string& v) { c.member = to_double(v); }}
#define INT(key, member, doc)                                                   \
  Field{key, doc, [](const TrainConfig& c) { return std::to_string(c.member); }, \
        [](TrainConfig& c, const std::string& v) { c.member = to_int<decltype(c.member)>(v); }}
#define LIST(key, member, doc) \
  Field{key, doc, [](const TrainConfig& c) { return fmt_list(c.member); }, [](TrainConfig& c, const std::string& v) { c.member = to_list(v); }}
#define TEXT(key, member, doc) \
  Field{key, doc, [](const TrainConfig& c) { return c.member; }, [](TrainConfig& c, const std::string& v) { c.member = v; }}

const std::vector<Field>& fields() {
  static const std::vector<Field> f{
      REAL("lr", lr, "Adam learning rate for generator and discriminator"),
      INT("batch", batch, "samples accumulated per optimizer step"),
      INT("epochs", epochs, "passes over the training pairs; 0 writes the initial checkpoint only"),
      INT("seed", seed, "seed for weights, pair order, mask draws and shuffled references"),
      INT("max_steps", max_steps, "stop after this many optimizer steps; 0 means no limit"),
      INT("checkpoint_interval", checkpoint_interval, "steps between checkpoints; 0 saves only at the end"),
      INT("discriminator_channels", discriminator_channels, "width of the first critic layer"),
      Field{"reference_mode", "real, black or shuffled",
            [](const TrainConfig& c) { return to_string(c.reference_mode); },
            [](TrainConfig& c, const std::string& v) {
              try {
                c.reference_mode = parse_reference_mode(v);
              } catch (const std::invalid_argument& e) {
                throw ConfigError(e.what());
              }
            }},
      REAL("weight.reconstruction", weights.reconstruction, "weight of the masked L1 term"),
      REAL("weight.perceptual", weights.perceptual, "weight of the perceptual term"),
      REAL("weight.style", weights.style, "weight of the style term"),
      REAL("weight.adversarial", weights.adversarial, "weight of the generator adversarial term"),
      REAL("weight.branch", weights.branch, "weight of the texture/structure branch supervision"),
      INT("network.image_size", network.image_size, "square training and inference resolution"),
      INT("network.base_channels", network.base_channels, "width of the first encoder stage"),
      INT("network.encoder_depth", network.encoder_depth, "number of stride-2 encoder stages"),
      LIST("network.texture_layers", network.texture_layers, "encoder stages feeding the texture branch"),
      LIST("network.structure_layers", network.structure_layers, "encoder stages feeding the structure branch"),
      LIST("network.branch_kernels", network.branch_kernel_sizes, "partial-conv stream kernel sizes"),
      LIST("network.residual_dilations", network.residual_dilations, "dilation of each decoder residual block"),
      INT("network.fam_hidden", network.fam_hidden, "offset estimator width; 0 means 2 * base_channels"),
      REAL("rtv.lambda", rtv.lambda, "structure smoothing strength"),
      REAL("rtv.sigma", rtv.sigma, "initial texture window scale in pixels"),
      REAL("rtv.epsilon", rtv.epsilon, "guard on windowed inherent variation"),
      REAL("rtv.sharpness", rtv.sharpness, "guard on per-pixel variation"),
      INT("rtv.iterations", rtv.iterations, "reweighting passes"),
      TEXT("manifest", manifest, "pair manifest written by `pairs mine`"),
      TEXT("mask_dir", mask_dir, "directory of training mask PNGs"),
      TEXT("output_dir", output_dir, "checkpoint, log and structure cache directory"),
      TEXT("feature_weights", feature_weights, "optional archive replacing the seeded perceptual network"),
  };
  return f;
}

#undef REAL
#undef INT
#undef LIST
#undef TEXT

const Field& field(const std::string& key) {
  for (const auto& f : fields())
    if (key == f.name) return f;
  throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace

void TrainConfig::validate() const {
  if (!(lr > 0)) throw ConfigError("lr must be positive");
  if (batch < 1) throw ConfigError("batch must be at least 1");
  if (epochs < 0) throw ConfigError("epochs must be non-negative");
  if (max_steps < 0) throw ConfigError("max_steps must be non-negative");
  if (checkpoint_interval < 0) throw ConfigError("checkpoint_interval must be non-negative");
  if (discriminator_channels < 1) throw ConfigError("discriminator_channels must be positive");
  try {
    weights.validate();
    network.validate();
    rtv.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

std::vector<ConfigKey> config_keys() {
  const TrainConfig defaults;
  std::vector<ConfigKey> out;
  for (const auto& f : fields()) out.push_back({f.name, f.get(defaults), f.doc});
  return out;
}

std::string get_config_value(const TrainConfig& config, const std::string& key) { return field(key).get(config); }

void set_config_value(TrainConfig& config, const std::string& key, const std::string& value) {
  field(key).set(config, value);
}

TrainConfig parse_config(const std::string& text) {
  TrainConfig c;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    const std::string where = "config line " + std::to_string(lineno) + ": ";
    if (eq == std::string::npos) throw ConfigError(where + "expected key = value");
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    if (!seen.insert(key).second) throw ConfigError(where + "duplicate key '" + key + "'");
    try {
      set_config_value(c, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  return c;
}

TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string format_config(const TrainConfig& config) {
  std::string out;
  for (const auto& f : fields()) out += std::string(f.name) + " = " + f.get(config) + "\n";
  return out;
}

std::string default_config_text() {
  std::string out;
  for (const auto& k : config_keys()) out += "# " + k.doc + "\n" + k.name + " = " + k.default_value + "\n\n";
  return out;
}

}  // namespace refpaint
