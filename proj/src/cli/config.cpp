#include <charconv>
#include <functional>
#include <sstream>

#include "nsl/cli/cli.hpp"
#include "nsl/diffmath/errors.hpp"

namespace nsl::cli {

namespace {

using synth::to_bool;
using synth::to_double;
using synth::to_u64;

std::string fmt(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string fmt(std::uint64_t v) { return std::to_string(v); }
std::string fmt(bool v) { return v ? "1" : "0"; }

struct Field {
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename T>
Field field(const std::string& key, T RunConfig::*member) {
  Field f;
  f.key = key;
  f.set = [key, member](RunConfig& c, const std::string& v) {
    if constexpr (std::is_same_v<T, std::string>) {
      c.*member = v;
    } else if constexpr (std::is_same_v<T, bool>) {
      c.*member = to_bool(key, v);
    } else if constexpr (std::is_same_v<T, double>) {
      c.*member = to_double(key, v);
    } else {
      c.*member = static_cast<T>(to_u64(key, v));
    }
  };
  f.get = [member](const RunConfig& c) {
    if constexpr (std::is_same_v<T, std::string>) {
      return c.*member;
    } else if constexpr (std::is_same_v<T, bool>) {
      return fmt(c.*member);
    } else if constexpr (std::is_same_v<T, double>) {
      return fmt(c.*member);
    } else {
      return fmt(static_cast<std::uint64_t>(c.*member));
    }
  };
  return f;
}

const std::vector<Field>& fields() {
  static const std::vector<Field> all = {
      field("dataset", &RunConfig::dataset),
      field("out", &RunConfig::out),
      field("checkpoint", &RunConfig::checkpoint),
      field("spec", &RunConfig::spec),
      field("encoder", &RunConfig::encoder),
      field("height", &RunConfig::height),
      field("width", &RunConfig::width),
      field("feature_channels", &RunConfig::feature_channels),
      field("train_encoder", &RunConfig::train_encoder),
      field("D", &RunConfig::D),
      field("zeta", &RunConfig::zeta),
      field("radius", &RunConfig::radius),
      field("upsample_hidden", &RunConfig::upsample_hidden),
      field("use_transformer", &RunConfig::use_transformer),
      field("gamma", &RunConfig::gamma),
      field("alpha", &RunConfig::alpha),
      field("beta1", &RunConfig::beta1),
      field("beta2", &RunConfig::beta2),
      field("lr", &RunConfig::lr),
      field("decay_steps", &RunConfig::decay_steps),
      field("batch", &RunConfig::batch),
      field("steps", &RunConfig::steps),
      field("epochs", &RunConfig::epochs),
      field("bins", &RunConfig::bins),
      field("max_depth", &RunConfig::max_depth),
      field("seed", &RunConfig::seed),
  };
  return all;
}

const Field* find_field(const std::string& key) {
  for (const Field& f : fields())
    if (f.key == key) return &f;
  return nullptr;
}

}  // namespace

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const Field& f : fields()) k.push_back(f.key);
    return k;
  }();
  return keys;
}

void apply(RunConfig& config, const synth::KeyValues& values, const std::string& origin) {
  for (const auto& [key, value] : values) {
    if (key == "subcommand") {
      config.subcommand = value;
      continue;
    }
    const Field* f = find_field(key);
    if (!f) throw ConfigError(origin + ": unknown key '" + key + "'");
    try {
      f->set(config, value);
    } catch (const FormatError& e) {
      throw ConfigError(origin + ": " + e.what());
    }
    config.explicit_keys.insert(key);
    if (key == "seed") config.seed_source = origin;
  }
}

std::string format_config(const RunConfig& config) {
  std::ostringstream os;
  os << "subcommand = " << config.subcommand << "\n";
  for (const Field& f : fields()) os << f.key << " = " << f.get(config) << "\n";
  return os.str();
}

RunConfig parse_config(const std::string& text) {
  RunConfig c;
  try {
    apply(c, synth::parse_key_values(text), "config");
  } catch (const FormatError& e) {
    throw ConfigError(e.what());
  }
  return c;
}

void RunConfig::validate() const {
  static const std::set<std::string> subs = {"", "train", "infer", "eval", "synth", "gradcheck"};
  if (!subs.count(subcommand)) throw ConfigError("unknown subcommand '" + subcommand + "'");
  if (encoder != "toy" && encoder != "files") throw ConfigError("encoder must be 'toy' or 'files'");
  if (height == 0 || width == 0 || height % 8 != 0 || width % 8 != 0) {
    throw ConfigError("height and width must be positive multiples of 8");
  }
  if (feature_channels == 0 || D == 0 || upsample_hidden == 0 || radius == 0) {
    throw ConfigError("feature_channels, D, upsample_hidden and radius must be >= 1");
  }
  if (!(zeta >= 0.0 && zeta <= 2.0)) throw ConfigError("zeta must lie in [0, 2]");
  if (!(gamma >= 0.0)) throw ConfigError("gamma must be >= 0");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in [0, 1]");
  if (!(beta1 >= 0.0) || !(beta2 >= 0.0)) throw ConfigError("beta1 and beta2 must be >= 0");
  if (!(lr > 0.0 && lr < 1.0)) throw ConfigError("lr must lie in (0, 1)");
  if (batch == 0) throw ConfigError("batch must be >= 1");
  if (steps == 0 && epochs == 0) throw ConfigError("steps or epochs must be >= 1");
  if (bins == 0) throw ConfigError("bins must be >= 1");
  if (!(max_depth > 0.0)) throw ConfigError("max_depth must be > 0");
  if (train_encoder && encoder != "toy") throw ConfigError("train_encoder needs encoder = toy");
}

RunConfig reference_recipe() {
  RunConfig c;
  c.subcommand = "train";
  c.height = 192;
  c.width = 320;
  c.batch = 8;
  c.epochs = 20;
  c.lr = 1e-4;
  return c;
}

synth::TrainConfig train_config(const RunConfig& c) {
  c.validate();
  synth::TrainConfig t;
  t.model.height = c.height;
  t.model.width = c.width;
  t.model.encoder = c.encoder == "toy" ? features::FeatureSource::kToyEncoder : features::FeatureSource::kFile;
  t.model.feature_channels = c.feature_channels;
  t.model.train_encoder = c.train_encoder;
  t.model.matcher.dim = c.D;
  t.model.matcher.zeta = c.zeta;
  t.model.matcher.radius = c.radius;
  t.model.matcher.upsample_hidden = c.upsample_hidden;
  t.model.matcher.use_transformer = c.use_transformer;
  t.loss.gamma = c.gamma;
  t.loss.alpha = c.alpha;
  t.loss.beta1 = c.beta1;
  t.loss.beta2 = c.beta2;
  t.lr = c.lr;
  t.decay_steps = c.decay_steps;
  t.batch = c.batch;
  t.steps = c.steps;
  t.epochs = c.epochs;
  t.seed = c.seed;
  return t;
}

std::string run_manifest(const RunConfig& config) {
  std::ostringstream os;
  os << "code_version = " << kCodeVersion << "\nseed_source = " << config.seed_source
     << "\n" << format_config(config);
  return os.str();
}

}  // namespace nsl::cli
