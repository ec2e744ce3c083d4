#include "nsl/synth/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <random>
#include <sstream>

#include "nsl/diffmath/errors.hpp"
#include "nsl/diffmath/ops.hpp"
#include "nsl/synth/scene.hpp"

namespace nsl::synth {

using ad::Var;

std::size_t ModelConfig::raw_channels() const {
  return encoder == features::FeatureSource::kToyEncoder ? features::kToyChannels : feature_channels;
}

void ModelConfig::validate() const {
  if (height == 0 || width == 0 || height % 8 != 0 || width % 8 != 0) {
    throw ConfigError("image size must be positive and divisible by 8, got " + std::to_string(height) + "x" +
                      std::to_string(width));
  }
  if (raw_channels() == 0) throw ConfigError("feature_channels must be > 0");
  if (matcher.dim == 0) throw ConfigError("D must be > 0");
  if (matcher.upsample_hidden == 0) throw ConfigError("upsample_hidden must be > 0");
  if (!(matcher.zeta >= 0.0)) throw ConfigError("zeta must be >= 0");
  if (train_encoder && encoder != features::FeatureSource::kToyEncoder) {
    throw ConfigError("train_encoder needs the toy encoder");
  }
}

std::string ModelConfig::describe() const {
  std::ostringstream os;
  os.precision(17);
  os << "height = " << height << "\nwidth = " << width
     << "\nencoder = " << (encoder == features::FeatureSource::kToyEncoder ? "toy" : "files")
     << "\nfeature_channels = " << raw_channels() << "\ntrain_encoder = " << (train_encoder ? 1 : 0)
     << "\nD = " << matcher.dim << "\nzeta = " << matcher.zeta << "\nradius = " << matcher.radius
     << "\nupsample_hidden = " << matcher.upsample_hidden
     << "\nuse_transformer = " << (matcher.use_transformer ? 1 : 0) << "\n";
  return os.str();
}

std::string config_hash(const ModelConfig& config) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : config.describe()) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

ad::ParameterStore init_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
  std::uint32_t seeds[3];
  seq.generate(seeds, seeds + 3);
  ad::ParameterStore store;
  if (config.encoder == features::FeatureSource::kToyEncoder) features::ToyEncoder::init_params(store, seeds[0]);
  features::ProjectionHead::init_params(store, {config.raw_channels(), config.matcher.dim}, seeds[1]);
  matcher::init_matcher_params(store, config.matcher, seeds[2]);
  return store;
}

bool is_trainable(const ModelConfig& config, const std::string& name) {
  const std::string enc = std::string(features::ToyEncoder::kPrefix) + ".";
  return config.train_encoder || name.compare(0, enc.size(), enc) != 0;
}

ModelOutput forward(ad::Binding& params, const ModelConfig& config, const StereoInput& input) {
  const Shape image{3, config.height, config.width};
  if (input.left.shape() != image || input.right.shape() != image) {
    throw DimensionError("model expects images " + shape_str(image) + ", got " + shape_str(input.left.shape()) +
                         " and " + shape_str(input.right.shape()));
  }
  ad::Tape& tape = params.tape();
  ModelOutput out;
  out.left = tape.constant(input.left);
  out.right = tape.constant(input.right);
  features::FeatureVars fl, fr;
  if (config.encoder == features::FeatureSource::kToyEncoder) {
    fl = features::ToyEncoder::forward(params, out.left);
    fr = features::ToyEncoder::forward(params, out.right);
  } else {
    if (!input.features_left || !input.features_right) {
      throw ContractError("config reads features from files but the item has none");
    }
    fl = features::to_tape(tape, *input.features_left);
    fr = features::to_tape(tape, *input.features_right);
  }
  out.pyramid_left = features::project(params, fl);
  out.pyramid_right = features::project(params, fr);
  out.match = matcher::match_stereo(params, out.pyramid_left, out.pyramid_right, config.matcher);
  return out;
}

losses::LossParts model_loss(const ModelOutput& out, const losses::LossConfig& config) {
  losses::LossParts parts;
  parts.photo = losses::photometric_loss(out.left, out.right, out.match.disparity, config).loss;
  parts.reg = 0.5 * (losses::distance_regularizer(out.match.distance.p, config) +
                     losses::distance_regularizer(out.match.refinement.p, config));
  parts.smooth = losses::smoothness_loss(out.match.disparity, out.left);
  return parts;
}

ad::GradCheckReport pipeline_gradcheck(std::uint64_t seed, double tolerance, std::size_t coords_per_tensor) {
  ModelConfig cfg;
  cfg.height = 16;
  cfg.width = 16;
  cfg.train_encoder = true;
  cfg.matcher.dim = 8;
  cfg.matcher.upsample_hidden = 4;
  cfg.matcher.radius = 2;
  cfg.matcher.zeta = 0.05;
  const losses::LossConfig loss_cfg;

  RandomSceneOptions o;
  o.height = 16;
  o.width = 16;
  o.min_disparity = 1;
  o.max_disparity = 3;
  o.rectangles = 1;
  const DatasetItem scenes[2] = {gen_scene(random_scene_spec(o, seed)), gen_scene(random_scene_spec(o, seed + 1))};

  ad::ParameterStore store = init_model(cfg, seed);
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);
  std::uniform_real_distribution<double> jitter(-0.1, 0.1);
  for (auto& [name, t] : store.all())
    for (double& v : t.data()) v += jitter(rng);

  auto loss_of = [&](ad::Binding& bind) {
    Var total;
    for (std::size_t i = 0; i < 2; ++i) {
      const ModelOutput out = forward(bind, cfg, {scenes[i].left, scenes[i].right});
      Var l = losses::total_loss(model_loss(out, loss_cfg), loss_cfg);
      total = i == 0 ? l : total + l;
    }
    return total * 0.5;
  };
  auto value_at = [&]() {
    ad::Tape tape;
    ad::Binding bind(tape, store, [](const std::string&) { return false; });
    return loss_of(bind).value().item();
  };

  ad::GradCheckReport report;
  report.name = "pipeline";
  ad::Tape tape;
  ad::Binding bind(tape, store);
  tape.backward(loss_of(bind));
  const std::map<std::string, Tensor> grads = bind.gradients();
  const ad::GradCheckOptions opt;
  for (auto& [name, param] : store.all()) {
    const auto it = grads.find(name);
    if (it == grads.end()) {
      report.max_rel_error = std::numeric_limits<double>::infinity();
      continue;
    }
    std::uniform_int_distribution<std::size_t> pick(0, param.numel() - 1);
    for (std::size_t k = 0; k < std::min(coords_per_tensor, param.numel()); ++k) {
      const std::size_t i = pick(rng);
      const double orig = param[i];
      auto central = [&](double h) {
        param[i] = orig + h;
        const double up = value_at();
        param[i] = orig - h;
        const double down = value_at();
        param[i] = orig;
        return (up - down) / (2 * h);
      };
      const double numeric = central(opt.step);
      const double half = central(opt.step / 2);
      const double analytic = it->second[i];
      const double scale = std::max({std::abs(numeric), std::abs(half), opt.floor});
      if (std::abs(numeric - half) / scale > tolerance) {
        ++report.skipped;
        continue;
      }
      ++report.checked;
      const double denom = std::max({std::abs(analytic), std::abs(numeric), opt.floor});
      report.max_rel_error = std::max(report.max_rel_error, std::abs(analytic - numeric) / denom);
    }
  }
  report.passed = report.checked > 0 && report.max_rel_error < tolerance;
  return report;
}

}  // namespace nsl::synth
