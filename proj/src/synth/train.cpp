#include "nsl/synth/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include "nsl/diffmath/errors.hpp"
#include "nsl/diffmath/ops.hpp"
#include "nsl/features/tensor_file.hpp"
#include "nsl/synth/image_io.hpp"
#include "nsl/synth/keyvalue.hpp"

namespace nsl::synth {

namespace fs = std::filesystem;
using ad::Var;

namespace {

constexpr const char* kCheckpointFormat = "nsl-checkpoint";
constexpr int kCheckpointVersion = 1;

StereoInput input_of(const DatasetItem& item) {
  StereoInput in{item.left, item.right};
  if (item.features_left) in.features_left = &*item.features_left;
  if (item.features_right) in.features_right = &*item.features_right;
  return in;
}

ModelConfig parse_model(const std::map<std::string, std::string>& kv) {
  auto get = [&](const std::string& key) -> const std::string& {
    const auto it = kv.find("model." + key);
    if (it == kv.end()) throw FormatError("manifest: missing model." + key);
    return it->second;
  };
  ModelConfig m;
  m.height = to_u64("height", get("height"));
  m.width = to_u64("width", get("width"));
  const std::string& enc = get("encoder");
  if (enc == "toy") m.encoder = features::FeatureSource::kToyEncoder;
  else if (enc == "files") m.encoder = features::FeatureSource::kFile;
  else throw FormatError("manifest: unknown encoder '" + enc + "'");
  m.feature_channels = to_u64("feature_channels", get("feature_channels"));
  m.train_encoder = to_bool("train_encoder", get("train_encoder"));
  m.matcher.dim = to_u64("D", get("D"));
  m.matcher.zeta = to_double("zeta", get("zeta"));
  m.matcher.radius = to_u64("radius", get("radius"));
  m.matcher.upsample_hidden = to_u64("upsample_hidden", get("upsample_hidden"));
  m.matcher.use_transformer = to_bool("use_transformer", get("use_transformer"));
  return m;
}

}  // namespace

void TrainConfig::validate() const {
  model.validate();
  loss.validate();
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be > 0");
  if (batch == 0) throw ConfigError("batch must be >= 1");
  if (steps == 0 && epochs == 0) throw ConfigError("steps or epochs must be >= 1");
}

std::size_t TrainConfig::total_steps(std::size_t items) const {
  if (epochs == 0) return steps;
  return epochs * ((items + batch - 1) / batch);
}

double TrainConfig::lr_at(std::size_t step) const {
  if (decay_steps == 0) return lr;
  const double t = std::min(1.0, static_cast<double>(step) / static_cast<double>(decay_steps));
  return 0.5 * lr * (1.0 + std::cos(std::numbers::pi * t));
}

TrainState init_training(const TrainConfig& config) {
  config.validate();
  TrainState s;
  s.params = init_model(config.model, config.seed);
  ad::AdamConfig ac;
  ac.lr = config.lr;
  s.adam = ad::Adam(ac);
  return s;
}

std::vector<std::size_t> batch_indices(const TrainConfig& config, std::size_t items, std::size_t step) {
  if (items == 0) throw ContractError("training needs a non-empty dataset");
  const std::size_t per_epoch = (items + config.batch - 1) / config.batch;
  const std::size_t epoch = step / per_epoch, slot = step % per_epoch;
  std::seed_seq seq{static_cast<std::uint32_t>(config.seed), static_cast<std::uint32_t>(config.seed >> 32),
                    static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(epoch >> 32)};
  std::mt19937_64 rng(seq);
  std::vector<std::size_t> perm(items);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  // Fisher-Yates with an explicit draw so the order does not depend on the
  // standard library's shuffle.
  for (std::size_t i = items; i > 1; --i) std::swap(perm[i - 1], perm[rng() % i]);
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < config.batch; ++j) out.push_back(perm[(slot * config.batch + j) % items]);
  return out;
}

LossRecord train_step(const TrainConfig& config, TrainState& state, const std::vector<const DatasetItem*>& batch) {
  if (batch.empty()) throw ContractError("empty batch");
  ad::Tape tape;
  ad::Binding bind(tape, state.params, [&](const std::string& n) { return is_trainable(config.model, n); });
  Var photo, reg, smooth;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const ModelOutput out = forward(bind, config.model, input_of(*batch[i]));
    const losses::LossParts p = model_loss(out, config.loss);
    photo = i == 0 ? p.photo : photo + p.photo;
    reg = i == 0 ? p.reg : reg + p.reg;
    smooth = i == 0 ? p.smooth : smooth + p.smooth;
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  const losses::LossParts mean_parts{photo * inv, reg * inv, smooth * inv};
  Var total = losses::total_loss(mean_parts, config.loss);
  tape.backward(total);
  const std::map<std::string, Tensor> grads = bind.gradients();
  for (const auto& [name, g] : grads) {
    if (!g.all_finite()) throw TrainingError("non-finite gradient for " + name);
  }
  state.adam.set_lr(config.lr_at(state.step));
  state.adam.step(state.params, grads);
  ++state.step;
  return {state.step, mean_parts.photo.value().item(), mean_parts.reg.value().item(),
          mean_parts.smooth.value().item(), total.value().item()};
}

TrainResult train(const TrainConfig& config, const std::vector<DatasetItem>& items, TrainState state,
                  std::size_t until, const StepCallback& on_step) {
  config.validate();
  if (items.empty()) throw ContractError("training needs a non-empty dataset");
  TrainResult r;
  r.state = std::move(state);
  while (r.state.step < until) {
    std::vector<const DatasetItem*> batch;
    for (std::size_t i : batch_indices(config, items.size(), r.state.step)) batch.push_back(&items[i]);
    TrainState next = r.state;
    try {
      const LossRecord rec = train_step(config, next, batch);
      r.trace.push_back(rec);
      if (on_step) on_step(rec);
    } catch (const TrainingError& e) {
      r.aborted = true;
      r.abort_reason = "step " + std::to_string(r.state.step + 1) + ": " + e.what();
      break;
    }
    r.state = std::move(next);
  }
  return r;
}

void save_checkpoint(const fs::path& dir, const TrainConfig& config, const TrainState& state) {
  fs::create_directories(dir);
  std::vector<features::TensorSlot> slots;
  std::ostringstream man;
  man << "format = " << kCheckpointFormat << "\nversion = " << kCheckpointVersion
      << "\nconfig_hash = " << config_hash(config.model) << "\nstep = " << state.step << "\n";
  std::istringstream desc(config.model.describe());
  for (std::string line; std::getline(desc, line);) man << "model." << line << "\n";
  for (const auto& [name, t] : state.params.all()) {
    slots.push_back({"param/" + name, t, features::DType::kF64});
    man << "param = " << name << " " << shape_str(t.shape()) << "\n";
  }
  for (const auto& [name, s] : state.adam.states()) {
    slots.push_back({"adam.m/" + name, s.m, features::DType::kF64});
    slots.push_back({"adam.v/" + name, s.v, features::DType::kF64});
    slots.push_back({"adam.step/" + name, Tensor::scalar(static_cast<double>(s.step)), features::DType::kF64});
  }
  const ad::AdamConfig& ac = state.adam.config();
  slots.push_back({"adam.config", Tensor({4}, {ac.lr, ac.beta1, ac.beta2, ac.eps}), features::DType::kF64});
  features::write_tensor_file(dir / "params.nslt", slots);
  std::ofstream(dir / "manifest.txt") << man.str();
}

Checkpoint load_checkpoint(const fs::path& dir) {
  const KeyValues kv = parse_key_values(read_text_file((dir / "manifest.txt").string()));
  std::map<std::string, std::string> fields;
  std::vector<std::string> param_lines;
  for (const auto& [k, v] : kv) {
    if (k == "param") param_lines.push_back(v);
    else fields[k] = v;
  }
  if (fields["format"] != kCheckpointFormat) throw FormatError("not a checkpoint manifest: " + dir.string());
  if (fields["version"] != std::to_string(kCheckpointVersion)) {
    throw VersionError("checkpoint version " + fields["version"] + " is not supported");
  }
  Checkpoint ck;
  ck.model = parse_model(fields);
  ck.hash = fields["config_hash"];
  if (ck.hash != config_hash(ck.model)) throw VersionError("checkpoint config hash does not match its config");

  const std::vector<features::TensorSlot> slots = features::read_tensor_file(dir / "params.nslt");
  const ad::ParameterStore fresh = init_model(ck.model, 0);
  if (param_lines.size() != fresh.all().size()) {
    throw VersionError("checkpoint holds " + std::to_string(param_lines.size()) + " parameters, config expects " +
                       std::to_string(fresh.all().size()));
  }
  for (const auto& [name, t] : fresh.all()) {
    const Tensor& stored = features::find_slot(slots, "param/" + name).tensor;
    if (stored.shape() != t.shape()) {
      throw VersionError("parameter " + name + " has shape " + shape_str(stored.shape()) + ", config expects " +
                         shape_str(t.shape()));
    }
    ck.state.params.add(name, stored);
  }
  const Tensor& ac_t = features::find_slot(slots, "adam.config").tensor;
  ad::AdamConfig ac;
  ac.lr = ac_t[0];
  ac.beta1 = ac_t[1];
  ac.beta2 = ac_t[2];
  ac.eps = ac_t[3];
  ck.state.adam = ad::Adam(ac);
  for (const features::TensorSlot& s : slots) {
    if (s.name.rfind("adam.m/", 0) != 0) continue;
    const std::string name = s.name.substr(7);
    ad::AdamState st = ad::make_adam_state(s.tensor.shape(), ac);
    st.m = s.tensor;
    st.v = features::find_slot(slots, "adam.v/" + name).tensor;
    st.step = static_cast<std::uint64_t>(features::find_slot(slots, "adam.step/" + name).tensor.item());
    ck.state.adam.states()[name] = std::move(st);
  }
  ck.state.step = to_u64("step", fields["step"]);
  return ck;
}

Checkpoint load_checkpoint(const fs::path& dir, const ModelConfig& expected) {
  Checkpoint ck = load_checkpoint(dir);
  if (ck.hash != config_hash(expected)) {
    throw VersionError("checkpoint was written for a different model config\n-- checkpoint:\n" + ck.model.describe() +
                       "-- requested:\n" + expected.describe());
  }
  return ck;
}

std::string format_trace(const std::vector<LossRecord>& trace) {
  std::ostringstream os;
  os.precision(17);
  os << "step,photo,reg,smooth,total\n";
  for (const LossRecord& r : trace) {
    os << r.step << ',' << r.photo << ',' << r.reg << ',' << r.smooth << ',' << r.total << '\n';
  }
  return os.str();
}

Inference infer(const ad::ParameterStore& params, const ModelConfig& config, const DatasetItem& item) {
  ad::Tape tape;
  ad::Binding bind(tape, params, [](const std::string&) { return false; });
  const ModelOutput out = forward(bind, config, input_of(item));
  return {out.match.disparity.value(), out.match.mask_full};
}

void write_inference(const fs::path& dir, const std::string& stem, const Inference& result) {
  fs::create_directories(dir);
  write_pfm(dir / (stem + "_disp.pfm"), result.disparity);
  write_u16_png(dir / (stem + "_disp.png"), result.disparity, 256.0);
  write_mask_png(dir / (stem + "_mask.png"), result.mask);
}

Predictor model_predictor(const ad::ParameterStore& params, const ModelConfig& config) {
  return [&params, config](const DatasetItem& item) { return infer(params, config, item).disparity; };
}

metrics::MetricReport evaluate(const Predictor& predict, const std::vector<DatasetItem>& items, std::size_t bins,
                               double max_depth) {
  std::vector<metrics::ImageScore> scores;
  for (const DatasetItem& item : items) {
    if (!item.gt) continue;
    const Tensor disparity = predict(item);
    const losses::DepthMap depth = losses::disparity_to_depth(disparity, item.rig);
    scores.push_back(metrics::score_image(item.name, depth.depth, item.gt->depth, item.gt->valid, bins, max_depth));
  }
  return metrics::build_report(scores, bins, max_depth);
}

EndPointError end_point_error(const Tensor& pred, const Tensor& truth, const Tensor& region, double threshold) {
  if (pred.shape() != truth.shape() || region.shape() != truth.shape()) {
    throw DimensionError("end_point_error: shapes differ");
  }
  EndPointError e;
  std::size_t below = 0;
  for (std::size_t i = 0; i < truth.numel(); ++i) {
    if (region[i] == 0.0) continue;
    const double err = std::abs(pred[i] - truth[i]);
    ++e.count;
    e.mean += err;
    if (err < threshold) ++below;
  }
  if (e.count > 0) {
    e.mean /= static_cast<double>(e.count);
    e.below = static_cast<double>(below) / static_cast<double>(e.count);
  }
  return e;
}

Tensor textured_region(const SceneTruth& truth) {
  Tensor r(truth.valid.shape());
  for (std::size_t i = 0; i < r.numel(); ++i) {
    r[i] = truth.valid[i] != 0.0 && truth.texture[i] == static_cast<double>(Texture::kRandomDot) ? 1.0 : 0.0;
  }
  return r;
}

}  // namespace nsl::synth
