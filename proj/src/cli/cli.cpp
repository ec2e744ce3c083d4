#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>

#include "nsl/cli/cli.hpp"
#include "nsl/diffmath/errors.hpp"
#include "nsl/losses/losses.hpp"
#include "nsl/matcher/matcher.hpp"
#include "nsl/synth/dataset.hpp"
#include "nsl/synth/image_io.hpp"

namespace nsl::cli {

namespace fs = std::filesystem;

namespace {

constexpr int kOk = 0;
constexpr int kUserError = 1;
constexpr int kInternalError = 2;

const std::vector<std::string> kModelKeys = {"height", "width", "encoder", "feature_channels", "train_encoder", "D",
                                             "zeta", "radius", "upsample_hidden", "use_transformer"};

std::string dashed(std::string key) {
  for (char& c : key)
    if (c == '_') c = '-';
  return key;
}

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw FormatError("cannot write " + path.string());
}

void require(const std::string& value, const std::string& key, const std::string& sub) {
  if (value.empty()) throw ConfigError(sub + " needs --" + dashed(key));
}

std::vector<synth::DatasetItem> load_items(const std::string& root, std::ostream& err, const fs::path& out) {
  const synth::Dataset ds(root);
  for (const std::string& s : ds.skipped()) err << "skipped: " << s << "\n";
  if (!ds.skipped().empty()) {
    std::string report;
    for (const std::string& s : ds.skipped()) report += s + "\n";
    write_text(out / "skipped.txt", report);
  }
  std::vector<synth::DatasetItem> items;
  for (std::size_t i = 0; i < ds.size(); ++i) items.push_back(ds.load(i));
  if (items.empty()) throw ConfigError("dataset " + root + " has no stereo pairs");
  return items;
}

// Checkpoint config, with any model key the user set explicitly required to
// agree with it.
synth::Checkpoint open_checkpoint(const RunConfig& cfg) {
  synth::Checkpoint ck = synth::load_checkpoint(cfg.checkpoint);
  const synth::ModelConfig user = train_config(cfg).model;
  synth::ModelConfig requested = ck.model;
  for (const std::string& key : kModelKeys) {
    if (!cfg.explicit_keys.count(key)) continue;
    if (key == "height") requested.height = user.height;
    else if (key == "width") requested.width = user.width;
    else if (key == "encoder") requested.encoder = user.encoder;
    else if (key == "feature_channels") requested.feature_channels = user.feature_channels;
    else if (key == "train_encoder") requested.train_encoder = user.train_encoder;
    else if (key == "D") requested.matcher.dim = user.matcher.dim;
    else if (key == "zeta") requested.matcher.zeta = user.matcher.zeta;
    else if (key == "radius") requested.matcher.radius = user.matcher.radius;
    else if (key == "upsample_hidden") requested.matcher.upsample_hidden = user.matcher.upsample_hidden;
    else if (key == "use_transformer") requested.matcher.use_transformer = user.matcher.use_transformer;
  }
  return synth::load_checkpoint(cfg.checkpoint, requested);
}

int cmd_synth(const RunConfig& cfg, std::ostream& out) {
  const synth::SceneSetSpec set = synth::parse_scene_set(synth::read_text_file(cfg.spec));
  std::vector<synth::DatasetItem> items;
  out << "name\tlayers\tvalid_fraction\tmin_disparity\tmax_disparity\n";
  for (std::size_t i = 0; i < set.count; ++i) {
    const synth::SceneSpec spec = synth::scene_spec_at(set, i);
    synth::DatasetItem it = synth::gen_scene(spec);
    it.name = synth::item_name(i);
    double valid = 0, lo = 1e300, hi = -1e300;
    for (double v : it.truth->valid.data()) valid += v;
    for (double d : it.truth->disparity.data()) {
      lo = std::min(lo, d);
      hi = std::max(hi, d);
    }
    out << it.name << '\t' << spec.layers.size() << '\t'
        << valid / static_cast<double>(it.truth->valid.numel()) << '\t' << lo << '\t' << hi << '\n';
    items.push_back(std::move(it));
  }
  synth::write_dataset(cfg.out, items);
  return kOk;
}

int cmd_train(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  const synth::TrainConfig tc = train_config(cfg);
  const std::vector<synth::DatasetItem> items = load_items(cfg.dataset, err, cfg.out);
  synth::TrainState state;
  if (!cfg.checkpoint.empty()) {
    state = synth::load_checkpoint(cfg.checkpoint, tc.model).state;
  } else {
    state = synth::init_training(tc);
  }
  const std::size_t total = tc.total_steps(items.size());
  out << "step\tphoto\treg\tsmooth\ttotal\n" << std::setprecision(8);
  const synth::TrainResult r = synth::train(tc, items, std::move(state), total, [&](const synth::LossRecord& l) {
    out << l.step << '\t' << l.photo << '\t' << l.reg << '\t' << l.smooth << '\t' << l.total << '\n';
  });
  const fs::path ck = fs::path(cfg.out) / "checkpoint";
  synth::save_checkpoint(ck, tc, r.state);
  write_text(fs::path(cfg.out) / "loss_trace.csv", synth::format_trace(r.trace));
  if (r.aborted) {
    err << "training aborted at " << r.abort_reason << "\nlast good checkpoint (step " << r.state.step
        << ") written to " << ck.string() << "\n";
    return kInternalError;
  }
  return kOk;
}

int cmd_infer(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  const synth::Checkpoint ck = open_checkpoint(cfg);
  const std::vector<synth::DatasetItem> items = load_items(cfg.dataset, err, cfg.out);
  out << "name\theight\twidth\tmean_disparity\tmask_fraction\n";
  for (const synth::DatasetItem& it : items) {
    const synth::Inference r = synth::infer(ck.state.params, ck.model, it);
    synth::write_inference(cfg.out, it.name, r);
    double mean = 0, mask = 0;
    for (double v : r.disparity.data()) mean += v;
    for (double v : r.mask.data()) mask += v;
    const auto n = static_cast<double>(r.disparity.numel());
    out << it.name << '\t' << r.disparity.dim(0) << '\t' << r.disparity.dim(1) << '\t' << mean / n << '\t'
        << mask / n << '\n';
  }
  return kOk;
}

int cmd_eval(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  const synth::Checkpoint ck = open_checkpoint(cfg);
  const std::vector<synth::DatasetItem> items = load_items(cfg.dataset, err, cfg.out);
  std::size_t with_gt = 0;
  for (const auto& it : items) with_gt += it.gt ? 1 : 0;
  if (with_gt == 0) throw ConfigError("dataset " + cfg.dataset + " has no gt/ depth maps");
  const metrics::MetricReport report =
      synth::evaluate(synth::model_predictor(ck.state.params, ck.model), items, cfg.bins, cfg.max_depth);
  const std::string table = metrics::format_report(report);
  out << table;
  write_text(fs::path(cfg.out) / "metrics.tsv", table);
  write_text(fs::path(cfg.out) / "metrics.csv", metrics::report_csv(report));
  return kOk;
}

int cmd_gradcheck(const RunConfig& cfg, std::ostream& out) {
  std::vector<ad::GradCheckCase> cases = ad::core_gradchecks();
  for (auto& c : matcher::matcher_gradchecks()) cases.push_back(std::move(c));
  for (auto& c : losses::loss_gradchecks()) cases.push_back(std::move(c));
  std::ostringstream table;
  table << "op\tchecked\tskipped\tmax_rel_err\tresult\n" << std::setprecision(3);
  bool all = true;
  auto row = [&](const ad::GradCheckReport& r) {
    all = all && r.passed;
    table << r.name << '\t' << r.checked << '\t' << r.skipped << '\t' << r.max_rel_error << '\t'
          << (r.passed ? "pass" : "FAIL") << '\n';
  };
  for (const auto& c : cases) row(ad::run_case(c, cfg.seed));
  row(synth::pipeline_gradcheck(cfg.seed));
  out << table.str();
  write_text(fs::path(cfg.out) / "gradcheck.tsv", table.str());
  return all ? kOk : kInternalError;
}

int dispatch(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  cfg.validate();
  const std::string& sub = cfg.subcommand;
  if (sub == "synth") require(cfg.spec, "spec", sub);
  if (sub == "train" || sub == "infer" || sub == "eval") require(cfg.dataset, "dataset", sub);
  if (sub == "infer" || sub == "eval") require(cfg.checkpoint, "checkpoint", sub);
  write_text(fs::path(cfg.out) / "run_manifest.txt", run_manifest(cfg));
  if (cfg.subcommand == "synth") return cmd_synth(cfg, out);
  if (cfg.subcommand == "train") return cmd_train(cfg, out, err);
  if (cfg.subcommand == "infer") return cmd_infer(cfg, out, err);
  if (cfg.subcommand == "eval") return cmd_eval(cfg, out, err);
  return cmd_gradcheck(cfg, out);
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Self-supervised stereo matching: train, infer, eval, synth, gradcheck", "nsl"};
  app.require_subcommand(1, 1);
  std::string config_path;
  std::map<std::string, std::string> flags;
  std::map<std::string, std::map<std::string, CLI::Option*>> options;
  const std::pair<const char*, const char*> subs[] = {
      {"train", "train the network on a dataset directory"},
      {"infer", "write disparity and mask files for every pair of a dataset"},
      {"eval", "score a checkpoint against gt depth"},
      {"synth", "generate a synthetic dataset from a scene spec"},
      {"gradcheck", "compare analytic and numeric gradients of every op"}};
  for (const auto& [name, help] : subs) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_path, "key = value config file");
    for (const std::string& key : config_keys()) {
      options[name][key] = sub->add_option("--" + dashed(key), flags[key], "config key " + key);
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    const auto chosen = app.get_subcommands();
    out << (chosen.empty() ? app.help() : chosen.front()->help());
    return kOk;
  } catch (const CLI::ParseError& e) {
    const auto chosen = app.get_subcommands();
    err << "error: " << e.what() << "\n\n" << (chosen.empty() ? app.help() : chosen.front()->help());
    return kUserError;
  }

  try {
    RunConfig cfg;
    const std::string sub = app.get_subcommands().front()->get_name();
    if (!config_path.empty()) {
      try {
        apply(cfg, synth::parse_key_values(synth::read_text_file(config_path)), "file");
      } catch (const FormatError& e) {
        throw ConfigError(config_path + ": " + e.what());
      }
    }
    if (const char* env = std::getenv("NSL_SEED")) apply(cfg, {{"seed", env}}, "env");
    synth::KeyValues given;
    for (const std::string& key : config_keys())
      if (options[sub][key]->count() > 0) given.emplace_back(key, flags[key]);
    apply(cfg, given, "flag");
    cfg.subcommand = sub;
    return dispatch(cfg, out, err);
  } catch (const TrainingError& e) {
    err << "error: " << e.what() << "\n";
    return kInternalError;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kUserError;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return kInternalError;
  }
}

int run(int argc, const char* const* argv) { return run(argc, argv, std::cout, std::cerr); }

}  // namespace nsl::cli
