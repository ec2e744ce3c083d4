#pragma once

// Command-line front end: train / infer / eval / synth / gradcheck.
//
// Settings come from, in increasing priority: built-in defaults, a key=value
// config file (--config), the NSL_SEED environment variable (seed only), and
// command-line flags. Every flag --some-key has the config key some_key.
//
// Exit codes: 0 success, 1 user error (bad flag, config, input file or
// checkpoint), 2 internal error (failed gradient check, aborted training,
// unexpected exception).

#include <iosfwd>
#include <set>
#include <string>
#include <vector>

#include "nsl/synth/keyvalue.hpp"
#include "nsl/synth/train.hpp"

namespace nsl::cli {

inline constexpr const char* kCodeVersion = "0.1.0";

struct RunConfig {
  std::string subcommand;
  std::string dataset;
  std::string out = "nsl_out";
  std::string checkpoint;
  std::string spec;
  std::string encoder = "toy";  // toy | files
  std::size_t height = 64;
  std::size_t width = 96;
  std::size_t feature_channels = 64;
  bool train_encoder = false;
  std::size_t D = 128;
  double zeta = 0.2;
  std::size_t radius = 8;
  std::size_t upsample_hidden = 64;
  bool use_transformer = true;
  double gamma = 2.0;
  double alpha = 0.15;
  double beta1 = 1.0;
  double beta2 = 0.1;
  double lr = 1e-4;
  std::size_t decay_steps = 0;
  std::size_t batch = 2;
  std::size_t steps = 300;
  std::size_t epochs = 0;
  std::size_t bins = 10;
  double max_depth = 50.0;
  std::uint64_t seed = 0;

  // Keys set by a config file, the environment or a flag.
  std::set<std::string> explicit_keys;
  std::string seed_source = "default";

  // ConfigError for values outside their documented ranges.
  void validate() const;
};

// Every config key, in file order.
const std::vector<std::string>& config_keys();

// ConfigError for unknown keys or malformed values.
void apply(RunConfig& config, const synth::KeyValues& values, const std::string& origin);
// key = value lines for every key (subcommand first, then config_keys()).
std::string format_config(const RunConfig& config);
RunConfig parse_config(const std::string& text);

// Full-scale training recipe: batch 8, 20 epochs, 192 x 320, lr 1e-4.
RunConfig reference_recipe();

synth::TrainConfig train_config(const RunConfig& config);

// Reproducibility manifest: code version, config and seed; no timestamps.
std::string run_manifest(const RunConfig& config);

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run(int argc, const char* const* argv);

}  // namespace nsl::cli
