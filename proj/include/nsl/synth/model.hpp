#pragma once

// The full stereo network (feature provider, projection head, matcher) and
// its training objective on one stereo pair.

#include <cstdint>
#include <optional>
#include <string>

#include "nsl/diffmath/gradcheck.hpp"
#include "nsl/diffmath/params.hpp"
#include "nsl/features/features.hpp"
#include "nsl/losses/losses.hpp"
#include "nsl/matcher/matcher.hpp"

namespace nsl::synth {

struct ModelConfig {
  std::size_t height = 64;
  std::size_t width = 96;
  features::FeatureSource encoder = features::FeatureSource::kToyEncoder;
  // Channels of file-provided features; the toy encoder always yields 64.
  std::size_t feature_channels = features::kToyChannels;
  bool train_encoder = false;
  matcher::MatcherConfig matcher;

  std::size_t raw_channels() const;
  // ConfigError for sizes not divisible by 8 or zero dimensions.
  void validate() const;
  // Canonical "key = value" lines describing every field.
  std::string describe() const;
};

// FNV-1a 64 of describe(), as 16 hex digits.
std::string config_hash(const ModelConfig& config);

ad::ParameterStore init_model(const ModelConfig& config, std::uint64_t seed);
// Whether a parameter is optimised under the config.
bool is_trainable(const ModelConfig& config, const std::string& name);

struct StereoInput {
  Tensor left;   // [3 x H x W]
  Tensor right;  // [3 x H x W]
  // Required when the config reads features from files.
  const features::RawFeatureMap* features_left = nullptr;
  const features::RawFeatureMap* features_right = nullptr;
};

struct ModelOutput {
  ad::Var left;   // image on the tape
  ad::Var right;
  features::FeaturePyramid pyramid_left;
  features::FeaturePyramid pyramid_right;
  matcher::MatchResult match;
};

ModelOutput forward(ad::Binding& params, const ModelConfig& config, const StereoInput& input);

// Photometric loss on the full-resolution disparity, distance regularizer on
// the coarse and fine left-feature distances (averaged), smoothness on the
// full-resolution disparity.
losses::LossParts model_loss(const ModelOutput& out, const losses::LossConfig& config);

// Central-difference check of d(total loss)/d(parameter) through the whole
// network (toy encoder trained, transformer on) on a batch of two generated
// 16 x 16 scenes. Parameters are jittered away from their zero inits first so
// every path carries gradient. Up to coords_per_tensor entries of every
// parameter tensor are checked; kinks are skipped as in ad::grad_check.
ad::GradCheckReport pipeline_gradcheck(std::uint64_t seed, double tolerance = 1e-3,
                                       std::size_t coords_per_tensor = 3);

}  // namespace nsl::synth
