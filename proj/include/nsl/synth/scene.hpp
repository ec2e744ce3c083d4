#pragma once

// Synthetic rectified stereo scenes with exact ground-truth disparity.
//
// A scene is a stack of rectangular layers drawn back to front. Each layer
// carries a texture fixed to the layer and a constant disparity d, so the
// right view shows the layer shifted by +d: right(x + d) = left(x). Left
// pixels whose match is covered by a nearer layer, or falls outside the
// right image, are flagged invalid.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "nsl/diffmath/tensor.hpp"
#include "nsl/features/features.hpp"
#include "nsl/losses/losses.hpp"

namespace nsl::synth {

enum class Texture { kRandomDot = 0, kGradient = 1, kFlatNoise = 2 };

const char* texture_name(Texture t);
// ConfigError for unknown names.
Texture parse_texture(const std::string& name);

struct Layer {
  double disparity = 0.0;
  Texture texture = Texture::kRandomDot;
  // Region [x0, x1) x [y0, y1) in left-image pixels.
  std::size_t x0 = 0, y0 = 0, x1 = 0, y1 = 0;
};

struct SceneSpec {
  std::size_t height = 64;
  std::size_t width = 96;
  std::vector<Layer> layers;  // back to front
  // Std. dev. of iid Gaussian noise added to each view independently.
  double noise = 0.0;
  // right <- gain * right + offset.
  double gain = 1.0;
  double offset = 0.0;
  // Side length of the square dots of random-dot textures.
  std::size_t dot_size = 1;
  // Half-range of the flat-noise texture around its base level.
  double sky_amplitude = 0.02;
  double baseline = 0.5;
  double focal = 96.0;
  std::uint64_t seed = 0;

  // ConfigError unless every disparity lies in [0, W/4], every region is
  // non-empty and inside the image, and the numeric knobs are in range.
  void validate() const;
};

// Dense per-pixel truth of a generated scene, all [H x W].
struct SceneTruth {
  Tensor disparity;
  Tensor valid;    // 1 where the left pixel is visible in the right view
  Tensor texture;  // Texture of the frontmost layer, -1 where no layer covers
};

struct GroundTruthDepth {
  Tensor depth;  // metres, [H x W]
  Tensor valid;  // [H x W]
};

struct DatasetItem {
  std::string name;
  Tensor left;   // [3 x H x W], values in [0, 1]
  Tensor right;  // [3 x H x W]
  losses::StereoRig rig;
  std::optional<GroundTruthDepth> gt;
  std::optional<SceneTruth> truth;  // generated scenes only
  // Precomputed backbone features, when the dataset provides them.
  std::optional<features::RawFeatureMap> features_left;
  std::optional<features::RawFeatureMap> features_right;
};

DatasetItem gen_scene(const SceneSpec& spec);

struct RandomSceneOptions {
  std::size_t height = 64;
  std::size_t width = 96;
  double min_disparity = 2.0;
  double max_disparity = 8.0;
  bool integer_disparity = true;
  // Random-dot rectangles drawn over a full-frame random-dot background.
  std::size_t rectangles = 3;
  // Fraction of rows at the top covered by a flat-noise band (0 for none).
  double sky_fraction = 0.0;
  std::size_t dot_size = 1;
  double sky_amplitude = 0.02;
  double noise = 0.0;
  double gain = 1.0;
  double offset = 0.0;
  double baseline = 0.5;
  double focal = 96.0;
};

SceneSpec random_scene_spec(const RandomSceneOptions& options, std::uint64_t seed);

// Scene-set description read from a key=value text file:
//   height, width, count, seed, noise, gain, offset, dot_size, sky_amplitude,
//   baseline, focal, rectangles, min_disparity, max_disparity,
//   integer_disparity, sky_fraction
// and any number of explicit layers
//   layer = <disparity> <texture> <x0> <y0> <x1> <y1>
// Without explicit layers every scene is drawn with random_scene_spec.
struct SceneSetSpec {
  RandomSceneOptions random;
  std::vector<Layer> layers;
  std::size_t count = 1;
  std::uint64_t seed = 0;
};

// ConfigError on unknown keys or bad values.
SceneSetSpec parse_scene_set(const std::string& text);
// Spec of scene `index` of the set; scene seeds are seed + index.
SceneSpec scene_spec_at(const SceneSetSpec& set, std::size_t index);

// Zero-padded four-digit scene name ("0001" for index 0).
std::string item_name(std::size_t index);

}  // namespace nsl::synth
