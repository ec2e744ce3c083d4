#include "nsl/synth/scene.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <random>
#include <sstream>

#include "nsl/diffmath/errors.hpp"
#include "nsl/synth/keyvalue.hpp"

namespace nsl::synth {

namespace {

constexpr double kSkyLevel = 0.1;

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(salt), static_cast<std::uint32_t>(salt >> 32)};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

// Texture of one layer, stored over the layer's region and sampled with
// linear interpolation along x.
class LayerTexture {
 public:
  LayerTexture(const Layer& layer, const SceneSpec& spec, std::uint64_t seed)
      : layer_(layer), width_(layer.x1 - layer.x0), height_(layer.y1 - layer.y0), texels_({3, height_, width_}) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    switch (layer.texture) {
      case Texture::kRandomDot: {
        const std::size_t s = spec.dot_size;
        const std::size_t gw = (width_ + s - 1) / s, gh = (height_ + s - 1) / s;
        Tensor dots({3, gh, gw});
        for (double& v : dots.data()) v = unit(rng);
        for (std::size_t c = 0; c < 3; ++c)
          for (std::size_t y = 0; y < height_; ++y)
            for (std::size_t x = 0; x < width_; ++x) texels_.at(c, y, x) = dots.at(c, y / s, x / s);
        break;
      }
      case Texture::kGradient: {
        double from[3], to[3];
        for (std::size_t c = 0; c < 3; ++c) {
          from[c] = unit(rng);
          to[c] = unit(rng);
        }
        for (std::size_t c = 0; c < 3; ++c)
          for (std::size_t y = 0; y < height_; ++y)
            for (std::size_t x = 0; x < width_; ++x) {
              const double t = width_ > 1 ? static_cast<double>(x) / static_cast<double>(width_ - 1) : 0.0;
              texels_.at(c, y, x) = from[c] + (to[c] - from[c]) * t;
            }
        break;
      }
      case Texture::kFlatNoise: {
        std::uniform_real_distribution<double> jitter(-spec.sky_amplitude, spec.sky_amplitude);
        for (std::size_t y = 0; y < height_; ++y)
          for (std::size_t x = 0; x < width_; ++x) {
            const double v = kSkyLevel + jitter(rng);
            for (std::size_t c = 0; c < 3; ++c) texels_.at(c, y, x) = v;
          }
        break;
      }
    }
  }

  // Colour at left-image column u (continuous, within the region) and row y.
  double sample(std::size_t c, std::size_t y, double u) const {
    const double rel = std::clamp(u - static_cast<double>(layer_.x0), 0.0, static_cast<double>(width_ - 1));
    const auto i0 = static_cast<std::size_t>(std::floor(rel));
    const std::size_t i1 = std::min(i0 + 1, width_ - 1);
    const double f = rel - static_cast<double>(i0);
    const std::size_t row = y - layer_.y0;
    return texels_.at(c, row, i0) * (1.0 - f) + texels_.at(c, row, i1) * f;
  }

 private:
  Layer layer_;
  std::size_t width_, height_;
  Tensor texels_;
};

bool covers_left(const Layer& l, double x, std::size_t y) {
  return y >= l.y0 && y < l.y1 && x >= static_cast<double>(l.x0) && x < static_cast<double>(l.x1);
}

bool covers_right(const Layer& l, double x, std::size_t y) { return covers_left(l, x - l.disparity, y); }

int top_left(const std::vector<Layer>& layers, double x, std::size_t y) {
  for (std::size_t k = layers.size(); k-- > 0;)
    if (covers_left(layers[k], x, y)) return static_cast<int>(k);
  return -1;
}

int top_right(const std::vector<Layer>& layers, double x, std::size_t y) {
  for (std::size_t k = layers.size(); k-- > 0;)
    if (covers_right(layers[k], x, y)) return static_cast<int>(k);
  return -1;
}

}  // namespace

const char* texture_name(Texture t) {
  switch (t) {
    case Texture::kRandomDot: return "random-dot";
    case Texture::kGradient: return "gradient";
    case Texture::kFlatNoise: return "flat-noise";
  }
  return "?";
}

Texture parse_texture(const std::string& name) {
  if (name == "random-dot") return Texture::kRandomDot;
  if (name == "gradient") return Texture::kGradient;
  if (name == "flat-noise") return Texture::kFlatNoise;
  throw ConfigError("unknown texture '" + name + "' (random-dot, gradient, flat-noise)");
}

void SceneSpec::validate() const {
  if (height == 0 || width == 0) throw ConfigError("scene size must be positive");
  if (layers.empty()) throw ConfigError("scene needs at least one layer");
  const double max_d = static_cast<double>(width) / 4.0;
  for (std::size_t k = 0; k < layers.size(); ++k) {
    const Layer& l = layers[k];
    const std::string tag = "layer " + std::to_string(k) + ": ";
    if (!(l.disparity >= 0.0 && l.disparity <= max_d)) {
      throw ConfigError(tag + "disparity " + std::to_string(l.disparity) + " outside [0, W/4]");
    }
    if (l.x0 >= l.x1 || l.y0 >= l.y1 || l.x1 > width || l.y1 > height) throw ConfigError(tag + "region out of bounds");
  }
  if (!(noise >= 0.0)) throw ConfigError("noise must be >= 0");
  if (!(gain > 0.0) || !std::isfinite(offset)) throw ConfigError("gain must be > 0 and offset finite");
  if (dot_size == 0) throw ConfigError("dot_size must be >= 1");
  if (!(sky_amplitude >= 0.0 && sky_amplitude <= kSkyLevel)) throw ConfigError("sky_amplitude must lie in [0, 0.1]");
  if (!(baseline > 0.0) || !(focal > 0.0)) throw ConfigError("baseline and focal must be > 0");
}

DatasetItem gen_scene(const SceneSpec& spec) {
  spec.validate();
  const std::size_t h = spec.height, w = spec.width;
  std::vector<LayerTexture> textures;
  for (std::size_t k = 0; k < spec.layers.size(); ++k) {
    textures.emplace_back(spec.layers[k], spec, mix_seed(spec.seed, k + 1));
  }

  DatasetItem item;
  item.left = Tensor({3, h, w});
  item.right = Tensor({3, h, w});
  SceneTruth truth{Tensor({h, w}), Tensor({h, w}), Tensor({h, w}, -1.0)};
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double xd = static_cast<double>(x);
      const int kl = top_left(spec.layers, xd, y);
      if (kl >= 0) {
        const Layer& l = spec.layers[static_cast<std::size_t>(kl)];
        for (std::size_t c = 0; c < 3; ++c) item.left.at(c, y, x) = textures[static_cast<std::size_t>(kl)].sample(c, y, xd);
        truth.disparity.at(y, x) = l.disparity;
        truth.texture.at(y, x) = static_cast<double>(l.texture);
        const double xr = xd + l.disparity;
        const bool inside = xr <= static_cast<double>(w - 1);
        const bool visible = inside && top_right(spec.layers, std::floor(xr), y) == kl &&
                             top_right(spec.layers, std::ceil(xr), y) == kl;
        truth.valid.at(y, x) = visible ? 1.0 : 0.0;
      }
      const int kr = top_right(spec.layers, xd, y);
      if (kr >= 0) {
        const Layer& l = spec.layers[static_cast<std::size_t>(kr)];
        for (std::size_t c = 0; c < 3; ++c) {
          item.right.at(c, y, x) = textures[static_cast<std::size_t>(kr)].sample(c, y, xd - l.disparity);
        }
      }
    }
  }

  std::mt19937_64 rng(mix_seed(spec.seed, 0));
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (double& v : item.right.data()) v = spec.gain * v + spec.offset;
  if (spec.noise > 0.0) {
    for (double& v : item.left.data()) v += spec.noise * gauss(rng);
    for (double& v : item.right.data()) v += spec.noise * gauss(rng);
  }
  for (double& v : item.left.data()) v = std::clamp(v, 0.0, 1.0);
  for (double& v : item.right.data()) v = std::clamp(v, 0.0, 1.0);

  item.rig = losses::StereoRig::rectified(spec.baseline, spec.focal, static_cast<double>(w) / 2.0,
                                          static_cast<double>(h) / 2.0);
  losses::DepthMap depth = losses::disparity_to_depth(truth.disparity, item.rig);
  for (std::size_t i = 0; i < depth.valid.numel(); ++i) {
    depth.valid[i] *= truth.valid[i];
    if (depth.valid[i] == 0.0) depth.depth[i] = 0.0;
  }
  item.gt = GroundTruthDepth{depth.depth, depth.valid};
  item.truth = std::move(truth);
  return item;
}

SceneSpec random_scene_spec(const RandomSceneOptions& o, std::uint64_t seed) {
  if (o.height == 0 || o.width == 0) throw ConfigError("scene size must be positive");
  if (!(o.min_disparity >= 0.0 && o.min_disparity <= o.max_disparity)) {
    throw ConfigError("disparity range must satisfy 0 <= min <= max");
  }
  if (!(o.sky_fraction >= 0.0 && o.sky_fraction < 1.0)) throw ConfigError("sky_fraction must lie in [0, 1)");
  std::mt19937_64 rng(mix_seed(seed, 0x5ce7e));
  auto disparity = [&] {
    if (o.integer_disparity) {
      std::uniform_int_distribution<long> d(std::lround(std::ceil(o.min_disparity)),
                                            std::lround(std::floor(o.max_disparity)));
      return static_cast<double>(d(rng));
    }
    return std::uniform_real_distribution<double>(o.min_disparity, o.max_disparity)(rng);
  };

  SceneSpec s;
  s.height = o.height;
  s.width = o.width;
  s.noise = o.noise;
  s.gain = o.gain;
  s.offset = o.offset;
  s.dot_size = o.dot_size;
  s.sky_amplitude = o.sky_amplitude;
  s.baseline = o.baseline;
  s.focal = o.focal;
  s.seed = seed;
  const auto sky_rows = static_cast<std::size_t>(std::round(o.sky_fraction * static_cast<double>(o.height)));

  // Background first, the nearest layers last.
  std::vector<Layer> rects;
  rects.push_back({disparity(), Texture::kRandomDot, 0, sky_rows, o.width, o.height});
  const std::size_t free_rows = o.height - sky_rows;
  for (std::size_t i = 0; i < o.rectangles && free_rows >= 4 && o.width >= 4; ++i) {
    std::uniform_int_distribution<std::size_t> rw(o.width / 6 + 1, o.width / 2), rh(free_rows / 6 + 1, free_rows / 2);
    const std::size_t w = rw(rng), h = rh(rng);
    std::uniform_int_distribution<std::size_t> px(0, o.width - w), py(sky_rows, o.height - h);
    const std::size_t x0 = px(rng), y0 = py(rng);
    rects.push_back({disparity(), Texture::kRandomDot, x0, y0, x0 + w, y0 + h});
  }
  std::stable_sort(rects.begin() + 1, rects.end(),
                   [](const Layer& a, const Layer& b) { return a.disparity < b.disparity; });
  if (sky_rows > 0) s.layers.push_back({o.min_disparity, Texture::kFlatNoise, 0, 0, o.width, sky_rows});
  for (const Layer& l : rects) s.layers.push_back(l);
  return s;
}

SceneSetSpec parse_scene_set(const std::string& text) {
  SceneSetSpec set;
  RandomSceneOptions& r = set.random;
  try {
    for (const auto& [key, value] : parse_key_values(text)) {
      if (key == "height") r.height = to_u64(key, value);
      else if (key == "width") r.width = to_u64(key, value);
      else if (key == "count") set.count = to_u64(key, value);
      else if (key == "seed") set.seed = to_u64(key, value);
      else if (key == "noise") r.noise = to_double(key, value);
      else if (key == "gain") r.gain = to_double(key, value);
      else if (key == "offset") r.offset = to_double(key, value);
      else if (key == "dot_size") r.dot_size = to_u64(key, value);
      else if (key == "sky_amplitude") r.sky_amplitude = to_double(key, value);
      else if (key == "baseline") r.baseline = to_double(key, value);
      else if (key == "focal") r.focal = to_double(key, value);
      else if (key == "rectangles") r.rectangles = to_u64(key, value);
      else if (key == "min_disparity") r.min_disparity = to_double(key, value);
      else if (key == "max_disparity") r.max_disparity = to_double(key, value);
      else if (key == "integer_disparity") r.integer_disparity = to_bool(key, value);
      else if (key == "sky_fraction") r.sky_fraction = to_double(key, value);
      else if (key == "layer") {
        std::istringstream in(value);
        Layer l;
        std::string tex;
        if (!(in >> l.disparity >> tex >> l.x0 >> l.y0 >> l.x1 >> l.y1) || !(in >> std::ws).eof()) {
          throw ConfigError("layer: expected '<disparity> <texture> <x0> <y0> <x1> <y1>', got '" + value + "'");
        }
        l.texture = parse_texture(tex);
        set.layers.push_back(l);
      } else {
        throw ConfigError("unknown scene key '" + key + "'");
      }
    }
  } catch (const FormatError& e) {
    throw ConfigError(e.what());
  }
  if (set.count == 0) throw ConfigError("count must be >= 1");
  // Surface range errors before any scene is drawn.
  scene_spec_at(set, 0).validate();
  return set;
}

SceneSpec scene_spec_at(const SceneSetSpec& set, std::size_t index) {
  const std::uint64_t seed = set.seed + index;
  if (set.layers.empty()) return random_scene_spec(set.random, seed);
  const RandomSceneOptions& r = set.random;
  SceneSpec s;
  s.height = r.height;
  s.width = r.width;
  s.layers = set.layers;
  s.noise = r.noise;
  s.gain = r.gain;
  s.offset = r.offset;
  s.dot_size = r.dot_size;
  s.sky_amplitude = r.sky_amplitude;
  s.baseline = r.baseline;
  s.focal = r.focal;
  s.seed = seed;
  return s;
}

std::string item_name(std::size_t index) {
  std::ostringstream os;
  os << std::setw(4) << std::setfill('0') << index + 1;
  return os.str();
}

}  // namespace nsl::synth
