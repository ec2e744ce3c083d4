#pragma once

// Two-scale feature maps for a stereo pair.
//
// Providers deliver a fine map at 1/4 and a coarse map at 1/8 of the image
// resolution (coarse dims are exactly half the fine dims). The projection
// head maps both scales to the matching dimension D with the same weights for
// left and right images.
//
// Host-side maps (RawFeatureMap) use [h x w x C] layout, matching the file
// format. Maps placed on a tape are channel-first [C x h x w].

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "nsl/diffmath/params.hpp"
#include "nsl/features/tensor_file.hpp"

namespace nsl::features {

enum class FeatureSource { kFile, kToyEncoder };

struct RawFeatureMap {
  Tensor fine;    // [H/4 x W/4 x C]
  Tensor coarse;  // [H/8 x W/8 x C]
  FeatureSource source = FeatureSource::kFile;
  std::size_t channels = 0;
};

// Throws ContractError unless coarse = image/8 and fine = 2 x coarse.
void check_scale_contract(const Shape& fine_hwc, const Shape& coarse_hwc, std::size_t image_h,
                          std::size_t image_w);

// Reads a container with "fine" and "coarse" slots and validates it against
// the image size.
RawFeatureMap load_feature_tensor(const std::filesystem::path& path, std::size_t image_h,
                                  std::size_t image_w);
void save_feature_tensor(const std::filesystem::path& path, const RawFeatureMap& raw,
                         DType dtype = DType::kF32);

// Channel-first maps on a tape.
struct FeatureVars {
  ad::Var fine;    // [C x H/4 x W/4]
  ad::Var coarse;  // [C x H/8 x W/8]
};

FeatureVars to_tape(ad::Tape& tape, const RawFeatureMap& raw);

// ---- toy encoder -------------------------------------------------------------

inline constexpr std::size_t kToyChannels = 64;

// Strided convolution stack: 3 -> 16 (stride 1) -> 32 (stride 2) -> 64
// (stride 2, fine) -> 64 (stride 2, coarse), ReLU between layers.
class ToyEncoder {
 public:
  static constexpr const char* kPrefix = "encoder";

  static void init_params(ad::ParameterStore& store, std::uint64_t seed);

  // image [3 x H x W]; H and W must be divisible by 8 (ConfigError otherwise).
  static FeatureVars forward(ad::Binding& params, ad::Var image);
};

// Host-side convenience: encode an [H x W x 3] image with fixed parameters.
RawFeatureMap toy_encoder(const ad::ParameterStore& store, const Tensor& image_hwc);

// ---- projection head ---------------------------------------------------------

struct ProjectionConfig {
  std::size_t in_channels = kToyChannels;
  std::size_t dim = 128;
};

// conv1x1 -> ReLU -> conv1x1, both with bias.
class ProjectionHead {
 public:
  static constexpr const char* kPrefix = "proj";

  static void init_params(ad::ParameterStore& store, const ProjectionConfig& config,
                          std::uint64_t seed);
  // [C x h x w] -> [D x h x w]; DimensionError when C differs from the head.
  static ad::Var apply(ad::Binding& params, ad::Var features);
};

struct FeaturePyramid {
  ad::Var fine;    // [D x H/4 x W/4]
  ad::Var coarse;  // [D x H/8 x W/8]
  std::size_t dim = 0;
};

FeaturePyramid project(ad::Binding& params, const FeatureVars& raw);

// Whether D >= C_raw, which defeats the purpose of projecting. Reported as a
// configuration warning, not an error.
bool projection_warning(const ProjectionConfig& config);

// ---- diagnostics ---------------------------------------------------------------

// Fraction of total variance explained by the first k principal components of
// the rows of `samples` [n x D']. ContractError when n < k or k > D'.
double pca_variance_report(const Tensor& samples, std::size_t k);

// Stacks the per-cell vectors of an [h x w x C] map into [h*w x C].
Tensor feature_rows(const Tensor& hwc);

}  // namespace nsl::features
