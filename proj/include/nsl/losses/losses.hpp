#pragma once

// Self-supervised training objective: photometric reconstruction, focal-style
// nearest-neighbour distance regularizer and edge-aware smoothness.
//
// Images are [C x H x W] with values in [0, 1]; disparity is [H x W] in
// pixels and follows the matcher convention (the left image is rebuilt by
// sampling the right image at x + d).

#include <array>

#include "nsl/diffmath/gradcheck.hpp"
#include "nsl/diffmath/tape.hpp"

namespace nsl::losses {

using ad::Var;

struct LossConfig {
  double alpha = 0.15;
  double gamma = 2.0;
  double beta1 = 1.0;
  double beta2 = 0.1;
  double c1 = 0.01 * 0.01;
  double c2 = 0.03 * 0.03;
  double eps = 1e-6;

  // ConfigError when a field is out of range.
  void validate() const;
};

struct StereoRig {
  double baseline = 0.0;  // meters
  double focal = 0.0;     // pixels
  double cx = 0.0;
  double cy = 0.0;
  // Row-major K and left-to-right transform. Kept for completeness; the
  // rectified warp only uses baseline and focal length.
  std::array<double, 9> K{};
  std::array<double, 16> T_lr{};

  static StereoRig rectified(double baseline, double focal, double cx, double cy);
  void validate() const;
};

// Disparities below this are treated as invalid depth.
inline constexpr double kMinDisparity = 1e-6;

struct DepthMap {
  Tensor depth;  // meters, 0 where invalid
  Tensor valid;  // 1 where the disparity gave a depth
};

DepthMap disparity_to_depth(const Tensor& disparity, const StereoRig& rig,
                            double min_disparity = kMinDisparity);

// Per-pixel SSIM over 3x3 average-pooled statistics. Same shape as inputs.
Var ssim(Var a, Var b, const LossConfig& cfg = {});

struct PhotometricResult {
  Var loss;
  Var reconstruction;  // warped right image
  Tensor valid;        // [H x W] warp validity
};

// alpha * |I_l - I^_l| + (1 - alpha) * (1 - SSIM) / 2, channel-averaged and
// then averaged over warp-valid pixels. ContractError when none are valid.
PhotometricResult photometric_loss(Var left, Var right, Var disparity, const LossConfig& cfg = {});

// -mean((1 - p)^gamma * log p) with p clamped to [eps, 1].
Var distance_regularizer(Var p, const LossConfig& cfg = {});

// Edge-aware smoothness of the mean-normalised disparity d / (mean(d) + 1e-7).
Var smoothness_loss(Var disparity, Var image);

struct LossParts {
  Var photo;
  Var reg;
  Var smooth;
};

// photo + beta1 * reg + beta2 * smooth. TrainingError naming the offending
// part when any is non-finite.
Var total_loss(const LossParts& parts, const LossConfig& cfg = {});
double total_loss(double photo, double reg, double smooth, const LossConfig& cfg = {});

std::vector<ad::GradCheckCase> loss_gradchecks();

}  // namespace nsl::losses
