#include "nsl/losses/losses.hpp"

#include <cmath>
#include <sstream>

#include "nsl/diffmath/errors.hpp"
#include "nsl/diffmath/ops.hpp"

namespace nsl::losses {

using namespace nsl::ad;

void LossConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in [0, 1]");
  if (!(gamma >= 0.0)) throw ConfigError("gamma must be >= 0");
  if (!(beta1 >= 0.0) || !(beta2 >= 0.0)) throw ConfigError("beta1 and beta2 must be >= 0");
  if (!(c1 > 0.0) || !(c2 > 0.0)) throw ConfigError("SSIM stabilizers must be > 0");
  if (!(eps > 0.0 && eps < 1.0)) throw ConfigError("eps must lie in (0, 1)");
}

StereoRig StereoRig::rectified(double baseline, double focal, double cx, double cy) {
  StereoRig r;
  r.baseline = baseline;
  r.focal = focal;
  r.cx = cx;
  r.cy = cy;
  r.K = {focal, 0, cx, 0, focal, cy, 0, 0, 1};
  r.T_lr = {1, 0, 0, -baseline, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1};
  r.validate();
  return r;
}

void StereoRig::validate() const {
  if (!(baseline > 0.0)) throw ConfigError("baseline must be > 0");
  if (!(focal > 0.0)) throw ConfigError("focal length must be > 0");
}

DepthMap disparity_to_depth(const Tensor& disparity, const StereoRig& rig, double min_disparity) {
  rig.validate();
  DepthMap out{Tensor(disparity.shape(), 0.0), Tensor(disparity.shape(), 0.0)};
  const double bf = rig.baseline * rig.focal;
  for (std::size_t i = 0; i < disparity.numel(); ++i) {
    if (disparity[i] >= min_disparity && std::isfinite(disparity[i])) {
      out.depth[i] = bf / disparity[i];
      out.valid[i] = 1.0;
    }
  }
  return out;
}

Var ssim(Var a, Var b, const LossConfig& cfg) {
  if (a.shape() != b.shape()) {
    throw DimensionError("ssim: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  Var mu_a = avg_pool3x3(a);
  Var mu_b = avg_pool3x3(b);
  Var var_a = avg_pool3x3(a * a) - mu_a * mu_a;
  Var var_b = avg_pool3x3(b * b) - mu_b * mu_b;
  Var cov = avg_pool3x3(a * b) - mu_a * mu_b;
  Var num = (2.0 * mu_a * mu_b + cfg.c1) * (2.0 * cov + cfg.c2);
  Var den = (mu_a * mu_a + mu_b * mu_b + cfg.c1) * (var_a + var_b + cfg.c2);
  return num / den;
}

PhotometricResult photometric_loss(Var left, Var right, Var disparity, const LossConfig& cfg) {
  const Shape& s = left.shape();
  if (s.size() != 3 || right.shape() != s) throw DimensionError("photometric_loss expects matching [C x H x W]");
  if (disparity.shape() != Shape{s[1], s[2]}) {
    throw DimensionError("photometric_loss: disparity " + shape_str(disparity.shape()) +
                         " does not match image " + shape_str(s));
  }
  WarpResult warp = bilinear_warp_1d(right, disparity, +1);
  double count = 0;
  for (double v : warp.valid.data()) count += v;
  if (count == 0) throw ContractError("photometric_loss: no warp-valid pixels");

  Var l1 = mean(abs(left - warp.image), 0);
  Var dssim = mean((1.0 - ssim(left, warp.image, cfg)) * 0.5, 0);
  Var per_pixel = cfg.alpha * l1 + (1.0 - cfg.alpha) * dssim;
  Tape& t = *left.tape();
  return {sum(per_pixel * t.constant(warp.valid)) / count, warp.image, warp.valid};
}

Var distance_regularizer(Var p, const LossConfig& cfg) {
  Var pc = clamp(p, cfg.eps, 1.0);
  Var term = log(pc, cfg.eps);
  if (cfg.gamma != 0.0) term = pow(1.0 - pc, cfg.gamma) * term;
  return -mean(term);
}

Var smoothness_loss(Var disparity, Var image) {
  const Shape& ds = disparity.shape();
  const Shape& is = image.shape();
  if (ds.size() != 2 || is.size() != 3 || is[1] != ds[0] || is[2] != ds[1]) {
    throw DimensionError("smoothness_loss: disparity " + shape_str(ds) + " vs image " + shape_str(is));
  }
  const std::size_t h = ds[0], w = ds[1];
  Var dn = disparity / (mean(disparity) + 1e-7);
  Var dx = abs(slice(dn, 1, 1, w) - slice(dn, 1, 0, w - 1));
  Var dy = abs(slice(dn, 0, 1, h) - slice(dn, 0, 0, h - 1));
  Var ix = mean(abs(slice(image, 2, 1, w) - slice(image, 2, 0, w - 1)), 0);
  Var iy = mean(abs(slice(image, 1, 1, h) - slice(image, 1, 0, h - 1)), 0);
  return mean(dx * exp(-ix)) + mean(dy * exp(-iy));
}

Var total_loss(const LossParts& parts, const LossConfig& cfg) {
  const std::pair<const char*, Var> named[] = {
      {"photometric", parts.photo}, {"regularizer", parts.reg}, {"smoothness", parts.smooth}};
  for (const auto& [name, v] : named) {
    if (!v.value().all_finite()) {
      std::ostringstream msg;
      msg << "non-finite " << name << " loss (photo=" << parts.photo.value().item()
          << ", reg=" << parts.reg.value().item() << ", smooth=" << parts.smooth.value().item() << ")";
      throw TrainingError(msg.str());
    }
  }
  return parts.photo + cfg.beta1 * parts.reg + cfg.beta2 * parts.smooth;
}

double total_loss(double photo, double reg, double smooth, const LossConfig& cfg) {
  if (!std::isfinite(photo) || !std::isfinite(reg) || !std::isfinite(smooth)) {
    throw TrainingError("non-finite loss part");
  }
  return photo + cfg.beta1 * reg + cfg.beta2 * smooth;
}

std::vector<GradCheckCase> loss_gradchecks() {
  std::vector<GradCheckCase> cases;
  cases.push_back({"ssim",
                   [](std::uint64_t s) {
                     return std::vector<Tensor>{random_tensor({2, 4, 5}, s, 0, 1), random_tensor({2, 4, 5}, s + 1, 0, 1)};
                   },
                   [](Tape&, const std::vector<Var>& v) { return ssim(v[0], v[1]); },
                   {}});
  cases.push_back({"photometric_loss",
                   [](std::uint64_t s) {
                     return std::vector<Tensor>{random_tensor({3, 4, 8}, s, 0, 1), random_tensor({3, 4, 8}, s + 1, 0, 1),
                                                random_tensor({4, 8}, s + 2, 0.2, 2.8)};
                   },
                   [](Tape&, const std::vector<Var>& v) { return photometric_loss(v[0], v[1], v[2]).loss; },
                   {}});
  cases.push_back({"distance_regularizer",
                   [](std::uint64_t s) { return std::vector<Tensor>{random_tensor({3, 4}, s, 0.05, 0.95)}; },
                   [](Tape&, const std::vector<Var>& v) { return distance_regularizer(v[0]); },
                   {}});
  cases.push_back({"smoothness_loss",
                   [](std::uint64_t s) {
                     return std::vector<Tensor>{random_tensor({4, 5}, s, 0.5, 3), random_tensor({3, 4, 5}, s + 1, 0, 1)};
                   },
                   [](Tape&, const std::vector<Var>& v) { return smoothness_loss(v[0], v[1]); },
                   {}});
  cases.push_back({"total_loss",
                   [](std::uint64_t s) {
                     return std::vector<Tensor>{random_tensor({3}, s), random_tensor({3}, s + 1), random_tensor({3}, s + 2)};
                   },
                   [](Tape&, const std::vector<Var>& v) {
                     return total_loss({sum(v[0] * v[0]), sum(exp(v[1])), sum(v[2] * v[0])});
                   },
                   {}});
  return cases;
}

}  // namespace nsl::losses
