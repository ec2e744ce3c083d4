#include "nsl/features/features.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <random>

#include "nsl/diffmath/errors.hpp"
#include "nsl/diffmath/ops.hpp"

namespace nsl::features {

using ad::Var;

void check_scale_contract(const Shape& fine, const Shape& coarse, std::size_t image_h,
                          std::size_t image_w) {
  if (fine.size() != 3 || coarse.size() != 3) {
    throw ContractError("feature maps must be [h x w x C]");
  }
  if (fine[2] != coarse[2] || coarse[2] == 0) {
    throw ContractError("fine and coarse channel counts differ: " + shape_str(fine) + " vs " +
                        shape_str(coarse));
  }
  if (fine[0] != 2 * coarse[0] || fine[1] != 2 * coarse[1]) {
    throw ContractError("fine dims " + shape_str(fine) + " are not 2x coarse dims " +
                        shape_str(coarse));
  }
  if (image_h % 8 != 0 || image_w % 8 != 0 || coarse[0] != image_h / 8 ||
      coarse[1] != image_w / 8) {
    throw ContractError("coarse dims " + shape_str(coarse) + " do not equal image size " +
                        std::to_string(image_h) + "x" + std::to_string(image_w) + " / 8");
  }
}

RawFeatureMap load_feature_tensor(const std::filesystem::path& path, std::size_t image_h,
                                  std::size_t image_w) {
  const auto slots = read_tensor_file(path);
  RawFeatureMap raw;
  raw.fine = find_slot(slots, "fine").tensor;
  raw.coarse = find_slot(slots, "coarse").tensor;
  check_scale_contract(raw.fine.shape(), raw.coarse.shape(), image_h, image_w);
  raw.channels = raw.coarse.dim(2);
  raw.source = FeatureSource::kFile;
  return raw;
}

void save_feature_tensor(const std::filesystem::path& path, const RawFeatureMap& raw,
                         DType dtype) {
  write_tensor_file(path, {{"fine", raw.fine, dtype}, {"coarse", raw.coarse, dtype}});
}

FeatureVars to_tape(ad::Tape& tape, const RawFeatureMap& raw) {
  FeatureVars out;
  out.fine = ad::permute(tape.constant(raw.fine), {2, 0, 1});
  out.coarse = ad::permute(tape.constant(raw.coarse), {2, 0, 1});
  return out;
}

namespace {

// Kaiming-uniform init for a ReLU network.
Tensor conv_weight(std::size_t out, std::size_t in, std::size_t k, std::mt19937_64& rng) {
  const double fan_in = static_cast<double>(in * k * k);
  const double bound = std::sqrt(6.0 / fan_in);
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor w({out, in, k, k});
  for (double& v : w.data()) v = dist(rng);
  return w;
}

Var conv_bias_relu(ad::Binding& p, const std::string& name, Var x, std::size_t stride,
                   std::size_t pad, bool activate) {
  Var w = p(name + ".weight");
  Var b = p(name + ".bias");
  Var y = ad::conv2d(x, w, stride, pad) + ad::reshape(b, {b.numel(), 1, 1});
  return activate ? ad::relu(y) : y;
}

}  // namespace

void ToyEncoder::init_params(ad::ParameterStore& store, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const std::string p = kPrefix;
  const std::size_t chans[] = {3, 16, 32, kToyChannels, kToyChannels};
  for (std::size_t i = 0; i < 4; ++i) {
    const std::string name = p + ".conv" + std::to_string(i);
    store.add(name + ".weight", conv_weight(chans[i + 1], chans[i], 3, rng));
    store.add(name + ".bias", Tensor::zeros({chans[i + 1]}));
  }
}

FeatureVars ToyEncoder::forward(ad::Binding& params, Var image) {
  const Shape& s = image.shape();
  if (s.size() != 3 || s[0] != 3) throw DimensionError("toy encoder expects [3 x H x W]");
  if (s[1] % 8 != 0 || s[2] % 8 != 0 || s[1] == 0 || s[2] == 0) {
    throw ConfigError("toy encoder needs H and W divisible by 8, got " + shape_str(s));
  }
  const std::string p = kPrefix;
  Var x = conv_bias_relu(params, p + ".conv0", image, 1, 1, true);
  x = conv_bias_relu(params, p + ".conv1", x, 2, 1, true);
  Var fine = conv_bias_relu(params, p + ".conv2", x, 2, 1, false);
  Var coarse = conv_bias_relu(params, p + ".conv3", ad::relu(fine), 2, 1, false);
  return {fine, coarse};
}

RawFeatureMap toy_encoder(const ad::ParameterStore& store, const Tensor& image_hwc) {
  if (image_hwc.rank() != 3 || image_hwc.dim(2) != 3) {
    throw DimensionError("toy encoder expects [H x W x 3], got " + shape_str(image_hwc.shape()));
  }
  ad::Tape tape;
  ad::Binding bind(tape, store, [](const std::string&) { return false; });
  FeatureVars f = ToyEncoder::forward(bind, ad::permute(tape.constant(image_hwc), {2, 0, 1}));
  RawFeatureMap raw;
  raw.fine = ad::permute(f.fine, {1, 2, 0}).value();
  raw.coarse = ad::permute(f.coarse, {1, 2, 0}).value();
  raw.source = FeatureSource::kToyEncoder;
  raw.channels = kToyChannels;
  return raw;
}

void ProjectionHead::init_params(ad::ParameterStore& store, const ProjectionConfig& config,
                                 std::uint64_t seed) {
  if (config.in_channels == 0 || config.dim == 0) throw ConfigError("projection dims must be > 0");
  std::mt19937_64 rng(seed);
  const std::string p = kPrefix;
  store.add(p + ".conv0.weight", conv_weight(config.dim, config.in_channels, 1, rng));
  store.add(p + ".conv0.bias", Tensor::zeros({config.dim}));
  store.add(p + ".conv1.weight", conv_weight(config.dim, config.dim, 1, rng));
  store.add(p + ".conv1.bias", Tensor::zeros({config.dim}));
}

Var ProjectionHead::apply(ad::Binding& params, Var features) {
  const std::string p = kPrefix;
  Var w0 = params(p + ".conv0.weight");
  if (features.shape().size() != 3 || features.shape()[0] != w0.shape()[1]) {
    throw DimensionError("projection head expects " + std::to_string(w0.shape()[1]) +
                         " input channels, got " + shape_str(features.shape()));
  }
  Var x = conv_bias_relu(params, p + ".conv0", features, 1, 0, true);
  return conv_bias_relu(params, p + ".conv1", x, 1, 0, false);
}

FeaturePyramid project(ad::Binding& params, const FeatureVars& raw) {
  FeaturePyramid out;
  out.fine = ProjectionHead::apply(params, raw.fine);
  out.coarse = ProjectionHead::apply(params, raw.coarse);
  out.dim = out.coarse.shape()[0];
  return out;
}

bool projection_warning(const ProjectionConfig& config) { return config.dim >= config.in_channels; }

Tensor feature_rows(const Tensor& hwc) {
  if (hwc.rank() != 3) throw DimensionError("feature_rows expects [h x w x C]");
  return hwc.reshaped({hwc.dim(0) * hwc.dim(1), hwc.dim(2)});
}

double pca_variance_report(const Tensor& samples, std::size_t k) {
  if (samples.rank() != 2) throw DimensionError("pca expects [n x D]");
  const std::size_t n = samples.dim(0), d = samples.dim(1);
  if (k == 0 || k > d) throw ContractError("pca: k must be in [1, D]");
  if (n < k || n < 2) throw ContractError("pca: need at least k (and 2) samples");

  Eigen::MatrixXd x(n, d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = samples.at(i, j);
  const Eigen::RowVectorXd mu = x.colwise().mean();
  x.rowwise() -= mu;
  const Eigen::MatrixXd cov = (x.transpose() * x) / static_cast<double>(n - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov, Eigen::EigenvaluesOnly);
  Eigen::VectorXd ev = solver.eigenvalues().cwiseMax(0.0);  // ascending
  const double total = ev.sum();
  if (total <= 0.0) return 1.0;  // all samples identical: nothing left to explain
  double top = 0.0;
  for (std::size_t i = 0; i < k; ++i) top += ev(static_cast<Eigen::Index>(d - 1 - i));
  return std::clamp(top / total, 0.0, 1.0);
}

}  // namespace nsl::features
