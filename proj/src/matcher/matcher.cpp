#include "nsl/matcher/matcher.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <random>

#include "nsl/diffmath/errors.hpp"
#include "nsl/diffmath/ops.hpp"
#include "nsl/kernels/kernels.hpp"

namespace nsl::matcher {

using namespace nsl::ad;

namespace {

// [h x w x D] times [D x D] applied to every feature.
Var rows_matmul(Var x, Var w) {
  const Shape& s = x.shape();
  return reshape(matmul(reshape(x, {s[0] * s[1], s[2]}), w), s);
}

// Column index ramp 0..w-1.
Tensor pixel_grid(std::size_t w) {
  Tensor p({w});
  for (std::size_t i = 0; i < w; ++i) p[i] = static_cast<double>(i);
  return p;
}

// Softmax expectation of column positions: [h x w x w] weights -> [h x w].
Var expected_column(Var weights) {
  const Shape& s = weights.shape();
  Tape& t = *weights.tape();
  Var p = t.constant(pixel_grid(s[2]).reshaped({s[2], 1}));
  return reshape(matmul(reshape(weights, {s[0] * s[1], s[2]}), p), {s[0], s[1]});
}

void check_chw(Var f, const char* what) {
  if (f.shape().size() != 3) {
    throw DimensionError(std::string(what) + " expects [D x h x w], got " + shape_str(f.shape()));
  }
}

Tensor xavier(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor w({rows, cols});
  for (double& v : w.data()) v = dist(rng);
  return w;
}

Tensor kaiming_conv(std::size_t out, std::size_t in, std::size_t k, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(in * k * k));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor w({out, in, k, k});
  for (double& v : w.data()) v = dist(rng);
  return w;
}

}  // namespace

// ---- transformer -------------------------------------------------------------

Tensor positional_encoding(std::size_t width, std::size_t dim) {
  Tensor pe({width, dim});
  for (std::size_t x = 0; x < width; ++x) {
    for (std::size_t c = 0; c < dim; ++c) {
      const double k = static_cast<double>(c / 2 * 2);
      const double angle = static_cast<double>(x) / std::pow(10000.0, k / static_cast<double>(dim));
      pe.at(x, c) = c % 2 == 0 ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

Var to_rows(Var chw) {
  check_chw(chw, "to_rows");
  return permute(chw, {1, 2, 0});
}

Var attention_block(Var x, Var context, const AttentionWeights& w, Var* weights) {
  const Shape& s = x.shape();
  if (s.size() != 3 || context.shape() != s) {
    throw DimensionError("attention expects matching [h x w x D], got " + shape_str(s) + " and " +
                         shape_str(context.shape()));
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(s[2]));
  Var q = rows_matmul(x, w.q);
  Var k = rows_matmul(context, w.k);
  Var v = rows_matmul(context, w.v);
  Var a = softmax(bmm(q, transpose(k)) * scale, 2);
  if (weights) *weights = a;
  return x + rows_matmul(bmm(a, v), w.o);
}

TransformerOutput epipolar_transformer(Var f_l, Var f_r, const TransformerWeights& w) {
  check_chw(f_l, "epipolar_transformer");
  if (f_l.shape() != f_r.shape()) {
    throw DimensionError("epipolar_transformer: left " + shape_str(f_l.shape()) + " vs right " +
                         shape_str(f_r.shape()));
  }
  Tape& t = *f_l.tape();
  const Shape& s = f_l.shape();
  Var pe = t.constant(positional_encoding(s[2], s[0]));
  Var xl = to_rows(f_l) + pe;
  Var xr = to_rows(f_r) + pe;
  xl = attention_block(xl, xl, w.self);
  xr = attention_block(xr, xr, w.self);
  return {attention_block(xl, xr, w.cross), attention_block(xr, xl, w.cross)};
}

// ---- matching ------------------------------------------------------------------

Var correlation_volume(Var rows_l, Var rows_r) {
  if (rows_l.shape().size() != 3 || rows_l.shape() != rows_r.shape()) {
    throw DimensionError("correlation_volume expects matching [h x w x D]");
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(rows_l.shape()[2]));
  return bmm(rows_l, transpose(rows_r)) * scale;
}

CoarseMatch coarse_disparity(Var volume) {
  const Shape& s = volume.shape();
  if (s.size() != 3 || s[1] != s[2]) {
    throw DimensionError("coarse_disparity expects [h x w x w], got " + shape_str(s));
  }
  CoarseMatch m;
  m.weights = softmax(volume, 2);
  m.expected = expected_column(m.weights);
  Var p = volume.tape()->constant(pixel_grid(s[2]));
  m.disparity = relu(m.expected - p);
  return m;
}

NnDistance nn_feature_distance(Var f) {
  check_chw(f, "nn_feature_distance");
  Tape& tape = *f.tape();
  const Tensor& vf = f.value();
  const std::size_t d = vf.dim(0), h = vf.dim(1), w = vf.dim(2), n = h * w;
  if (n < 2) throw ContractError("nn_feature_distance needs at least 2 features");

  struct Saved {
    std::vector<double> unit;  // [n x D]
    std::vector<double> norm;  // guarded norms
    std::vector<std::size_t> nn;
    std::vector<double> p;
  };
  auto saved = std::make_shared<Saved>();
  saved->unit.assign(n * d, 0.0);
  saved->norm.assign(n, 0.0);
  NnDistance out;
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0;
    for (std::size_t c = 0; c < d; ++c) s += vf[c * n + i] * vf[c * n + i];
    double norm = std::sqrt(s);
    if (norm < kNormGuard) {
      ++out.zero_norm;
      norm = kNormGuard;
    }
    saved->norm[i] = norm;
    for (std::size_t c = 0; c < d; ++c) saved->unit[i * d + c] = vf[c * n + i] / norm;
  }

  std::vector<double> sim(n * n, 0.0);
  const auto& k = kernels::active();
  k.gemm_nt(n, n, d, saved->unit.data(), d, saved->unit.data(), d, sim.data(), n);

  saved->nn.assign(n, 0);
  saved->p.assign(n, 0.0);
  Tensor p({h, w});
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = i == 0 ? 1 : 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i && sim[i * n + j] > sim[i * n + best]) best = j;
    }
    double s = 0;
    for (std::size_t c = 0; c < d; ++c) {
      const double diff = saved->unit[i * d + c] - saved->unit[best * d + c];
      s += diff * diff;
    }
    saved->nn[i] = best;
    saved->p[i] = std::sqrt(s);
    p[i] = saved->p[i];
  }
  out.neighbour = saved->nn;

  out.p = tape.record(std::move(p), {f}, [f, saved, d, n](Tape& t, const Tensor& g) {
    std::vector<double> gu(n * d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const double pi = saved->p[i];
      if (pi <= 0.0 || g[i] == 0.0) continue;
      const std::size_t j = saved->nn[i];
      for (std::size_t c = 0; c < d; ++c) {
        const double r = g[i] * (saved->unit[i * d + c] - saved->unit[j * d + c]) / pi;
        gu[i * d + c] += r;
        gu[j * d + c] -= r;
      }
    }
    Tensor gf(t.value(f).shape(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const double* u = &saved->unit[i * d];
      const double* gi = &gu[i * d];
      double proj = 0;
      for (std::size_t c = 0; c < d; ++c) proj += u[c] * gi[c];
      for (std::size_t c = 0; c < d; ++c) gf[c * n + i] = (gi[c] - u[c] * proj) / saved->norm[i];
    }
    t.accumulate(f, std::move(gf));
  });
  return out;
}

Tensor disparity_mask(const Tensor& p, double zeta) {
  Tensor m(p.shape());
  for (std::size_t i = 0; i < p.numel(); ++i) m[i] = p[i] > zeta ? 1.0 : 0.0;
  return m;
}

Var masked_disparity(Var disparity, const Tensor& mask) {
  if (disparity.shape() != mask.shape()) {
    throw DimensionError("mask " + shape_str(mask.shape()) + " does not match disparity " +
                         shape_str(disparity.shape()));
  }
  return disparity * disparity.tape()->constant(mask);
}

Var propagate_disparity(Var f_l, Var d_m, Var* weights) {
  check_chw(f_l, "propagate_disparity");
  const Shape& s = f_l.shape();
  if (d_m.shape() != Shape{s[1], s[2]}) {
    throw DimensionError("propagate_disparity: d_m " + shape_str(d_m.shape()) +
                         " does not match features " + shape_str(s));
  }
  const std::size_t n = s[1] * s[2];
  Var rows = reshape(to_rows(f_l), {n, s[0]});
  const double scale = 1.0 / std::sqrt(static_cast<double>(s[0]));
  Var a = softmax(matmul(rows, transpose(rows)) * scale, 1);
  if (weights) *weights = a;
  return reshape(matmul(a, reshape(d_m, {n, 1})), {s[1], s[2]});
}

// ---- refinement ------------------------------------------------------------------

Tensor band_mask(std::size_t width, std::size_t radius) {
  Tensor m({width, width});
  for (std::size_t i = 0; i < width; ++i) {
    for (std::size_t j = 0; j < width; ++j) {
      const std::size_t gap = i > j ? i - j : j - i;
      m.at(i, j) = gap <= radius ? 0.0 : -1e9;
    }
  }
  return m;
}

Refinement refine_disparity(Var d_g, Var fine_l, Var fine_r, const TransformerWeights* w,
                            const MatcherConfig& cfg) {
  check_chw(fine_l, "refine_disparity");
  if (fine_l.shape() != fine_r.shape()) throw DimensionError("refine_disparity: fine maps differ");
  const Shape& s = fine_l.shape();
  if (d_g.shape().size() != 2 || 2 * d_g.shape()[0] != s[1] || 2 * d_g.shape()[1] != s[2]) {
    throw ContractError("refine_disparity: disparity " + shape_str(d_g.shape()) +
                        " is not half the fine scale " + shape_str(s));
  }
  Tape& t = *fine_l.tape();
  Refinement r;
  r.upsampled = upsample_bilinear2x(d_g) * 2.0;
  r.warped_r = bilinear_warp_1d(fine_r, r.upsampled, +1).image;

  Var rows_l, rows_r;
  if (w) {
    const TransformerOutput tf = epipolar_transformer(fine_l, r.warped_r, *w);
    rows_l = tf.left;
    rows_r = tf.right;
  } else {
    rows_l = to_rows(fine_l);
    rows_r = to_rows(r.warped_r);
  }
  r.volume = correlation_volume(rows_l, rows_r) + t.constant(band_mask(s[2], cfg.radius));
  Var weights = softmax(r.volume, 2);
  Var shift = expected_column(weights) - t.constant(pixel_grid(s[2]));

  const NnDistance nn = nn_feature_distance(fine_l);
  r.p = nn.p;
  r.mask = disparity_mask(nn.p.value(), cfg.zeta);
  r.residual = masked_disparity(shift, r.mask);
  r.refined = relu(r.upsampled + r.residual);
  return r;
}

// ---- convex upsampling -------------------------------------------------------------

Var upsample_weights(Var fine_l, const UpsamplerWeights& w) {
  check_chw(fine_l, "upsample_weights");
  const std::size_t h = fine_l.shape()[1], wd = fine_l.shape()[2];
  const std::size_t hidden = w.b0.numel(), out = w.b1.numel();
  const std::size_t f2 = kUpsampleFactor * kUpsampleFactor;
  if (out != 9 * f2) throw DimensionError("upsampler must predict 9 x 16 mask channels");
  Var x = relu(conv2d(fine_l, w.w0, 1, 1) + reshape(w.b0, {hidden, 1, 1}));
  Var m = conv2d(x, w.w1, 1, 1) + reshape(w.b1, {out, 1, 1});
  return softmax(reshape(m, {9, f2, h, wd}), 0);
}

Var convex_combine(Var d_r, Var weights) {
  const Shape& s = d_r.shape();
  const std::size_t f = kUpsampleFactor;
  if (s.size() != 2 || weights.shape() != Shape{9, f * f, s[0], s[1]}) {
    throw DimensionError("convex_combine: weights " + shape_str(weights.shape()) +
                         " do not match disparity " + shape_str(s));
  }
  Var neigh = reshape(unfold3x3(d_r * static_cast<double>(f)), {9, 1, s[0], s[1]});
  Var up = sum(weights * neigh, 0);  // [16 x h x w]
  return reshape(permute(reshape(up, {f, f, s[0], s[1]}), {2, 0, 3, 1}), {f * s[0], f * s[1]});
}

Var convex_upsample(Var d_r, Var fine_l, const UpsamplerWeights& w, Var* weights) {
  Var m = upsample_weights(fine_l, w);
  if (weights) *weights = m;
  return convex_combine(d_r, m);
}

// ---- parameters ----------------------------------------------------------------------

void init_matcher_params(ad::ParameterStore& store, const MatcherConfig& cfg, std::uint64_t seed) {
  if (cfg.dim == 0 || cfg.upsample_hidden == 0) throw ConfigError("matcher dims must be > 0");
  std::mt19937_64 rng(seed);
  const std::size_t d = cfg.dim;
  for (const char* scale : {"coarse", "fine"}) {
    for (const char* block : {"self", "cross"}) {
      const std::string p = std::string("tf.") + scale + "." + block + ".";
      store.add(p + "q", xavier(d, d, rng));
      store.add(p + "k", xavier(d, d, rng));
      store.add(p + "v", xavier(d, d, rng));
      // Zero output projection: each block starts as the identity.
      store.add(p + "o", Tensor::zeros({d, d}));
    }
  }
  const std::size_t f2 = kUpsampleFactor * kUpsampleFactor;
  store.add("up.conv0.weight", kaiming_conv(cfg.upsample_hidden, d, 3, rng));
  store.add("up.conv0.bias", Tensor::zeros({cfg.upsample_hidden}));
  // Zero mask head: uniform 3x3 averaging until trained.
  store.add("up.conv1.weight", Tensor::zeros({9 * f2, cfg.upsample_hidden, 3, 3}));
  store.add("up.conv1.bias", Tensor::zeros({9 * f2}));
}

TransformerWeights bind_transformer(ad::Binding& params, const std::string& prefix) {
  auto block = [&](const std::string& b) {
    const std::string p = prefix + "." + b + ".";
    return AttentionWeights{params(p + "q"), params(p + "k"), params(p + "v"), params(p + "o")};
  };
  return {block("self"), block("cross")};
}

UpsamplerWeights bind_upsampler(ad::Binding& params) {
  return {params("up.conv0.weight"), params("up.conv0.bias"), params("up.conv1.weight"),
          params("up.conv1.bias")};
}

Tensor upsample_nearest(const Tensor& t, std::size_t factor) {
  if (t.rank() != 2) throw DimensionError("upsample_nearest expects [h x w]");
  const std::size_t h = t.dim(0), w = t.dim(1);
  Tensor out({h * factor, w * factor});
  for (std::size_t y = 0; y < h * factor; ++y)
    for (std::size_t x = 0; x < w * factor; ++x) out.at(y, x) = t.at(y / factor, x / factor);
  return out;
}

MatchResult match_stereo(ad::Binding& params, const features::FeaturePyramid& left,
                         const features::FeaturePyramid& right, const MatcherConfig& cfg) {
  if (left.coarse.shape() != right.coarse.shape() || left.fine.shape() != right.fine.shape()) {
    throw DimensionError("match_stereo: left and right pyramids differ in shape");
  }
  MatchResult r;
  Var rows_l, rows_r;
  if (cfg.use_transformer) {
    const TransformerOutput tf =
        epipolar_transformer(left.coarse, right.coarse, bind_transformer(params, "tf.coarse"));
    rows_l = tf.left;
    rows_r = tf.right;
  } else {
    rows_l = to_rows(left.coarse);
    rows_r = to_rows(right.coarse);
  }
  r.volume = correlation_volume(rows_l, rows_r);
  r.coarse = coarse_disparity(r.volume);
  r.distance = nn_feature_distance(left.coarse);
  r.mask = disparity_mask(r.distance.p.value(), cfg.zeta);
  r.masked = masked_disparity(r.coarse.disparity, r.mask);
  r.global = propagate_disparity(left.coarse, r.masked);

  TransformerWeights fine_tf;
  if (cfg.use_transformer) fine_tf = bind_transformer(params, "tf.fine");
  r.refinement = refine_disparity(r.global, left.fine, right.fine,
                                  cfg.use_transformer ? &fine_tf : nullptr, cfg);
  r.disparity = convex_upsample(r.refinement.refined, left.fine, bind_upsampler(params));
  r.mask_full = upsample_nearest(r.mask, 2 * kUpsampleFactor);
  return r;
}

// ---- gradient checks ---------------------------------------------------------------------

std::vector<GradCheckCase> matcher_gradchecks() {
  std::vector<GradCheckCase> cases;
  cases.push_back({"correlation_volume",
                   [](std::uint64_t s) {
                     return std::vector<Tensor>{random_tensor({2, 3, 4}, s), random_tensor({2, 3, 4}, s + 1)};
                   },
                   [](Tape&, const std::vector<Var>& v) { return correlation_volume(v[0], v[1]); },
                   {}});
  cases.push_back({"coarse_disparity",
                   [](std::uint64_t s) { return std::vector<Tensor>{random_tensor({2, 5, 5}, s, -2, 2)}; },
                   [](Tape&, const std::vector<Var>& v) { return coarse_disparity(v[0]).disparity; },
                   {}});
  cases.push_back({"nn_feature_distance",
                   [](std::uint64_t s) { return std::vector<Tensor>{random_tensor({4, 2, 3}, s)}; },
                   [](Tape&, const std::vector<Var>& v) { return nn_feature_distance(v[0]).p; },
                   {}});
  cases.push_back({"propagate_disparity",
                   [](std::uint64_t s) {
                     return std::vector<Tensor>{random_tensor({3, 2, 3}, s), random_tensor({2, 3}, s + 1, 0, 3)};
                   },
                   [](Tape&, const std::vector<Var>& v) { return propagate_disparity(v[0], v[1]); },
                   {}});
  cases.push_back({"attention_block",
                   [](std::uint64_t s) {
                     std::vector<Tensor> in{random_tensor({2, 3, 4}, s), random_tensor({2, 3, 4}, s + 1)};
                     for (std::uint64_t i = 0; i < 4; ++i) in.push_back(random_tensor({4, 4}, s + 2 + i));
                     return in;
                   },
                   [](Tape&, const std::vector<Var>& v) {
                     return attention_block(v[0], v[1], {v[2], v[3], v[4], v[5]});
                   },
                   {}});
  cases.push_back({"epipolar_transformer",
                   [](std::uint64_t s) {
                     std::vector<Tensor> in{random_tensor({4, 2, 3}, s), random_tensor({4, 2, 3}, s + 1)};
                     for (std::uint64_t i = 0; i < 8; ++i) in.push_back(random_tensor({4, 4}, s + 2 + i, -0.5, 0.5));
                     return in;
                   },
                   [](Tape&, const std::vector<Var>& v) {
                     const TransformerOutput o = epipolar_transformer(
                         v[0], v[1], {{v[2], v[3], v[4], v[5]}, {v[6], v[7], v[8], v[9]}});
                     return concat({o.left, o.right}, 0);
                   },
                   {}});
  cases.push_back({"refine_disparity",
                   [](std::uint64_t s) {
                     std::vector<Tensor> in{random_tensor({2, 3}, s, 0.15, 0.85),
                                            random_tensor({4, 4, 6}, s + 1),
                                            random_tensor({4, 4, 6}, s + 2)};
                     for (std::uint64_t i = 0; i < 8; ++i) in.push_back(random_tensor({4, 4}, s + 3 + i, -0.5, 0.5));
                     return in;
                   },
                   [](Tape&, const std::vector<Var>& v) {
                     MatcherConfig cfg;
                     cfg.radius = 2;
                     cfg.zeta = 0.0;
                     const TransformerWeights w{{v[3], v[4], v[5], v[6]}, {v[7], v[8], v[9], v[10]}};
                     return refine_disparity(v[0], v[1], v[2], &w, cfg).refined;
                   },
                   {}});
  cases.push_back({"convex_upsample",
                   [](std::uint64_t s) {
                     return std::vector<Tensor>{random_tensor({3, 3}, s, 0, 2), random_tensor({4, 3, 3}, s + 1),
                                                random_tensor({5, 4, 3, 3}, s + 2, -0.5, 0.5),
                                                random_tensor({5}, s + 3, -0.1, 0.1),
                                                random_tensor({144, 5, 3, 3}, s + 4, -0.5, 0.5),
                                                random_tensor({144}, s + 5, -0.1, 0.1)};
                   },
                   [](Tape&, const std::vector<Var>& v) {
                     return convex_upsample(v[0], v[1], {v[2], v[3], v[4], v[5]});
                   },
                   {}});
  return cases;
}

}  // namespace nsl::matcher
