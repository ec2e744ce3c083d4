#pragma once

// Stereo matcher: epipolar transformer, correlation volume, soft matching,
// nearest-neighbour validity mask, attention propagation, fine-scale
// refinement and convex upsampling.
//
// Sign convention: for a left pixel at column x the true match in the second
// (right) view lies at x + d with d >= 0, i.e. right(x + d) = left(x). Warps
// therefore sample the right image at x + d (direction +1).
//
// Layouts: pyramid maps are channel-first [D x h x w]; row-major "rows"
// tensors used by attention and correlation are [h x w x D]; disparity fields
// are [h x w].

#include <cstdint>
#include <string>
#include <vector>

#include "nsl/diffmath/gradcheck.hpp"
#include "nsl/diffmath/params.hpp"
#include "nsl/features/features.hpp"

namespace nsl::matcher {

using ad::Var;

struct MatcherConfig {
  std::size_t dim = 128;
  double zeta = 0.2;
  // Half-width of the banded local correlation, fine-scale pixels.
  std::size_t radius = 8;
  std::size_t upsample_hidden = 64;
  bool use_transformer = true;
};

// ---- epipolar transformer ----------------------------------------------------

// Single-head attention projections, each [D x D].
struct AttentionWeights {
  Var q, k, v, o;
};

struct TransformerWeights {
  AttentionWeights self, cross;
};

// [w x D] sinusoidal encoding of the column index, identical for every row.
Tensor positional_encoding(std::size_t width, std::size_t dim);

// [D x h x w] -> [h x w x D].
Var to_rows(Var chw);

// x + softmax(q(x) k(ctx)^T / sqrt(D)) v(ctx) o, per row. x, ctx: [h x w x D].
// The attention weights [h x w x w] are written to *weights when given.
Var attention_block(Var x, Var context, const AttentionWeights& w, Var* weights = nullptr);

struct TransformerOutput {
  Var left;   // [h x w x D]
  Var right;  // [h x w x D]
};

// Adds the positional encoding once, then one self-attention block (shared
// between the views) and one cross-attention block updating both views from
// their self-attended inputs. Inputs are [D x h x w].
TransformerOutput epipolar_transformer(Var f_l, Var f_r, const TransformerWeights& w);

// ---- matching ----------------------------------------------------------------

// Per-row F_l F_r^T / sqrt(D): [h x w x D] twice -> [h x w x w].
Var correlation_volume(Var rows_l, Var rows_r);

struct CoarseMatch {
  Var weights;    // [h x w x w], rows sum to 1
  Var expected;   // G, [h x w]
  Var disparity;  // ReLU(G - P), [h x w]
};

CoarseMatch coarse_disparity(Var volume);

struct NnDistance {
  Var p;                                // [h x w]
  std::vector<std::size_t> neighbour;   // flat index of each feature's nearest neighbour
  std::size_t zero_norm = 0;            // features that hit the norm guard
};

inline constexpr double kNormGuard = 1e-12;

// Unit-normalises every feature of f [D x h x w], finds the nearest
// neighbour j != i by maximum cosine similarity and returns
// p_i = |f'_i - f'_j|. Differentiable w.r.t. f for a fixed neighbour choice.
NnDistance nn_feature_distance(Var f);

// 1 where p > zeta (strict), else 0.
Tensor disparity_mask(const Tensor& p, double zeta);
Var masked_disparity(Var disparity, const Tensor& mask);

// softmax(f_l f_l^T / sqrt(D)) d_m over all h*w positions. f_l [D x h x w],
// d_m [h x w]. The attention [hw x hw] is written to *weights when given.
Var propagate_disparity(Var f_l, Var d_m, Var* weights = nullptr);

// ---- refinement ----------------------------------------------------------------

struct Refinement {
  Var upsampled;   // 2 x bilinear(d_g), [h' x w']
  Var warped_r;    // right fine features sampled at x + upsampled, [D x h' x w']
  Var volume;      // banded local correlation, [h' x w' x w']
  Var residual;    // mask * (G - P), [h' x w']
  Tensor mask;     // fine-scale validity mask, [h' x w']
  Var p;           // fine-scale nearest-neighbour distance
  Var refined;     // ReLU(upsampled + residual)
};

// Additive mask with 0 inside |j - i| <= radius and -1e9 outside: [w x w].
Tensor band_mask(std::size_t width, std::size_t radius);

Refinement refine_disparity(Var d_g, Var fine_l, Var fine_r, const TransformerWeights* w,
                            const MatcherConfig& cfg);

// ---- convex upsampling -----------------------------------------------------------

inline constexpr std::size_t kUpsampleFactor = 4;

struct UpsamplerWeights {
  Var w0, b0, w1, b1;
};

// Softmax over the 9 neighbourhood slots of the mask predicted from fine_l:
// [9 x 16 x h' x w'].
Var upsample_weights(Var fine_l, const UpsamplerWeights& w);

// sum_k weights[k] * unfold(4 * d_r)[k], rearranged to [4h' x 4w'].
Var convex_combine(Var d_r, Var weights);

Var convex_upsample(Var d_r, Var fine_l, const UpsamplerWeights& w, Var* weights = nullptr);

// ---- parameters and full chain ---------------------------------------------------

void init_matcher_params(ad::ParameterStore& store, const MatcherConfig& cfg, std::uint64_t seed);
TransformerWeights bind_transformer(ad::Binding& params, const std::string& prefix);
UpsamplerWeights bind_upsampler(ad::Binding& params);

struct MatchResult {
  Var volume;
  CoarseMatch coarse;
  NnDistance distance;   // coarse left features
  Tensor mask;           // coarse mask [h x w]
  Var masked;            // d_m
  Var global;            // d_g
  Refinement refinement;
  Var disparity;         // full resolution [H x W]
  Tensor mask_full;      // coarse mask, nearest-neighbour upsampled to [H x W]
};

MatchResult match_stereo(ad::Binding& params, const features::FeaturePyramid& left,
                         const features::FeaturePyramid& right, const MatcherConfig& cfg);

// Nearest-neighbour upsampling by an integer factor: [h x w] -> [f h x f w].
Tensor upsample_nearest(const Tensor& t, std::size_t factor);

// Gradient checks for every matcher operation.
std::vector<ad::GradCheckCase> matcher_gradchecks();

}  // namespace nsl::matcher
