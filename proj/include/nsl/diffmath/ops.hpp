#pragma once

// Differentiable operators over Var. Each op computes its forward value
// eagerly and records a gradient rule on the tape of its inputs.
//
// Binary elementwise ops broadcast numpy-style (trailing dimensions aligned,
// size-1 dimensions stretched).

#include <cstddef>
#include <span>
#include <vector>

#include "nsl/diffmath/tape.hpp"

namespace nsl::ad {

// Lower clamp applied inside log().
inline constexpr double kLogClamp = 1e-6;

// ---- elementwise -----------------------------------------------------------
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);

Var add(Var a, double c);
Var mul(Var a, double c);
Var neg(Var a);

Var abs(Var a);
Var exp(Var a);
// log(max(a, floor)); zero gradient where clamped.
Var log(Var a, double floor = kLogClamp);
// sqrt(max(a, floor)); zero gradient where clamped.
Var sqrt(Var a, double floor = 0.0);
Var pow(Var a, double exponent);
Var relu(Var a);
// Zero gradient outside [lo, hi].
Var clamp(Var a, double lo, double hi);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }
inline Var operator+(Var a, double c) { return add(a, c); }
inline Var operator+(double c, Var a) { return add(a, c); }
inline Var operator-(Var a, double c) { return add(a, -c); }
inline Var operator-(double c, Var a) { return add(neg(a), c); }
inline Var operator*(Var a, double c) { return mul(a, c); }
inline Var operator*(double c, Var a) { return mul(a, c); }
inline Var operator/(Var a, double c) { return mul(a, 1.0 / c); }
inline Var operator-(Var a) { return neg(a); }

// ---- reductions ------------------------------------------------------------
// Rank-0 results.
Var sum(Var a);
Var mean(Var a);
Var sum(Var a, std::size_t axis, bool keepdim = false);
Var mean(Var a, std::size_t axis, bool keepdim = false);

// ---- structural ------------------------------------------------------------
Var reshape(Var a, Shape shape);
Var permute(Var a, std::vector<std::size_t> order);
// Swaps the last two axes.
Var transpose(Var a);
Var concat(const std::vector<Var>& parts, std::size_t axis);
// Half-open range [begin, end) along one axis.
Var slice(Var a, std::size_t axis, std::size_t begin, std::size_t end);

// ---- linear algebra --------------------------------------------------------
// [m x k] * [k x n]
Var matmul(Var a, Var b);
// [b x m x k] * [b x k x n]
Var bmm(Var a, Var b);

// Numerically stabilised by subtracting the per-slice maximum.
Var softmax(Var a, std::size_t axis);

// ---- image ops -------------------------------------------------------------
// input [C x H x W], kernel [O x C x kh x kw] -> [O x H' x W'] with
// H' = (H + 2p - kh) / stride + 1. Zero padding.
Var conv2d(Var input, Var kernel, std::size_t stride = 1, std::size_t padding = 0);

// Mean over the in-bounds 3x3 neighbourhood, stride 1, same size.
// Accepts [H x W] or [C x H x W].
Var avg_pool3x3(Var a);

// Bilinear 2x upsampling (half-pixel centres, edge-clamped).
// Accepts [H x W] or [C x H x W].
Var upsample_bilinear2x(Var a);

struct WarpResult {
  Var image;
  // [H x W], 1 where the sample location lies inside the source image.
  Tensor valid;
};

// out(c, y, x) = img(c, y, x + direction * disparity(y, x)), linearly
// interpolated along x. Samples outside [0, W-1] produce 0 and valid = 0.
WarpResult bilinear_warp_1d(Var img, Var disparity, int direction);

// [H x W] -> [9 x H x W]: slot (dy+1)*3 + (dx+1) holds a(y+dy, x+dx) with
// coordinates clamped to the border.
Var unfold3x3(Var a);

}  // namespace nsl::ad
