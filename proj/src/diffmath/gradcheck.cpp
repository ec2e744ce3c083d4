#include "nsl/diffmath/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>
#include <random>

#include "nsl/diffmath/ops.hpp"

namespace nsl::ad {

Tensor random_tensor(const Shape& shape, std::uint64_t seed, double lo, double hi) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor t(shape);
  for (double& v : t.data()) v = dist(rng);
  return t;
}

namespace {

// Scalar objective: the op output contracted with fixed weights.
double evaluate(const TapeFunction& fn, const std::vector<Tensor>& inputs, const Tensor* weights) {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (const Tensor& t : inputs) vars.push_back(tape.constant(t));
  Var out = fn(tape, vars);
  if (weights == nullptr) return out.value().item();
  double acc = 0.0;
  const Tensor& v = out.value();
  for (std::size_t i = 0; i < v.numel(); ++i) acc += v[i] * (*weights)[i];
  return acc;
}

std::vector<std::size_t> pick_coords(std::size_t n, std::size_t limit, std::mt19937_64& rng) {
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), 0);
  if (n <= limit) return all;
  std::shuffle(all.begin(), all.end(), rng);
  return all;  // caller walks the shuffled list until `limit` are accepted
}

}  // namespace

GradCheckReport grad_check(const std::string& name, const TapeFunction& fn,
                           const std::vector<Tensor>& inputs, const GradCheckOptions& options) {
  GradCheckReport report;
  report.name = name;
  try {
    // Analytic pass.
    Tape tape;
    std::vector<Var> vars;
    for (const Tensor& t : inputs) vars.push_back(tape.variable(t));
    Var out = fn(tape, vars);
    Tensor weights;
    const Tensor* wptr = nullptr;
    Var loss = out;
    if (out.numel() != 1) {
      weights = random_tensor(out.shape(), options.seed ^ 0x9e3779b97f4a7c15ULL, -1.0, 1.0);
      const double scale = 1.0 / std::sqrt(static_cast<double>(out.numel()));
      for (double& w : weights.data()) w *= scale;
      wptr = &weights;
      loss = sum(mul(out, tape.constant(weights)));
    }
    tape.backward(loss);

    std::mt19937_64 rng(options.seed);
    const double h = options.step;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
      const Tensor analytic = vars[k].grad();
      std::vector<Tensor> probe = inputs;
      std::size_t accepted = 0;
      for (std::size_t idx : pick_coords(inputs[k].numel(), options.max_coords, rng)) {
        if (accepted >= options.max_coords) break;
        const double x0 = inputs[k][idx];
        auto central = [&](double step) {
          probe[k][idx] = x0 + step;
          const double fp = evaluate(fn, probe, wptr);
          probe[k][idx] = x0 - step;
          const double fm = evaluate(fn, probe, wptr);
          probe[k][idx] = x0;
          return (fp - fm) / (2.0 * step);
        };
        const double numeric = central(h);
        const double a = analytic[idx];
        if (options.skip_kinks) {
          const double half = central(0.5 * h);
          const double scale = std::max({std::abs(numeric), std::abs(half), options.floor});
          if (std::abs(numeric - half) > options.tolerance * scale) {
            ++report.skipped;
            continue;
          }
        }
        const double denom = std::max({std::abs(a), std::abs(numeric), options.floor});
        report.max_rel_error = std::max(report.max_rel_error, std::abs(a - numeric) / denom);
        ++report.checked;
        ++accepted;
      }
    }
    report.passed = report.checked > 0 && report.max_rel_error < options.tolerance;
  } catch (const std::exception&) {
    report.passed = false;
    report.max_rel_error = std::numeric_limits<double>::infinity();
  }
  return report;
}

GradCheckReport run_case(const GradCheckCase& c, std::uint64_t seed) {
  GradCheckOptions opts = c.options;
  opts.seed = seed;
  return grad_check(c.name, c.fn, c.make_inputs(seed), opts);
}

namespace {

// Uniform magnitudes in [lo, hi] with random sign: keeps abs/relu inputs away
// from their kink at zero.
Tensor signed_away_from_zero(const Shape& shape, std::uint64_t seed, double lo = 0.1,
                             double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> mag(lo, hi);
  std::bernoulli_distribution sign(0.5);
  Tensor t(shape);
  for (double& v : t.data()) v = sign(rng) ? mag(rng) : -mag(rng);
  return t;
}

// Disparities whose sample positions sit between grid points and in bounds.
Tensor warp_disparity(std::size_t h, std::size_t w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> frac(0.2, 0.8);
  Tensor d({h, w});
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t room = w - 1 - x;  // whole pixels available to the right
      const std::size_t whole = room >= 2 ? rng() % 2 : 0;
      d.at(y, x) = room == 0 ? -frac(rng) : static_cast<double>(whole) + frac(rng);
      if (room == 1) d.at(y, x) = frac(rng);
    }
  }
  return d;
}

}  // namespace

std::vector<GradCheckCase> core_gradchecks() {
  std::vector<GradCheckCase> cases;
  auto add_case = [&](std::string name, auto make, TapeFunction fn, GradCheckOptions opts = {}) {
    cases.push_back({std::move(name), std::move(make), std::move(fn), opts});
  };

  add_case(
      "add_broadcast",
      [](std::uint64_t s) {
        return std::vector<Tensor>{random_tensor({3, 4}, s), random_tensor({1, 4}, s + 1)};
      },
      [](Tape&, const std::vector<Var>& v) { return add(v[0], v[1]); });
  add_case(
      "sub_broadcast",
      [](std::uint64_t s) {
        return std::vector<Tensor>{random_tensor({2, 3, 4}, s), random_tensor({3, 1}, s + 1)};
      },
      [](Tape&, const std::vector<Var>& v) { return sub(v[0], v[1]); });
  add_case(
      "mul_broadcast",
      [](std::uint64_t s) {
        return std::vector<Tensor>{random_tensor({2, 3, 4}, s), random_tensor({4}, s + 1)};
      },
      [](Tape&, const std::vector<Var>& v) { return mul(v[0], v[1]); });
  add_case(
      "div",
      [](std::uint64_t s) {
        return std::vector<Tensor>{random_tensor({3, 5}, s),
                                   random_tensor({3, 5}, s + 1, 0.5, 2.0)};
      },
      [](Tape&, const std::vector<Var>& v) { return div(v[0], v[1]); });
  add_case(
      "scalar_affine",
      [](std::uint64_t s) { return std::vector<Tensor>{random_tensor({6}, s)}; },
      [](Tape&, const std::vector<Var>& v) { return 3.0 - 2.5 * v[0] + 1.0; });
  add_case(
      "abs",
      [](std::uint64_t s) { return std::vector<Tensor>{signed_away_from_zero({10}, s)}; },
      [](Tape&, const std::vector<Var>& v) { return abs(v[0]); });
  add_case(
      "exp", [](std::uint64_t s) { return std::vector<Tensor>{random_tensor({8}, s)}; },
      [](Tape&, const std::vector<Var>& v) { return exp(v[0]); });
  add_case(
      "log",
      [](std::uint64_t s) { return std::vector<Tensor>{random_tensor({8}, s, 0.3, 3.0)}; },
      [](Tape&, const std::vector<Var>& v) { return log(v[0]); });
  add_case(
      "sqrt",
      [](std::uint64_t s) { return std::vector<Tensor>{random_tensor({8}, s, 0.3, 3.0)}; },
      [](Tape&, const std::vector<Var>& v) { return sqrt(v[0]); });
  add_case(
      "pow",
      [](std::uint64_t s) { return std::vector<Tensor>{random_tensor({8}, s, 0.3, 2.0)}; },
      [](Tape&, const std::vector<Var>& v) { return pow(v[0], 2.5); });
  add_case(
      "relu",
      [](std::uint64_t s) { return std::vector<Tensor>{signed_away_from_zero({12}, s)}; },
      [](Tape&, const std::vector<Var>& v) { return relu(v[0]); });
  add_case(
      "clamp",
      [](std::uint64_t s) { return std::vector<Tensor>{signed_away_from_zero({12}, s)}; },
      [](Tape&, const std::vector<Var>& v) { return clamp(v[0], -0.55, 0.5); });
  add_case(
      "sum_mean",
      [](std::uint64_t s) { return std::vector<Tensor>{random_tensor({3, 4, 2}, s)}; },
      [](Tape&, const std::vector<Var>& v) {
        return concat({reshape(sum(v[0], 1), {6}), reshape(mean(v[0], 2, true), {12}),
                       reshape(mean(v[0]), {1})},
                      0);
      });
  add_case(
      "reshape_permute_transpose",
      [](std::uint64_t s) { return std::vector<Tensor>{random_tensor({2, 3, 4}, s)}; },
      [](Tape&, const std::vector<Var>& v) {
        Var p = permute(v[0], {2, 0, 1});
        return transpose(reshape(p, {8, 3}));
      });
  add_case(
      "concat_slice",
      [](std::uint64_t s) {
        return std::vector<Tensor>{random_tensor({2, 3}, s), random_tensor({2, 2}, s + 1)};
      },
      [](Tape&, const std::vector<Var>& v) { return slice(concat({v[0], v[1]}, 1), 1, 1, 4); });
  add_case(
      "matmul",
      [](std::uint64_t s) {
        return std::vector<Tensor>{random_tensor({3, 4}, s), random_tensor({4, 2}, s + 1)};
      },
      [](Tape&, const std::vector<Var>& v) { return matmul(v[0], v[1]); });
  add_case(
      "bmm",
      [](std::uint64_t s) {
        return std::vector<Tensor>{random_tensor({2, 5, 3}, s), random_tensor({2, 3, 9}, s + 1)};
      },
      [](Tape&, const std::vector<Var>& v) { return bmm(v[0], v[1]); });
  add_case(
      "softmax",
      [](std::uint64_t s) { return std::vector<Tensor>{random_tensor({7}, s, -2.0, 2.0)}; },
      [](Tape&, const std::vector<Var>& v) { return softmax(v[0], 0); });
  add_case(
      "softmax_axis",
      [](std::uint64_t s) { return std::vector<Tensor>{random_tensor({3, 5, 2}, s, -2.0, 2.0)}; },
      [](Tape&, const std::vector<Var>& v) { return softmax(v[0], 1); });
  add_case(
      "conv2d",
      [](std::uint64_t s) {
        return std::vector<Tensor>{random_tensor({2, 6, 5}, s), random_tensor({3, 2, 3, 3}, s + 1)};
      },
      [](Tape&, const std::vector<Var>& v) { return conv2d(v[0], v[1], 1, 1); });
  add_case(
      "conv2d_strided",
      [](std::uint64_t s) {
        return std::vector<Tensor>{random_tensor({2, 8, 8}, s), random_tensor({2, 2, 3, 3}, s + 1)};
      },
      [](Tape&, const std::vector<Var>& v) { return conv2d(v[0], v[1], 2, 1); });
  add_case(
      "avg_pool3x3",
      [](std::uint64_t s) { return std::vector<Tensor>{random_tensor({2, 5, 6}, s)}; },
      [](Tape&, const std::vector<Var>& v) { return avg_pool3x3(v[0]); });
  add_case(
      "upsample_bilinear2x",
      [](std::uint64_t s) { return std::vector<Tensor>{random_tensor({2, 3, 4}, s)}; },
      [](Tape&, const std::vector<Var>& v) { return upsample_bilinear2x(v[0]); });
  add_case(
      "bilinear_warp_1d",
      [](std::uint64_t s) {
        return std::vector<Tensor>{random_tensor({2, 4, 8}, s), warp_disparity(4, 8, s + 1)};
      },
      [](Tape&, const std::vector<Var>& v) { return bilinear_warp_1d(v[0], v[1], 1).image; });
  add_case(
      "unfold3x3",
      [](std::uint64_t s) { return std::vector<Tensor>{random_tensor({4, 5}, s)}; },
      [](Tape&, const std::vector<Var>& v) { return unfold3x3(v[0]); });
  return cases;
}

}  // namespace nsl::ad
