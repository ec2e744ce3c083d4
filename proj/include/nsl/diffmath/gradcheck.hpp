#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "nsl/diffmath/tape.hpp"

namespace nsl::ad {

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  // Denominator floor so near-zero gradients are compared absolutely.
  double floor = 1e-6;
  // Coordinates checked per input; all of them when the input is smaller.
  std::size_t max_coords = 48;
  // Coordinates whose step-h and step-h/2 estimates disagree straddle a kink
  // (abs, relu, argmax switches) and are skipped.
  bool skip_kinks = true;
  std::uint64_t seed = 7;
};

struct GradCheckReport {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
  bool passed = false;
};

// Maps inputs (already on the tape, all requiring grad) to an output of any
// shape. Non-scalar outputs are contracted with fixed random weights.
using TapeFunction = std::function<Var(Tape&, const std::vector<Var>&)>;

// Compares reverse-mode gradients with central differences. Never throws for
// numerical disagreement; exceptions from fn are reported as a failure.
GradCheckReport grad_check(const std::string& name, const TapeFunction& fn,
                           const std::vector<Tensor>& inputs, const GradCheckOptions& options = {});

// A registered check: builds its own inputs from a seed.
struct GradCheckCase {
  std::string name;
  std::function<std::vector<Tensor>(std::uint64_t seed)> make_inputs;
  TapeFunction fn;
  GradCheckOptions options;
};

GradCheckReport run_case(const GradCheckCase& c, std::uint64_t seed);

// Every diffmath operator.
std::vector<GradCheckCase> core_gradchecks();

// Random tensor with entries uniform in [lo, hi).
Tensor random_tensor(const Shape& shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0);

}  // namespace nsl::ad
