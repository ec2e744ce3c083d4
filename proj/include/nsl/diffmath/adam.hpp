#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "nsl/diffmath/params.hpp"
#include "nsl/diffmath/tensor.hpp"

namespace nsl::ad {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  Tensor m;
  Tensor v;
  std::uint64_t step = 0;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

AdamState make_adam_state(const Shape& shape, const AdamConfig& config = {});

// One bias-corrected Adam update of param in place. Throws DimensionError if
// param, grad and the accumulators disagree in shape.
void adam_step(Tensor& param, const Tensor& grad, AdamState& state);

// Adam over every parameter of a store. Parameters without a gradient this
// step keep their state untouched.
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  void step(ParameterStore& params, const std::map<std::string, Tensor>& grads);

  // Sets the step size of every current and future parameter state.
  void set_lr(double lr);

  const AdamConfig& config() const { return config_; }
  std::map<std::string, AdamState>& states() { return states_; }
  const std::map<std::string, AdamState>& states() const { return states_; }

 private:
  AdamConfig config_;
  std::map<std::string, AdamState> states_;
};

}  // namespace nsl::ad
