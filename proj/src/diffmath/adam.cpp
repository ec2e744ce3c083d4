#include "nsl/diffmath/adam.hpp"

#include <cmath>

#include "nsl/diffmath/errors.hpp"

namespace nsl::ad {

AdamState make_adam_state(const Shape& shape, const AdamConfig& config) {
  AdamState s;
  s.m = Tensor::zeros(shape);
  s.v = Tensor::zeros(shape);
  s.lr = config.lr;
  s.beta1 = config.beta1;
  s.beta2 = config.beta2;
  s.eps = config.eps;
  return s;
}

void adam_step(Tensor& param, const Tensor& grad, AdamState& state) {
  if (param.shape() != grad.shape() || state.m.shape() != param.shape() ||
      state.v.shape() != param.shape()) {
    throw DimensionError("adam_step: param " + shape_str(param.shape()) + ", grad " +
                         shape_str(grad.shape()) + ", state " + shape_str(state.m.shape()));
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < param.numel(); ++i) {
    const double g = grad[i];
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
    const double m_hat = state.m[i] / c1;
    const double v_hat = state.v[i] / c2;
    param[i] -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
  }
}

void Adam::step(ParameterStore& params, const std::map<std::string, Tensor>& grads) {
  for (const auto& [name, grad] : grads) {
    Tensor& p = params.at(name);
    auto it = states_.find(name);
    if (it == states_.end()) it = states_.emplace(name, make_adam_state(p.shape(), config_)).first;
    adam_step(p, grad, it->second);
  }
}

void Adam::set_lr(double lr) {
  config_.lr = lr;
  for (auto& [name, s] : states_) s.lr = lr;
}

}  // namespace nsl::ad
