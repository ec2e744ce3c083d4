#include "nsl/diffmath/params.hpp"

#include "nsl/diffmath/errors.hpp"

namespace nsl::ad {

Tensor& ParameterStore::add(const std::string& name, Tensor init) {
  auto [it, inserted] = params_.emplace(name, std::move(init));
  if (!inserted) throw ConfigError("duplicate parameter name: " + name);
  return it->second;
}

Tensor& ParameterStore::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw ConfigError("unknown parameter: " + name);
  return it->second;
}

const Tensor& ParameterStore::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ConfigError("unknown parameter: " + name);
  return it->second;
}

std::vector<std::string> ParameterStore::names() const {
  std::vector<std::string> out;
  out.reserve(params_.size());
  for (const auto& [name, _] : params_) out.push_back(name);
  return out;
}

std::size_t ParameterStore::total_elements() const {
  std::size_t n = 0;
  for (const auto& [_, t] : params_) n += t.numel();
  return n;
}

Binding::Binding(Tape& tape, const ParameterStore& store, Predicate trainable)
    : tape_(&tape), store_(&store), trainable_(std::move(trainable)) {}

Var Binding::operator()(const std::string& name) {
  auto it = bound_.find(name);
  if (it != bound_.end()) return it->second;
  const Tensor& value = store_->at(name);
  const bool train = !trainable_ || trainable_(name);
  Var v = train ? tape_->variable(value) : tape_->constant(value);
  bound_.emplace(name, v);
  return v;
}

std::map<std::string, Tensor> Binding::gradients() const {
  std::map<std::string, Tensor> out;
  for (const auto& [name, v] : bound_) {
    if (v.requires_grad()) out.emplace(name, v.grad());
  }
  return out;
}

}  // namespace nsl::ad
