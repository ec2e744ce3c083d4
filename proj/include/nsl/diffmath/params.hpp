#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "nsl/diffmath/tape.hpp"

namespace nsl::ad {

// Named trainable tensors. Ordered by name so iteration (and therefore
// serialization and optimizer updates) is deterministic.
class ParameterStore {
 public:
  // Throws ConfigError if the name is taken.
  Tensor& add(const std::string& name, Tensor init);
  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;

  const std::map<std::string, Tensor>& all() const { return params_; }
  std::map<std::string, Tensor>& all() { return params_; }
  std::vector<std::string> names() const;
  std::size_t total_elements() const;

 private:
  std::map<std::string, Tensor> params_;
};

// Parameters of a store placed on one tape. Each parameter becomes a leaf the
// first time it is requested; parameters rejected by the trainable predicate
// enter as constants.
class Binding {
 public:
  using Predicate = std::function<bool(const std::string&)>;

  Binding(Tape& tape, const ParameterStore& store, Predicate trainable = {});

  Var operator()(const std::string& name);
  Tape& tape() { return *tape_; }

  // Gradients of every trainable parameter used on the tape.
  std::map<std::string, Tensor> gradients() const;

 private:
  Tape* tape_;
  const ParameterStore* store_;
  Predicate trainable_;
  std::map<std::string, Var> bound_;
};

}  // namespace nsl::ad
