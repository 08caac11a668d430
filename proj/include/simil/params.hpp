#pragma once

#include <functional>
#include <map>
#include <random>
#include <string>

#include "simil/autodiff.hpp"

namespace simil::model {

using ad::Tensor;
using ad::Var;
using ParamSet = std::map<std::string, Tensor>;

// Graph handles for one forward pass. Names not selected as trainable are
// bound as constants (no gradient).
class Bound {
 public:
  Bound(ad::Graph& graph, const ParamSet& params, const std::function<bool(const std::string&)>& trainable);
  Bound(ad::Graph& graph, std::map<std::string, Var> vars) : graph_(&graph), vars_(std::move(vars)) {}

  Var operator[](const std::string& name) const;
  const std::map<std::string, Var>& vars() const { return vars_; }
  ad::Graph& graph() const { return *graph_; }

 private:
  ad::Graph* graph_;
  std::map<std::string, Var> vars_;
};

// PyTorch-style default: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
Tensor uniform_init(std::mt19937_64& rng, std::size_t rows, std::size_t cols, std::size_t fan_in);

// x (n x in) * W (in x out) + b (1 x out), bias broadcast explicitly.
Var linear(Var x, Var weight, Var bias);

bool has_prefix(const std::string& name, const std::string& prefix);

}  // namespace simil::model
