#include "simil/params.hpp"

#include <cmath>

#include "simil/errors.hpp"

namespace simil::model {

Bound::Bound(ad::Graph& graph, const ParamSet& params, const std::function<bool(const std::string&)>& trainable)
    : graph_(&graph) {
  for (const auto& [name, t] : params) {
    vars_.emplace(name, trainable(name) ? graph.parameter(t) : graph.constant(t));
  }
}

Var Bound::operator[](const std::string& name) const {
  auto it = vars_.find(name);
  if (it == vars_.end()) throw ContractError("unknown parameter '" + name + "'");
  return it->second;
}

Tensor uniform_init(std::mt19937_64& rng, std::size_t rows, std::size_t cols, std::size_t fan_in) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> u(-bound, bound);
  Tensor t({rows, cols});
  for (double& v : t.data()) v = u(rng);
  return t;
}

Var linear(Var x, Var weight, Var bias) {
  Var xw = ad::matmul(x, weight);
  return ad::add(xw, ad::broadcast_to(bias, xw.shape()));
}

bool has_prefix(const std::string& name, const std::string& prefix) { return name.rfind(prefix, 0) == 0; }

}  // namespace simil::model
