#include "simil/si_branch.hpp"

#include <cmath>

#include "simil/errors.hpp"
#include "simil/stats.hpp"

namespace simil::si {

using namespace simil::ad;

void BetaConfig::validate() const {
  if (!(gamma > 0.0 && gamma < 1.0)) throw ContractError("beta percentile gamma must lie in (0,1)");
  if (!(t > 0.0)) throw ContractError("beta temperature must be positive");
}

ParamSet init_params(const SiConfig& c, std::mt19937_64& rng) {
  if (c.k == 0 || c.d < 2) throw ShapeError("SI branch needs K >= 1 and d >= 2");
  c.beta.validate();
  ParamSet p;
  auto mlp = [&](const std::string& prefix, std::size_t n) {
    p[prefix + ".fc1.weight"] = model::uniform_init(rng, n, 2 * n, n);
    p[prefix + ".fc1.bias"] = model::uniform_init(rng, 1, 2 * n, n);
    p[prefix + ".fc2.weight"] = Tensor({2 * n, n});
    p[prefix + ".fc2.bias"] = Tensor({1, n});
  };
  for (std::size_t l = 0; l < c.layers; ++l) {
    const std::string base = "si.mixer." + std::to_string(l);
    mlp(base + ".patch", c.k);
    mlp(base + ".feature", c.d);
  }
  p["si.attention.V.weight"] = model::uniform_init(rng, c.k, c.attention, c.k);
  p["si.attention.V.bias"] = model::uniform_init(rng, 1, c.attention, c.k);
  p["si.attention.U.weight"] = model::uniform_init(rng, c.k, c.attention, c.k);
  p["si.attention.U.bias"] = model::uniform_init(rng, 1, c.attention, c.k);
  p["si.attention.w.weight"] = model::uniform_init(rng, c.attention, 1, c.attention);
  p["si.predictor.weight"] = model::uniform_init(rng, c.d, 1, c.d);
  p["si.predictor.bias"] = model::uniform_init(rng, 1, 1, c.d);
  return p;
}

namespace {

Var residual_mlp(const model::Bound& p, const std::string& prefix, Var x) {
  Var h = gelu(model::linear(x, p[prefix + ".fc1.weight"], p[prefix + ".fc1.bias"]));
  return add(x, model::linear(h, p[prefix + ".fc2.weight"], p[prefix + ".fc2.bias"]));
}

}  // namespace

Var pf_mixer(const model::Bound& p, const SiConfig& c, Var mt) {
  const Tensor& v = mt.value();
  if (v.rank() != 2 || v.rows() != c.d || v.cols() != c.k) {
    throw ShapeError("PF-Mixer input " + v.shape_string() + ", expected " + std::to_string(c.d) + "x" +
                     std::to_string(c.k));
  }
  Var x = mt;
  for (std::size_t l = 0; l < c.layers; ++l) {
    const std::string base = "si.mixer." + std::to_string(l);
    x = residual_mlp(p, base + ".patch", x);
    x = transpose(residual_mlp(p, base + ".feature", transpose(x)));
  }
  return x;
}

Var feature_scores(const model::Bound& p, Var x) {
  Var a = tanh(model::linear(x, p["si.attention.V.weight"], p["si.attention.V.bias"]));
  Var b = sigmoid(model::linear(x, p["si.attention.U.weight"], p["si.attention.U.bias"]));
  return matmul(mul(a, b), p["si.attention.w.weight"]);
}

Var sharpen(Var raw, const BetaConfig& c) {
  const Tensor v = raw.value();  // copy: recording nodes may reallocate graph storage
  Graph& g = raw.graph();
  if (stats::population_std(v.data()) == 0.0) {
    return g.constant(Tensor(v.shape(), 0.5));
  }
  const stats::PercentileWeights pw = stats::percentile_weights(v.data(), c.gamma);
  Var pr = add(scale(gather_rows(raw, {pw.lo}), 1.0 - pw.frac), scale(gather_rows(raw, {pw.hi}), pw.frac));
  Var centered = sub(raw, broadcast_to(pr, v.shape()));
  Var dev = sub(raw, broadcast_to(mean(raw, 0), v.shape()));
  Var sd = sqrt(mean(square(dev)));
  return sigmoid(scale(div(centered, sd), c.t));
}

Prediction linear_predict(const model::Bound& p, Var m, Var beta) {
  const Tensor mv = m.value();
  Var w = p["si.predictor.weight"];
  if (mv.rank() != 2 || beta.value().rows() != mv.cols() || w.value().rows() != mv.cols()) {
    throw ShapeError("linear_predict: M " + mv.shape_string() + ", beta " + beta.value().shape_string() +
                     ", w " + w.value().shape_string());
  }
  Prediction out;
  out.scaled = mul(m, broadcast_to(transpose(beta), mv.shape()));
  out.patch_logits = model::linear(out.scaled, w, p["si.predictor.bias"]);
  out.logit = sum(out.patch_logits);
  out.prob = sigmoid(out.logit);
  return out;
}

SiOutput forward(const model::Bound& p, const SiConfig& c, Var m) {
  SiOutput out;
  out.contextualized = pf_mixer(p, c, transpose(m));
  out.raw_scores = feature_scores(p, out.contextualized);
  out.beta = sharpen(out.raw_scores, c.beta);
  out.prediction = linear_predict(p, m, out.beta);
  return out;
}

std::vector<double> contributions(const Tensor& m, const Tensor& beta, const Tensor& w) {
  std::vector<double> out(m.cols(), 0.0);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) out[j] += w[j] * beta[j] * m.at(i, j);
  }
  return out;
}

}  // namespace simil::si
