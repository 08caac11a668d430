#include "simil/mil_branch.hpp"

#include "simil/errors.hpp"

namespace simil::mil {

using namespace simil::ad;

ParamSet init_params(const MilConfig& c, std::mt19937_64& rng) {
  if (c.input_dim == 0) throw ShapeError("MIL input dimension must be positive");
  ParamSet p;
  if (c.use_projector) {
    p["mil.projector.weight"] = model::uniform_init(rng, c.input_dim, c.hidden, c.input_dim);
    p["mil.projector.bias"] = model::uniform_init(rng, 1, c.hidden, c.input_dim);
  }
  const std::size_t h = c.embed_dim();
  p["mil.attention.V.weight"] = model::uniform_init(rng, h, c.attention, h);
  p["mil.attention.V.bias"] = model::uniform_init(rng, 1, c.attention, h);
  p["mil.attention.U.weight"] = model::uniform_init(rng, h, c.attention, h);
  p["mil.attention.U.bias"] = model::uniform_init(rng, 1, c.attention, h);
  p["mil.attention.w.weight"] = model::uniform_init(rng, c.attention, 1, c.attention);
  p["mil.classifier.weight"] = model::uniform_init(rng, h, 1, h);
  p["mil.classifier.bias"] = model::uniform_init(rng, 1, 1, h);
  return p;
}

Var project(const model::Bound& p, const MilConfig& c, Var features) {
  if (features.value().rank() != 2 || features.value().cols() != c.input_dim) {
    throw ShapeError("MIL input has shape " + features.value().shape_string() + ", expected N x " +
                     std::to_string(c.input_dim));
  }
  if (!c.use_projector) return features;
  return relu(model::linear(features, p["mil.projector.weight"], p["mil.projector.bias"]));
}

Var patch_attention(const model::Bound& p, Var embedded, Var* scores_out) {
  Var a = tanh(model::linear(embedded, p["mil.attention.V.weight"], p["mil.attention.V.bias"]));
  Var b = sigmoid(model::linear(embedded, p["mil.attention.U.weight"], p["mil.attention.U.bias"]));
  Var scores = matmul(mul(a, b), p["mil.attention.w.weight"]);
  if (scores_out) *scores_out = scores;
  return softmax(scores, 0);
}

std::pair<Var, Var> additive_logits(const model::Bound& p, Var embedded, Var alpha) {
  Var weighted = mul(broadcast_to(alpha, embedded.shape()), embedded);
  Var logits = model::linear(weighted, p["mil.classifier.weight"], p["mil.classifier.bias"]);
  return {logits, sum(logits)};
}

MilOutput forward(const model::Bound& p, const MilConfig& c, Var features) {
  MilOutput out;
  out.embedded = project(p, c, features);
  out.alpha = patch_attention(p, out.embedded, &out.scores);
  std::tie(out.patch_logits, out.logit) = additive_logits(p, out.embedded, out.alpha);
  out.prob = sigmoid(out.logit);
  return out;
}

}  // namespace simil::mil
