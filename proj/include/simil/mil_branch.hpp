#pragma once

// Additive attention MIL branch: projector H, gated patch attention and a
// per-patch linear predictor whose logits are summed before the sigmoid.

#include <random>

#include "simil/params.hpp"

namespace simil::mil {

using model::ParamSet;
using model::Tensor;
using model::Var;

struct MilConfig {
  std::size_t input_dim = 0;
  std::size_t hidden = 128;     // projector width h
  std::size_t attention = 64;   // gated attention width a
  bool use_projector = true;    // false: H is the identity and h = input_dim

  std::size_t embed_dim() const { return use_projector ? hidden : input_dim; }
};

// Parameters under mil.*: projector.{weight,bias}, attention.{V,U}.{weight,bias},
// attention.w.weight, classifier.{weight,bias}.
ParamSet init_params(const MilConfig& config, std::mt19937_64& rng);

struct MilOutput {
  Var embedded;      // N x h
  Var scores;        // N x 1 pre-softmax attention
  Var alpha;         // N x 1
  Var patch_logits;  // N x 1, C(alpha_i * g_i)
  Var logit;         // scalar
  Var prob;          // scalar, sigmoid(logit)
};

Var project(const model::Bound& p, const MilConfig& config, Var features);
Var patch_attention(const model::Bound& p, Var embedded, Var* scores_out = nullptr);
// Per-patch logits and their sum.
std::pair<Var, Var> additive_logits(const model::Bound& p, Var embedded, Var alpha);

MilOutput forward(const model::Bound& p, const MilConfig& config, Var features);

}  // namespace simil::mil
