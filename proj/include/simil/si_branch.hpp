#pragma once

// Self-interpretable branch: PF-Mixer over the selected K x d feature matrix,
// gated feature attention with percentile/temperature sharpening, and a
// linear predictor applied to the beta-scaled original features.

#include <random>

#include "simil/params.hpp"

namespace simil::si {

using model::ParamSet;
using model::Tensor;
using model::Var;

struct BetaConfig {
  double gamma = 0.75;  // percentile level
  double t = 3.0;       // temperature

  void validate() const;
};

struct SiConfig {
  std::size_t k = 20;
  std::size_t d = 0;
  std::size_t layers = 4;
  std::size_t attention = 32;  // gated feature attention width
  BetaConfig beta;
};

// si.mixer.<l>.patch.fc{1,2}.{weight,bias} (K -> 2K -> K),
// si.mixer.<l>.feature.fc{1,2}.{weight,bias} (d -> 2d -> d), fc2 zero-initialized;
// si.attention.{V,U}.{weight,bias}, si.attention.w.weight; si.predictor.{weight,bias}.
ParamSet init_params(const SiConfig& config, std::mt19937_64& rng);

// Input and output are d x K.
Var pf_mixer(const model::Bound& p, const SiConfig& config, Var mt);

// Raw gated-attention score per feature row: d x 1.
Var feature_scores(const model::Bound& p, Var contextualized);
// sigmoid(t * (raw - percentile_gamma(raw)) / std(raw)); 0.5 everywhere when std is 0.
Var sharpen(Var raw, const BetaConfig& config);

struct Prediction {
  Var scaled;        // K x d, beta_j * M_ij
  Var patch_logits;  // K x 1, sum_j w_j beta_j M_ij + b
  Var logit;         // scalar
  Var prob;
};
Prediction linear_predict(const model::Bound& p, Var m, Var beta);

struct SiOutput {
  Var contextualized;  // d x K
  Var raw_scores;      // d x 1
  Var beta;            // d x 1
  Prediction prediction;
};

// m: K x d selected features.
SiOutput forward(const model::Bound& p, const SiConfig& config, Var m);

// Per-feature contributions sum_i w_j beta_j M_ij for plain tensors (reporting
// and the decomposition check).
std::vector<double> contributions(const Tensor& m, const Tensor& beta, const Tensor& w);

}  // namespace simil::si
