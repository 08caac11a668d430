#pragma once

// Patch-attention-guided Top-K: hard selection for inference and a
// Monte-Carlo perturbed (Gaussian) relaxation with the perturbed-maximizer
// Jacobian estimator for training.

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "simil/autodiff.hpp"

namespace simil::topk {

using ad::Tensor;
using ad::Var;

struct TopKConfig {
  std::size_t k = 20;
  double sigma = 0.05;
  std::size_t samples = 64;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Selection {
  std::vector<std::size_t> indices;  // rank order, length K
  bool padded = false;               // bag smaller than K; last index repeated
};

// Descending by score, ties to the lower index.
Selection hard_topk(std::span<const double> scores, std::size_t k);
// K x N one-hot rows in rank order.
Tensor indicator(const Selection& selection, std::size_t n);

// Forward/backward pair with the perturbations retained between calls.
class PerturbedTopK {
 public:
  explicit PerturbedTopK(TopKConfig config);

  // (1/S) sum_s hard_topk(scores + sigma * eps_s), K x N.
  Tensor forward(std::span<const double> scores);
  // grad_n = 1/(S sigma) sum_s <upstream, Y_s> eps_s[n]. Requires forward().
  std::vector<double> backward(const Tensor& upstream) const;

  const TopKConfig& config() const { return config_; }
  bool padded() const { return padded_; }

 private:
  TopKConfig config_;
  std::size_t n_ = 0;
  bool padded_ = false;
  std::vector<double> noise_;                // samples x N
  std::vector<std::size_t> selected_;        // samples x K
};

// Differentiable node: scores must be N x 1; output K x N.
Var perturbed_topk(Var scores, const TopKConfig& config);
// Hard K x N indicator as a constant (gradient barrier).
Var hard_indicator(Var scores, std::size_t k);

// M = indicator (K x N) * features (N x d).
Var select_features(Var indicator, Var features);

}  // namespace simil::topk
