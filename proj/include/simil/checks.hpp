#pragma once

// Seeded self-checks of the model's gradient and interpretability contracts.
// Shared by the gradcheck subcommand and the test suites.

#include <cstdint>
#include <vector>

#include "simil/autodiff.hpp"
#include "simil/model.hpp"

namespace simil::checks {

struct Instance {
  net::Model model;
  Bag bag;
};

// Random model with every parameter (including zero-initialized ones) drawn
// from U(-1/sqrt(rows), 1/sqrt(rows)), plus a random bag.
Instance random_instance(std::size_t n, std::size_t deep_dim, std::size_t path_dim, std::size_t k,
                         std::uint64_t seed, std::size_t mixer_layers = 4);

// Central-difference check of the full loss over all mil.* and si.*
// parameters (five-point stencil), with the Top-K indicator held at its seeded
// Monte-Carlo value.
ad::GradCheckReport full_loss_gradcheck(const Instance& instance, double lambda = 20.0, double step = 3e-5,
                                        double tol = 1e-4);

struct TopkFdResult {
  std::vector<double> estimator;  // d(weight on index 0)/d alpha
  std::vector<double> finite_difference;
  std::vector<double> analytic;
  double max_relative_error = 0.0;  // estimator vs finite difference
};

// N=2, K=1 perturbed Top-K at alpha = [1.0, 0.9]: estimator gradient against a
// common-random-number finite difference of the Monte-Carlo forward.
TopkFdResult topk_crn_check(double sigma = 0.5, std::size_t samples = 1000000, double h = 0.05,
                            std::uint64_t seed = 0);

// Ratio var(S samples) / var(2S samples) of the estimator over seeded trials.
double topk_variance_ratio(std::size_t trials = 100, std::size_t samples = 64, std::uint64_t seed = 0);

// max |logit - (sum_ij w_j beta_j M_ij + K b)| over random instances.
double decomposition_max_error(std::size_t instances, std::uint64_t seed);

struct StopGradientReport {
  double max_mil_exclusive = 0.0;  // |grad| over mil.classifier.* under the KD term only
  double max_mil_barrier = 0.0;    // |grad| over all mil.* with the hard-selection barrier
  double mil_prob_grad = 0.0;      // gradient reaching Y_g
  double max_si = 0.0;             // largest |grad| over si.*
};
StopGradientReport kd_only_gradients(const Instance& instance);

}  // namespace simil::checks
