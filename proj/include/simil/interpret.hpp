#pragma once

// Per-slide patch/feature contribution reports and cohort-level class
// separability (univariate JS ranking, 2D projection, silhouette, GMM JS).

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "simil/featio.hpp"
#include "simil/model.hpp"

namespace simil::interp {

inline constexpr int kReportSchemaVersion = 1;

struct Histogram {
  double lo = 0.0, hi = 0.0;
  std::vector<std::size_t> counts;
};

struct Report {
  std::string slide_id;
  double prob = 0.5;    // SI-branch prediction
  double logit = 0.0;   // pre-sigmoid
  std::vector<std::string> patch_ids;  // top-K in rank order
  std::vector<double> alpha;
  bool padded = false;
  std::vector<std::string> columns;
  std::vector<double> beta;
  std::vector<double> contribution;  // sum_i w_j beta_j M_ij
  std::vector<double> mean_contribution, ci_low, ci_high;
  std::vector<Histogram> histograms;  // feature values over the K patches
  std::vector<std::size_t> top_features;  // by |contribution|, at most 10
  double bias_offset = 0.0;  // K * b
};

// Inference with hard Top-K. Column names default to f0..f{d-1}.
Report patch_feature_report(const net::Model& model, const Bag& bag, std::vector<std::string> columns = {});
nlohmann::json to_json(const Report& report);
std::string report_svg(const Report& report);

// Histogram JS divergence (nats) over the pooled min-max support.
double js_divergence(std::span<const double> a, std::span<const double> b, std::size_t bins = 32);

struct FeatureJs {
  std::size_t feature;
  double js;
};

struct Univariate {
  std::vector<FeatureJs> ranked;      // descending, ties by index
  std::vector<double> median_curve;   // median JS of the top-n, n = 1..d
};

// Rows are patches or slides of one class each (at least 20 per class).
Univariate univariate_separability(const std::vector<std::vector<double>>& f1,
                                   const std::vector<std::vector<double>>& f2);

struct Projection {
  std::vector<std::array<double, 2>> coords;  // f1 rows then f2 rows
  std::array<std::vector<double>, 2> loadings;
};

// PCA on pooled, column-standardized rows; each component's largest-|loading|
// entry is made positive.
Projection pca_2d(const std::vector<std::vector<double>>& rows);

double silhouette(const std::vector<std::array<double, 2>>& points, const std::vector<int>& labels);

struct Gaussian2 {
  double weight;
  std::array<double, 2> mean;
  std::array<double, 4> cov;  // row-major 2x2
};
using Mixture = std::vector<Gaussian2>;

// EM with k-means++ initialization, 100 iterations, covariance floor 1e-6.
// Retries with derived seeds up to 3 times; absent when every attempt degenerates.
std::optional<Mixture> fit_gmm(const std::vector<std::array<double, 2>>& points, std::size_t k,
                               std::uint64_t seed);
double gmm_density(const Mixture& m, const std::array<double, 2>& x);
std::vector<std::array<double, 2>> gmm_sample(const Mixture& m, std::size_t n, std::uint64_t seed);
// Monte-Carlo JS (nats), draws per side.
double gmm_js(const Mixture& p, const Mixture& q, std::size_t draws, std::uint64_t seed);

struct Multivariate {
  double silhouette = 0.0;
  std::array<std::optional<double>, 4> js_at;  // JSdiv@1..4
  Projection projection;
};

// At least 50 rows per class.
Multivariate multivariate_separability(const std::vector<std::vector<double>>& f1,
                                       const std::vector<std::vector<double>>& f2, std::uint64_t seed = 0);

struct CohortStats {
  std::vector<std::string> columns;
  std::size_t rows[2] = {0, 0};
  Univariate univariate;
  std::optional<Multivariate> multivariate;  // absent below 50 rows per class
};
nlohmann::json to_json(const CohortStats& stats);

// PathExpert rows of the hard top-K patches of a bag, padding repeats dropped.
std::vector<std::vector<double>> selected_rows(const net::Model& model, const Bag& bag);

struct CohortRows {
  std::vector<std::vector<double>> by_class[2];
  void add(const net::Model& model, const Bag& bag);
};

CohortStats cohort_stats(const CohortRows& rows, std::vector<std::string> columns, std::uint64_t seed = 0);

}  // namespace simil::interp
