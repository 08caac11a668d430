#pragma once

// Descriptive statistics shared across the feature pipeline and analytics.
// Population conventions throughout: std divides by n, skewness is the
// Fisher-Pearson g1 (0 for n < 3), kurtosis is excess kurtosis (0 for n < 4),
// and both are 0 when the variance is 0.

#include <span>
#include <vector>

namespace simil::stats {

double mean(std::span<const double> xs);
double population_std(std::span<const double> xs);
double skewness(std::span<const double> xs);
double excess_kurtosis(std::span<const double> xs);
double max(std::span<const double> xs);  // 0 for empty input

// Linear-interpolation percentile at q in [0,1] (position q*(n-1) in the
// sorted sample).
double percentile(std::span<const double> xs, double q);

struct PercentileWeights {
  std::size_t lo;  // index into the original (unsorted) sample
  std::size_t hi;
  double frac;     // value = (1-frac)*x[lo] + frac*x[hi]
};
PercentileWeights percentile_weights(std::span<const double> xs, double q);

}  // namespace simil::stats
