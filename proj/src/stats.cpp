#include "simil/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "simil/errors.hpp"

namespace simil::stats {

namespace {

struct Central {
  double m2 = 0.0, m3 = 0.0, m4 = 0.0;
};

Central central_moments(std::span<const double> xs) {
  Central c;
  if (xs.empty()) return c;
  const double mu = mean(xs);
  for (double x : xs) {
    const double d = x - mu;
    const double d2 = d * d;
    c.m2 += d2;
    c.m3 += d2 * d;
    c.m4 += d2 * d2;
  }
  const double n = static_cast<double>(xs.size());
  c.m2 /= n;
  c.m3 /= n;
  c.m4 /= n;
  return c;
}

// Variance this small relative to the data scale is treated as zero so that
// constant samples do not produce rounding-noise skewness.
bool degenerate(std::span<const double> xs, double m2) {
  double scale = 0.0;
  for (double x : xs) scale = std::max(scale, std::abs(x));
  return m2 <= 1e-24 * std::max(1.0, scale * scale);
}

}  // namespace

double mean(std::span<const double> xs) {
  if (xs.empty()) return 0.0;
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

double population_std(std::span<const double> xs) {
  const Central c = central_moments(xs);
  if (degenerate(xs, c.m2)) return 0.0;
  return std::sqrt(c.m2);
}

double skewness(std::span<const double> xs) {
  if (xs.size() < 3) return 0.0;
  const Central c = central_moments(xs);
  if (degenerate(xs, c.m2)) return 0.0;
  return c.m3 / std::pow(c.m2, 1.5);
}

double excess_kurtosis(std::span<const double> xs) {
  if (xs.size() < 4) return 0.0;
  const Central c = central_moments(xs);
  if (degenerate(xs, c.m2)) return 0.0;
  return c.m4 / (c.m2 * c.m2) - 3.0;
}

double max(std::span<const double> xs) {
  if (xs.empty()) return 0.0;
  return *std::max_element(xs.begin(), xs.end());
}

PercentileWeights percentile_weights(std::span<const double> xs, double q) {
  if (xs.empty()) throw DomainError("percentile of an empty sample");
  if (!(q >= 0.0 && q <= 1.0)) throw DomainError("percentile level outside [0,1]");
  std::vector<std::size_t> order(xs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
  const double pos = q * static_cast<double>(xs.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, xs.size() - 1);
  return {order[lo], order[hi], pos - static_cast<double>(lo)};
}

double percentile(std::span<const double> xs, double q) {
  const PercentileWeights w = percentile_weights(xs, q);
  const double a = xs[w.lo], b = xs[w.hi];
  // stays within [a, b] under rounding
  return std::clamp(a + w.frac * (b - a), a, b);
}

}  // namespace simil::stats
