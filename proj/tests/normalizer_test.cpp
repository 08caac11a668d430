#include <cmath>

#include "doctest.h"
#include "simil/errors.hpp"
#include "simil/normalizer.hpp"
#include "simil/stats.hpp"
#include "test_util.hpp"

using namespace simil;

namespace {

FeatureMatrix canonical(std::size_t rows, std::mt19937_64& rng) {
  FeatureMatrix m;
  m.columns = feature_columns(2);
  std::normal_distribution<double> n(0.0, 3.0);
  for (std::size_t i = 0; i < rows; ++i) {
    std::vector<double> row(m.columns.size());
    for (std::size_t j = 0; j < row.size(); ++j) row[j] = j % 7 == 0 ? std::round(n(rng)) : n(rng) * (1 + j);
    row[5] = 4.0;  // constant column
    m.append({"s", "p" + std::to_string(i)}, row);
  }
  return m;
}

}  // namespace

TEST_CASE("decile edges on 1..100") {
  FeatureMatrix m;
  m.columns = feature_columns(2);
  for (int i = 1; i <= 100; ++i) m.append({"s", std::to_string(i)}, std::vector<double>(m.columns.size(), i));
  const auto man = norm::fit(m);
  const auto& f = man.features[0];
  for (int k = 0; k < 9; ++k) CHECK(f.edges[k] == doctest::Approx(10.9 + 9.9 * k));
  CHECK(norm::bin_index(f, -5) == 0);
  CHECK(norm::bin_index(f, 1e9) == 9);
  CHECK(norm::bin_index(f, 55) == 5);
  // binned training values: 10 per bin -> mean 4.5, population std sqrt(8.25)
  CHECK(f.mean == doctest::Approx(4.5));
  CHECK(f.std == doctest::Approx(std::sqrt(8.25)));
  CHECK(norm::normalize_value(f, 55) == doctest::Approx((5 - 4.5) / std::sqrt(8.25)));
}

TEST_CASE("normalizer properties") {
  std::mt19937_64 rng(12);
  const FeatureMatrix train = canonical(300, rng);
  const auto man = norm::fit(train);

  SUBCASE("constant feature") {
    const auto& f = man.features[5];
    for (double e : f.edges) CHECK(e == 4.0);
    CHECK(f.std == 0.0);
    CHECK(norm::normalize_value(f, 4.0) == 0.0);
    CHECK(norm::normalize_value(f, 100.0) == 0.0);
  }
  SUBCASE("training matrix is standardized") {
    const FeatureMatrix z = norm::apply(man, train);
    for (std::size_t j = 0; j < z.columns.size(); ++j) {
      if (man.features[j].std == 0.0) continue;
      std::vector<double> col;
      for (const auto& r : z.rows) col.push_back(r[j]);
      CHECK(std::abs(stats::mean(col)) <= 1e-9);
      CHECK(std::abs(stats::population_std(col) - 1.0) <= 1e-9);
    }
  }
  SUBCASE("bins and monotonicity") {
    std::uniform_real_distribution<double> u(-100, 100);
    for (std::size_t j : {0u, 1u, 7u, 50u}) {
      const auto& f = man.features[j];
      std::vector<double> probes(1000);
      for (double& p : probes) p = u(rng) * (1 + j);
      std::sort(probes.begin(), probes.end());
      double prev = -1e300;
      for (double p : probes) {
        const int b = norm::bin_index(f, p);
        CHECK(b >= 0);
        CHECK(b <= 9);
        const double v = norm::normalize_value(f, p);
        CHECK(v >= prev);
        prev = v;
      }
    }
  }
  SUBCASE("deterministic refit and json round trip") {
    const auto again = norm::fit(train);
    CHECK(norm::to_json(again) == norm::to_json(man));
    const auto back = norm::from_json(norm::to_json(man));
    CHECK(norm::to_json(back).dump() == norm::to_json(man).dump());
    CHECK(back.fingerprint == norm::fingerprint(train));
  }
  SUBCASE("errors") {
    FeatureMatrix small = canonical(9, rng);
    CHECK_THROWS_AS(norm::fit(small), FitError);
    FeatureMatrix generic;
    generic.columns = {"a", "b"};
    for (int i = 0; i < 20; ++i) generic.append({"s", std::to_string(i)}, {1.0 * i, 2.0});
    CHECK_THROWS_AS(norm::fit(generic), FormatError);
    FeatureMatrix other = train;
    std::swap(other.columns[0], other.columns[1]);
    CHECK_THROWS_AS(norm::apply(man, other), FormatError);
  }
}

TEST_CASE("manifest survives a round trip when values differ by an ulp") {
  std::mt19937_64 rng(4);
  FeatureMatrix m = canonical(12, rng);
  for (std::size_t i = 0; i < m.size(); ++i) m.rows[i][3] = i % 5 ? 0.6931471805599453 : 0.6931471805599454;
  const auto nm = norm::fit(m);
  const auto back = norm::from_json(nlohmann::json::parse(norm::to_json(nm).dump()));
  CHECK(back.features[3].edges == nm.features[3].edges);
}

TEST_CASE("column scaler") {
  std::mt19937_64 rng(2);
  const Tensor a = simil::testing::random_tensor(rng, {5, 3});
  Tensor b = simil::testing::random_tensor(rng, {4, 3});
  for (std::size_t r = 0; r < 4; ++r) b.at(r, 2) = a.at(0, 2);
  Tensor c = a;
  for (std::size_t r = 0; r < 5; ++r) c.at(r, 2) = a.at(0, 2);
  const auto s = norm::fit_scaler({&c, &b});
  CHECK(s.std[2] == 1.0);
  const Tensor z = norm::apply_scaler(s, c);
  double mean0 = 0;
  for (std::size_t r = 0; r < 5; ++r) mean0 += c.at(r, 0);
  for (std::size_t r = 0; r < 4; ++r) mean0 += b.at(r, 0);
  mean0 /= 9;
  CHECK(s.mean[0] == doctest::Approx(mean0));
  CHECK(z.at(0, 2) == 0.0);
}
