#include <cmath>

#include "doctest.h"
#include "simil/errors.hpp"
#include "simil/si_branch.hpp"
#include "test_util.hpp"

using namespace simil;
using ad::Graph;
using ad::Tensor;
using ad::Var;

namespace {

model::Bound frozen(Graph& g, const model::ParamSet& p) {
  return model::Bound(g, p, [](const std::string&) { return false; });
}

void randomize(model::ParamSet& p, std::mt19937_64& rng) {
  for (auto& [name, t] : p) t = testing::random_tensor(rng, t.shape(), -0.6, 0.6);
}

double gelu_ref(double v) {
  return 0.5 * v * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (v + 0.044715 * v * v * v)));
}

using Mat = std::vector<std::vector<double>>;

Mat to_mat(const Tensor& t) {
  Mat m(t.rows(), std::vector<double>(t.cols()));
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) m[i][j] = t.at(i, j);
  return m;
}

// x + fc2(gelu(fc1(x))) applied to each row of x.
Mat residual_rows(const Mat& x, const model::ParamSet& p, const std::string& prefix) {
  const Tensor &w1 = p.at(prefix + ".fc1.weight"), &b1 = p.at(prefix + ".fc1.bias");
  const Tensor &w2 = p.at(prefix + ".fc2.weight"), &b2 = p.at(prefix + ".fc2.bias");
  Mat out = x;
  for (std::size_t r = 0; r < x.size(); ++r) {
    std::vector<double> h(w1.cols());
    for (std::size_t k = 0; k < w1.cols(); ++k) {
      double s = b1.at(0, k);
      for (std::size_t j = 0; j < x[r].size(); ++j) s += x[r][j] * w1.at(j, k);
      h[k] = gelu_ref(s);
    }
    for (std::size_t j = 0; j < x[r].size(); ++j) {
      double s = b2.at(0, j);
      for (std::size_t k = 0; k < h.size(); ++k) s += h[k] * w2.at(k, j);
      out[r][j] += s;
    }
  }
  return out;
}

Mat transpose(const Mat& m) {
  Mat t(m[0].size(), std::vector<double>(m.size()));
  for (std::size_t i = 0; i < m.size(); ++i)
    for (std::size_t j = 0; j < m[0].size(); ++j) t[j][i] = m[i][j];
  return t;
}

si::SiConfig config(std::size_t k, std::size_t d, std::size_t layers) {
  si::SiConfig c;
  c.k = k;
  c.d = d;
  c.layers = layers;
  c.attention = 4;
  return c;
}

}  // namespace

TEST_CASE("mixer is the identity with no layers and at init") {
  std::mt19937_64 rng(21);
  for (std::size_t layers : {0, 4}) {
    auto c = config(3, 5, layers);
    auto p = si::init_params(c, rng);
    Graph g;
    auto b = frozen(g, p);
    Tensor x = testing::random_tensor(rng, {5, 3});
    CHECK(testing::same_values(si::pf_mixer(b, c, g.constant(x)).value(), x));
  }
}

TEST_CASE("one mixer layer matches the two blocks evaluated directly") {
  std::mt19937_64 rng(22);
  auto c = config(2, 3, 1);
  auto p = si::init_params(c, rng);
  randomize(p, rng);
  Graph g;
  auto b = frozen(g, p);
  Tensor x = testing::random_tensor(rng, {3, 2});
  Tensor out = si::pf_mixer(b, c, g.constant(x)).value();
  Mat ref = residual_rows(to_mat(x), p, "si.mixer.0.patch");
  ref = transpose(residual_rows(transpose(ref), p, "si.mixer.0.feature"));
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 2; ++j) CHECK(std::abs(out.at(i, j) - ref[i][j]) <= 1e-12);
  CHECK_THROWS_AS(si::pf_mixer(b, c, g.constant(Tensor({2, 3}))), ShapeError);
}

TEST_CASE("sharpening example") {
  Graph g;
  Tensor raw({4, 1}, {1, 2, 3, 4});
  Tensor beta = si::sharpen(g.constant(raw), {0.75, 3.0}).value();
  const double sd = std::sqrt(1.25);
  for (std::size_t j = 0; j < 4; ++j) {
    const double expect = 1.0 / (1.0 + std::exp(-3.0 * (raw.data()[j] - 3.25) / sd));
    CHECK(beta.data()[j] == doctest::Approx(expect).epsilon(1e-12));
  }
  CHECK(beta.data()[3] == doctest::Approx(0.882).epsilon(1e-3));
}

TEST_CASE("equal raw scores give one half") {
  Graph g;
  Tensor beta = si::sharpen(g.constant(Tensor({5, 1}, 0.7)), {}).value();
  for (double v : beta.data()) CHECK(v == 0.5);
}

TEST_CASE("large temperature hard-thresholds at the percentile") {
  std::mt19937_64 rng(23);
  for (std::size_t d : {4, 7, 12, 20}) {
    Tensor raw = testing::random_tensor(rng, {d, 1});
    Graph g;
    const double gamma = 0.75;
    Tensor beta = si::sharpen(g.constant(raw), {gamma, 1e6}).value();
    std::size_t high = 0;
    for (double v : beta.data()) {
      CHECK((v < 1e-6 || v > 1 - 1e-6));
      high += v > 0.5;
    }
    CHECK(high == static_cast<std::size_t>(std::ceil((1 - gamma) * static_cast<double>(d))));
  }
}

TEST_CASE("beta is monotone in the raw scores and inside (0,1)") {
  std::mt19937_64 rng(24);
  Tensor raw = testing::random_tensor(rng, {9, 1});
  Graph g;
  Tensor beta = si::sharpen(g.constant(raw), {}).value();
  for (std::size_t i = 0; i < 9; ++i) {
    CHECK(beta.data()[i] > 0.0);
    CHECK(beta.data()[i] < 1.0);
    for (std::size_t j = 0; j < 9; ++j)
      if (raw.data()[i] < raw.data()[j]) CHECK(beta.data()[i] <= beta.data()[j]);
  }
}

TEST_CASE("sharpening gradient") {
  std::mt19937_64 rng(25);
  Tensor raw = testing::random_tensor(rng, {6, 1});
  Tensor weights = testing::random_tensor(rng, {6, 1});
  auto report = ad::grad_check(
      [&](Graph& g, std::span<const Var> v) { return sum(mul(si::sharpen(v[0], {}), g.constant(weights))); },
      {raw}, 1e-6, 1e-5);
  CHECK(report.passed);
}

TEST_CASE("linear prediction examples") {
  std::mt19937_64 rng(26);
  auto c = config(20, 6, 1);
  auto p = si::init_params(c, rng);
  SUBCASE("basis weight and ones") {
    p["si.predictor.weight"] = Tensor({6, 1});
    p["si.predictor.weight"].at(0, 0) = 1.0;
    p["si.predictor.bias"] = Tensor({1, 1});
    Graph g;
    auto b = frozen(g, p);
    auto pred = si::linear_predict(b, g.constant(Tensor({20, 6}, 1.0)), g.constant(Tensor({6, 1}, 1.0)));
    CHECK(pred.prob.item() == doctest::Approx(1.0 / (1.0 + std::exp(-20.0))).epsilon(1e-14));
  }
  SUBCASE("zero predictor") {
    p["si.predictor.weight"] = Tensor({6, 1});
    p["si.predictor.bias"] = Tensor({1, 1});
    Graph g;
    auto b = frozen(g, p);
    auto pred = si::linear_predict(b, g.constant(testing::random_tensor(rng, {20, 6})),
                                   g.constant(testing::random_tensor(rng, {6, 1}, 0, 1)));
    CHECK(pred.prob.item() == 0.5);
  }
  SUBCASE("shape errors") {
    Graph g;
    auto b = frozen(g, p);
    CHECK_THROWS_AS(si::linear_predict(b, g.constant(Tensor({20, 5})), g.constant(Tensor({6, 1}))), ShapeError);
  }
}

TEST_CASE("decomposition on a random K=4 d=5 instance") {
  std::mt19937_64 rng(27);
  auto c = config(4, 5, 2);
  auto p = si::init_params(c, rng);
  randomize(p, rng);
  Graph g;
  auto b = frozen(g, p);
  Tensor m = testing::random_tensor(rng, {4, 5}, -2, 2);
  auto out = si::forward(b, c, g.constant(m));
  const Tensor& beta = out.beta.value();
  const Tensor& w = p.at("si.predictor.weight");
  double total = 4.0 * p.at("si.predictor.bias").item();
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 5; ++j) total += w.at(j, 0) * beta.at(j, 0) * m.at(i, j);
  CHECK(std::abs(out.prediction.logit.item() - total) <= 1e-12);
  CHECK(std::abs(out.prediction.prob.item() - 1.0 / (1.0 + std::exp(-total))) <= 1e-12);
  double csum = 4.0 * p.at("si.predictor.bias").item();
  for (double v : si::contributions(m, beta, w)) csum += v;
  CHECK(std::abs(csum - total) <= 1e-12);
}

TEST_CASE("the mixer acts only through beta") {
  std::mt19937_64 rng(28);
  auto c = config(3, 4, 2);
  auto p = si::init_params(c, rng);
  randomize(p, rng);
  auto q = p;
  for (auto& [name, t] : q)
    if (name.rfind("si.mixer.", 0) == 0) t = testing::random_tensor(rng, t.shape());
  Tensor m = testing::random_tensor(rng, {3, 4});
  Tensor beta = testing::random_tensor(rng, {4, 1}, 0.05, 0.95);
  Graph g;
  auto bp = frozen(g, p);
  auto bq = frozen(g, q);
  CHECK(si::linear_predict(bp, g.constant(m), g.constant(beta)).prob.item() ==
        si::linear_predict(bq, g.constant(m), g.constant(beta)).prob.item());
  CHECK_FALSE(testing::same_values(si::forward(bp, c, g.constant(m)).beta.value(), si::forward(bq, c, g.constant(m)).beta.value()));
}

TEST_CASE("branch gradients match finite differences") {
  std::mt19937_64 rng(29);
  auto c = config(3, 5, 2);
  auto p = si::init_params(c, rng);
  randomize(p, rng);
  const Tensor m = testing::random_tensor(rng, {3, 5});
  std::vector<std::string> names;
  std::vector<Tensor> values;
  for (const auto& [n, t] : p) {
    names.push_back(n);
    values.push_back(t);
  }
  auto report = ad::grad_check(
      [&](Graph& g, std::span<const Var> vars) {
        std::map<std::string, Var> bound;
        for (std::size_t i = 0; i < names.size(); ++i) bound.emplace(names[i], vars[i]);
        model::Bound b(g, std::move(bound));
        return si::forward(b, c, g.constant(m)).prediction.prob;
      },
      values, 1e-6, 1e-4);
  CHECK(report.passed);
}

TEST_CASE("beta config validation") {
  CHECK_THROWS_AS((si::BetaConfig{0.0, 3.0}.validate()), ContractError);
  CHECK_THROWS_AS((si::BetaConfig{0.5, 0.0}.validate()), ContractError);
}
