#include <cmath>
#include <numeric>

#include "doctest.h"
#include "simil/errors.hpp"
#include "simil/mil_branch.hpp"
#include "test_util.hpp"

using namespace simil;
using ad::Graph;
using ad::Tensor;
using ad::Var;

namespace {

mil::MilConfig small_config() {
  mil::MilConfig c;
  c.input_dim = 4;
  c.hidden = 6;
  c.attention = 5;
  return c;
}

model::Bound frozen(Graph& g, const model::ParamSet& p) {
  return model::Bound(g, p, [](const std::string&) { return false; });
}

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Straight-line reimplementation of the branch.
struct Oracle {
  const model::ParamSet& p;
  bool projector = true;

  std::vector<std::vector<double>> embed(const Tensor& x) const {
    if (!projector) {
      std::vector<std::vector<double>> out(x.rows(), std::vector<double>(x.cols()));
      for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t j = 0; j < x.cols(); ++j) out[i][j] = x.at(i, j);
      return out;
    }
    const Tensor& w = p.at("mil.projector.weight");
    const Tensor& b = p.at("mil.projector.bias");
    std::vector<std::vector<double>> out(x.rows(), std::vector<double>(w.cols()));
    for (std::size_t i = 0; i < x.rows(); ++i)
      for (std::size_t k = 0; k < w.cols(); ++k) {
        double s = b.at(0, k);
        for (std::size_t j = 0; j < x.cols(); ++j) s += x.at(i, j) * w.at(j, k);
        out[i][k] = std::max(0.0, s);
      }
    return out;
  }
  double score(const std::vector<double>& g) const {
    const Tensor &v = p.at("mil.attention.V.weight"), &vb = p.at("mil.attention.V.bias");
    const Tensor &u = p.at("mil.attention.U.weight"), &ub = p.at("mil.attention.U.bias");
    const Tensor& w = p.at("mil.attention.w.weight");
    double s = 0.0;
    for (std::size_t a = 0; a < v.cols(); ++a) {
      double sv = vb.at(0, a), su = ub.at(0, a);
      for (std::size_t k = 0; k < g.size(); ++k) {
        sv += g[k] * v.at(k, a);
        su += g[k] * u.at(k, a);
      }
      s += w.at(a, 0) * std::tanh(sv) * sig(su);
    }
    return s;
  }
  double prob(const Tensor& x) const {
    const auto g = embed(x);
    std::vector<double> s;
    for (const auto& row : g) s.push_back(score(row));
    const double mx = *std::max_element(s.begin(), s.end());
    double z = 0.0;
    for (double v : s) z += std::exp(v - mx);
    const Tensor &c = p.at("mil.classifier.weight"), &cb = p.at("mil.classifier.bias");
    double logit = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double a = std::exp(s[i] - mx) / z;
      double l = cb.item();
      for (std::size_t k = 0; k < g[i].size(); ++k) l += a * g[i][k] * c.at(k, 0);
      logit += l;
    }
    return sig(logit);
  }
};

}  // namespace

TEST_CASE("projector with zero weights gives zeros") {
  std::mt19937_64 rng(1);
  auto cfg = small_config();
  auto p = mil::init_params(cfg, rng);
  p["mil.projector.weight"] = Tensor({4, 6});
  p["mil.projector.bias"] = Tensor({1, 6});
  Graph g;
  auto b = frozen(g, p);
  Var out = mil::project(b, cfg, g.constant(testing::random_tensor(rng, {3, 4})));
  for (double v : out.value().data()) CHECK(v == 0.0);
}

TEST_CASE("identity ablation and shape errors") {
  std::mt19937_64 rng(2);
  auto cfg = small_config();
  cfg.use_projector = false;
  auto p = mil::init_params(cfg, rng);
  CHECK(p.count("mil.projector.weight") == 0);
  Graph g;
  auto b = frozen(g, p);
  Tensor x = testing::random_tensor(rng, {3, 4});
  CHECK(testing::same_values(mil::project(b, cfg, g.constant(x)).value(), x));
  CHECK_THROWS_AS(mil::project(b, cfg, g.constant(Tensor({3, 5}))), ShapeError);
}

TEST_CASE("projector matches dense matmul") {
  std::mt19937_64 rng(3);
  auto cfg = small_config();
  auto p = mil::init_params(cfg, rng);
  Graph g;
  auto b = frozen(g, p);
  Tensor x = testing::random_tensor(rng, {3, 4});
  Tensor out = mil::project(b, cfg, g.constant(x)).value();
  const auto ref = Oracle{p}.embed(x);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t k = 0; k < 6; ++k) CHECK(std::abs(out.at(i, k) - ref[i][k]) <= 1e-12);
}

TEST_CASE("attention on identical rows and single patch") {
  std::mt19937_64 rng(4);
  auto cfg = small_config();
  auto p = mil::init_params(cfg, rng);
  Graph g;
  auto b = frozen(g, p);
  Tensor row = testing::random_tensor(rng, {1, 6});
  Tensor rows({4, 6});
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t k = 0; k < 6; ++k) rows.at(i, k) = row.at(0, k);
  for (double a : mil::patch_attention(b, g.constant(rows)).value().data()) CHECK(a == doctest::Approx(0.25));
  CHECK(mil::patch_attention(b, g.constant(row)).value().item() == doctest::Approx(1.0));
}

TEST_CASE("gated attention matches the formula") {
  std::mt19937_64 rng(5);
  auto cfg = small_config();
  auto p = mil::init_params(cfg, rng);
  Graph g;
  auto b = frozen(g, p);
  Tensor e = testing::random_tensor(rng, {5, 6});
  Var scores;
  Tensor alpha = mil::patch_attention(b, g.constant(e), &scores).value();
  Oracle o{p};
  double total = 0.0;
  for (std::size_t i = 0; i < 5; ++i) {
    std::vector<double> row(6);
    for (std::size_t k = 0; k < 6; ++k) row[k] = e.at(i, k);
    CHECK(std::abs(scores.value().at(i, 0) - o.score(row)) <= 1e-12);
    total += alpha.at(i, 0);
  }
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("additive prediction") {
  std::mt19937_64 rng(6);
  auto cfg = small_config();
  auto p = mil::init_params(cfg, rng);
  SUBCASE("zero classifier gives 0.5") {
    p["mil.classifier.weight"] = Tensor({6, 1});
    p["mil.classifier.bias"] = Tensor({1, 1});
    Graph g;
    auto b = frozen(g, p);
    CHECK(mil::forward(b, cfg, g.constant(testing::random_tensor(rng, {6, 4}))).prob.item() == 0.5);
  }
  SUBCASE("single patch") {
    Graph g;
    auto b = frozen(g, p);
    Tensor x = testing::random_tensor(rng, {1, 4});
    auto out = mil::forward(b, cfg, g.constant(x));
    const auto e = Oracle{p}.embed(x)[0];
    double l = p.at("mil.classifier.bias").item();
    for (std::size_t k = 0; k < 6; ++k) l += e[k] * p.at("mil.classifier.weight").at(k, 0);
    CHECK(std::abs(out.prob.item() - sig(l)) <= 1e-12);
  }
  SUBCASE("six patches vs oracle") {
    Graph g;
    auto b = frozen(g, p);
    Tensor x = testing::random_tensor(rng, {6, 4});
    auto out = mil::forward(b, cfg, g.constant(x));
    CHECK(std::abs(out.prob.item() - Oracle{p}.prob(x)) <= 1e-12);
    double s = 0.0;
    for (double v : out.patch_logits.value().data()) s += v;
    CHECK(std::abs(s - out.logit.item()) <= 1e-12);
  }
}

TEST_CASE("bag prediction is permutation invariant") {
  std::mt19937_64 rng(7);
  auto cfg = small_config();
  auto p = mil::init_params(cfg, rng);
  Tensor x = testing::random_tensor(rng, {7, 4});
  std::vector<std::size_t> perm(7);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  Tensor y({7, 4});
  for (std::size_t i = 0; i < 7; ++i)
    for (std::size_t j = 0; j < 4; ++j) y.at(i, j) = x.at(perm[i], j);
  Graph g;
  auto b = frozen(g, p);
  CHECK(mil::forward(b, cfg, g.constant(x)).prob.item() ==
        doctest::Approx(mil::forward(b, cfg, g.constant(y)).prob.item()).epsilon(1e-13));
}

TEST_CASE("branch gradients match finite differences") {
  std::mt19937_64 rng(8);
  auto cfg = small_config();
  const auto p = mil::init_params(cfg, rng);
  const Tensor x = testing::random_tensor(rng, {5, 4});
  std::vector<std::string> names;
  std::vector<Tensor> values;
  for (const auto& [n, t] : p) {
    names.push_back(n);
    values.push_back(t);
  }
  auto report = ad::grad_check(
      [&](Graph& g, std::span<const Var> vars) {
        std::map<std::string, Var> m;
        for (std::size_t i = 0; i < names.size(); ++i) m.emplace(names[i], vars[i]);
        model::Bound b(g, std::move(m));
        return mil::forward(b, cfg, g.constant(x)).prob;
      },
      values, 1e-6, 1e-4);
  CHECK(report.passed);
}

TEST_CASE("without projector the patch logit is affine in the features") {
  std::mt19937_64 rng(9);
  auto cfg = small_config();
  cfg.use_projector = false;
  auto p = mil::init_params(cfg, rng);
  Graph g;
  auto b = frozen(g, p);
  Tensor x = testing::random_tensor(rng, {3, 4});
  Tensor alpha({3, 1});
  alpha.at(0, 0) = 0.2;
  alpha.at(1, 0) = 0.5;
  alpha.at(2, 0) = 0.3;
  auto logits = [&](const Tensor& in) { return mil::additive_logits(b, g.constant(in), g.constant(alpha)).first.value(); };
  Tensor y = testing::random_tensor(rng, {3, 4});
  Tensor mid({3, 4});
  for (std::size_t i = 0; i < 12; ++i) mid.data()[i] = 0.3 * x.data()[i] + 0.7 * y.data()[i];
  Tensor lx = logits(x), ly = logits(y), lm = logits(mid);
  for (std::size_t i = 0; i < 3; ++i) CHECK(lm.at(i, 0) == doctest::Approx(0.3 * lx.at(i, 0) + 0.7 * ly.at(i, 0)).epsilon(1e-12));
}
