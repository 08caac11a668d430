#include <cmath>
#include <set>

#include "doctest.h"
#include "simil/checks.hpp"
#include "simil/errors.hpp"
#include "simil/synthgen.hpp"
#include "simil/trainer.hpp"
#include "test_util.hpp"

using namespace simil;
using ad::Graph;
using ad::Tensor;
using ad::Var;

namespace {

synth::GeneratedBags small_bags(std::size_t per_class, std::uint64_t seed, double delta = 1.5) {
  synth::BagGenConfig c;
  c.bags_per_class = per_class;
  c.n_min = 8;
  c.n_max = 14;
  c.deep_dim = 6;
  c.path_dim = 10;
  c.delta = delta;
  c.seed = seed;
  return synth::gen_bags(c);
}

train::TrainConfig small_config() {
  train::TrainConfig c;
  c.lr = 1e-3;
  c.epochs = 3;
  c.model.mil_hidden = 16;
  c.model.mil_attention = 8;
  c.model.si_attention = 8;
  c.model.mixer_layers = 1;
  c.model.topk.k = 4;
  c.model.topk.samples = 8;
  return c;
}

// Pair-counting AUC.
double pair_auc(const std::vector<double>& s, const std::vector<int>& y) {
  double num = 0, den = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (y[i] == 1 && y[j] == 0) {
        den += 1;
        num += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
      }
  return num / den;
}

}  // namespace

TEST_CASE("loss examples") {
  CHECK(train::compute_loss(1, 1 - 1e-7, 1 - 1e-7, 20.0) == doctest::Approx(0.0).epsilon(1e-6));
  const double ce = train::bce(1, 0.9) + train::bce(1, 0.5);
  CHECK(train::compute_loss(1, 0.9, 0.5, 20.0) - ce == doctest::Approx(3.2).epsilon(1e-12));
  CHECK(train::bce(0, 0.0) == doctest::Approx(-std::log(1 - 1e-7)));
  CHECK(train::bce(1, 0.0) == doctest::Approx(-std::log(1e-7)));
  Graph g;
  Var pg = g.parameter(Tensor({1, 1}, {0.9}));
  Var pf = g.parameter(Tensor({1, 1}, {0.5}));
  Var loss = train::compute_loss(1, pg, pf, 20.0);
  CHECK(loss.item() == doctest::Approx(train::compute_loss(1, 0.9, 0.5, 20.0)).epsilon(1e-14));
  g.backward(loss);
  // Only CE reaches p_g; p_f also carries 2 * lambda * (p_f - p_g).
  CHECK(pg.grad().item() == doctest::Approx(-1 / 0.9).epsilon(1e-12));
  CHECK(pf.grad().item() == doctest::Approx(-1 / 0.5 + 40 * (0.5 - 0.9)).epsilon(1e-12));
}

TEST_CASE("kd term gives no gradient to mil-exclusive parameters") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto inst = checks::random_instance(9, 5, 7, 3, seed);
    const auto r = checks::kd_only_gradients(inst);
    CHECK(r.max_mil_exclusive == 0.0);
    CHECK(r.max_mil_barrier == 0.0);
    CHECK(r.mil_prob_grad == 0.0);
    CHECK(r.max_si > 0.0);
  }
}

TEST_CASE("full loss gradient on a small instance") {
  const auto inst = checks::random_instance(6, 8, 12, 3, 3, 2);
  const auto r = checks::full_loss_gradcheck(inst);
  CHECK(r.passed);
  CHECK(r.max_relative_error <= 1e-4);
}

TEST_CASE("hard selection leaves alpha without gradient from the SI loss") {
  const auto inst = checks::random_instance(8, 5, 6, 3, 11);
  Graph g;
  model::Bound p(g, inst.model.params, [](const std::string&) { return true; });
  const auto f = net::forward(p, inst.model, inst.bag, net::Selection::Hard, 0);
  g.backward(train::bce(f.si.prediction.prob, 1));
  const Tensor ga = f.mil.alpha.grad();
  for (double v : ga.data()) CHECK(v == 0.0);
  // With the perturbed path the same loss does reach alpha.
  Graph h;
  model::Bound q(h, inst.model.params, [](const std::string&) { return true; });
  const auto f2 = net::forward(q, inst.model, inst.bag, net::Selection::Perturbed, 5);
  h.backward(train::bce(f2.si.prediction.prob, 1));
  double mag = 0.0;
  const Tensor gb = f2.mil.alpha.grad();
  for (double v : gb.data()) mag += std::abs(v);
  CHECK(mag > 0.0);
}

TEST_CASE("auc examples") {
  const std::vector<double> s = {0.1, 0.4, 0.35, 0.8};
  const std::vector<int> y = {0, 0, 1, 1};
  CHECK(*train::roc_auc(s, y) == doctest::Approx(0.75));
  const std::vector<double> sep = {0.1, 0.2, 0.8, 0.9};
  CHECK(*train::roc_auc(sep, y) == 1.0);
  const std::vector<double> eq = {0.3, 0.3, 0.3, 0.3};
  CHECK(*train::roc_auc(eq, y) == 0.5);
  const std::vector<int> one = {1, 1, 1, 1};
  CHECK_FALSE(train::roc_auc(s, one).has_value());
}

TEST_CASE("auc matches pair counting") {
  std::mt19937_64 rng(31);
  std::uniform_int_distribution<int> coarse(0, 6);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<double> s(25);
    std::vector<int> y(25);
    for (std::size_t i = 0; i < 25; ++i) {
      s[i] = coarse(rng) / 6.0;
      y[i] = static_cast<int>(i % 3 == 0);
    }
    CHECK(*train::roc_auc(s, y) == doctest::Approx(pair_auc(s, y)).epsilon(1e-12));
  }
}

TEST_CASE("stratified folds") {
  std::vector<int> labels(10);
  for (std::size_t i = 0; i < 10; ++i) labels[i] = static_cast<int>(i % 2);
  const auto a = train::stratified_folds(labels, 5, 3);
  CHECK(a == train::stratified_folds(labels, 5, 3));
  for (std::size_t k = 0; k < 5; ++k) {
    std::size_t held = 0, pos = 0;
    for (std::size_t i = 0; i < 10; ++i)
      if (a[i] == k) {
        ++held;
        pos += labels[i];
      }
    CHECK(held == 2);
    CHECK(10 - held == 8);
    CHECK(pos == 1);
  }
  std::vector<int> few = {0, 0, 0, 0, 0, 1, 1};
  CHECK_THROWS_AS(train::stratified_folds(few, 5, 0), DataError);
}

TEST_CASE("cross-validation trains each fold on the remaining bags") {
  auto data = small_bags(5, 4);
  auto cfg = small_config();
  cfg.epochs = 1;
  cfg.test_fraction = 0.0;
  const auto cv = train::cross_validate(data.dataset, cfg);
  REQUIRE(cv.folds.size() == 5);
  for (const auto& f : cv.folds) CHECK(f.train_bags == 8);
}

TEST_CASE("held-out split is stratified and disjoint") {
  std::vector<int> labels(40);
  for (std::size_t i = 0; i < 40; ++i) labels[i] = static_cast<int>(i % 2);
  const auto [rest, test] = train::holdout_split(labels, 0.2, 9);
  CHECK(test.size() == 8);
  CHECK(rest.size() == 32);
  std::set<std::size_t> all(rest.begin(), rest.end());
  for (std::size_t t : test) CHECK(all.insert(t).second);
  std::size_t pos = 0;
  for (std::size_t t : test) pos += labels[t];
  CHECK(pos == 4);
}

TEST_CASE("training is deterministic") {
  auto data = small_bags(6, 5);
  auto cfg = small_config();
  std::vector<Bag> val(data.dataset.bags.begin(), data.dataset.bags.begin() + 4);
  std::vector<Bag> tr(data.dataset.bags.begin() + 4, data.dataset.bags.end());
  const auto a = train::train_fold(tr, val, cfg);
  const auto b = train::train_fold(tr, val, cfg);
  CHECK(checkpoint_to_json(net::to_checkpoint(a.model)).dump() == checkpoint_to_json(net::to_checkpoint(b.model)).dump());
  REQUIRE(a.model.params.size() == b.model.params.size());
  for (const auto& [name, t] : a.model.params) CHECK(testing::same_values(t, b.model.params.at(name)));
}

TEST_CASE("bag order in the input does not matter") {
  auto data = small_bags(6, 6);
  auto cfg = small_config();
  cfg.select_best = false;
  auto reversed = data.dataset.bags;
  std::reverse(reversed.begin(), reversed.end());
  const auto a = train::train_fold(data.dataset.bags, {}, cfg);
  const auto b = train::train_fold(reversed, {}, cfg);
  for (const auto& [name, t] : a.model.params) CHECK(testing::same_values(t, b.model.params.at(name)));
}

TEST_CASE("frozen SI branch with lambda 0 trains the MIL branch like standalone MIL") {
  auto data = small_bags(6, 7);
  auto cfg = small_config();
  cfg.lambda = 0.0;
  cfg.si_lr_scale = 0.0;
  cfg.select_best = false;
  const auto joint = train::train_fold(data.dataset.bags, {}, cfg);
  auto ref_cfg = cfg;
  ref_cfg.ablations.two_stage = true;
  const auto ref = train::train_fold(data.dataset.bags, {}, ref_cfg);
  REQUIRE(ref.curve.size() == 2 * cfg.epochs);
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    CHECK(ref.curve[e].stage == "mil");
    CHECK(joint.curve[e].mil_loss == ref.curve[e].mil_loss);
  }
  for (const auto& [name, t] : joint.model.params) CHECK(testing::same_values(t, ref.model.params.at(name)));
}

TEST_CASE("two-stage freezes the MIL branch in the second stage") {
  auto data = small_bags(6, 8);
  auto cfg = small_config();
  cfg.select_best = false;
  cfg.ablations.two_stage = true;
  auto mil_only = cfg;
  mil_only.si_lr_scale = 0.0;
  const auto a = train::train_fold(data.dataset.bags, {}, cfg);
  const auto b = train::train_fold(data.dataset.bags, {}, mil_only);
  bool si_moved = false;
  for (const auto& [name, t] : a.model.params) {
    if (model::has_prefix(name, "mil.")) CHECK(testing::same_values(t, b.model.params.at(name)));
    if (model::has_prefix(name, "si.") && !testing::same_values(t, b.model.params.at(name))) si_moved = true;
  }
  CHECK(si_moved);
}

TEST_CASE("config json round trip and validation") {
  auto cfg = small_config();
  cfg.ablations.no_kd = true;
  const auto back = train::train_config_from_json(train::to_json(cfg));
  CHECK(train::to_json(back) == train::to_json(cfg));
  CHECK_THROWS_AS(train::train_config_from_json({{"learning_rate", 1e-3}}), FormatError);
  CHECK_THROWS_AS(train::train_config_from_json({{"epochs", 0}}), ContractError);
  CHECK_THROWS_AS(train::train_config_from_json({{"lambda", -1.0}}), ContractError);
}

TEST_CASE("training rejects a missing class") {
  auto data = small_bags(4, 9);
  std::vector<Bag> only_neg;
  for (const auto& b : data.dataset.bags)
    if (b.label == 0) only_neg.push_back(b);
  CHECK_THROWS_AS(train::train_fold(only_neg, {}, small_config()), DataError);
}

TEST_CASE("adamw decoupled weight decay") {
  model::ParamSet p{{"x", Tensor({1, 1}, {2.0})}};
  train::AdamW opt(0.1, 0.5);
  opt.step(p, {{"x", Tensor({1, 1}, {0.0})}});
  CHECK(p.at("x").item() == doctest::Approx(2.0 - 0.1 * 0.5 * 2.0));
  model::ParamSet q{{"x", Tensor({1, 1}, {1.0})}};
  train::AdamW plain(0.1, 0.0);
  plain.step(q, {{"x", Tensor({1, 1}, {3.0})}});
  CHECK(q.at("x").item() == doctest::Approx(0.9).epsilon(1e-6));  // first step moves by lr
}

TEST_CASE("SI-branch loss falls over the first ten epochs on planted data") {
  for (std::uint64_t seed : {0, 1, 2}) {
    synth::BagGenConfig gc;
    gc.seed = seed;
    const auto data = synth::gen_bags(gc);
    train::TrainConfig cfg;
    cfg.lr = 1e-3;
    cfg.epochs = 10;
    cfg.seed = seed;
    cfg.select_best = false;
    const auto r = train::train_fold(data.dataset.bags, {}, cfg);
    REQUIRE(r.curve.size() == 10);
    // Exponential moving average, weight 0.7 on the history.
    double ema = r.curve[0].si_loss;
    for (std::size_t e = 1; e < r.curve.size(); ++e) {
      const double next = 0.7 * ema + 0.3 * r.curve[e].si_loss;
      CHECK(next <= ema);
      ema = next;
    }
  }
}
