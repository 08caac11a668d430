#include "simil/checks.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include "simil/errors.hpp"
#include "simil/pag_topk.hpp"
#include "simil/si_branch.hpp"
#include "simil/trainer.hpp"

namespace simil::checks {

using namespace simil::ad;

namespace {

double max_abs(const Tensor& t) {
  double m = 0.0;
  for (double v : t.data()) m = std::max(m, std::abs(v));
  return m;
}

}  // namespace

Instance random_instance(std::size_t n, std::size_t deep_dim, std::size_t path_dim, std::size_t k,
                         std::uint64_t seed, std::size_t mixer_layers) {
  net::ModelConfig cfg;
  cfg.deep_dim = deep_dim;
  cfg.path_dim = path_dim;
  cfg.mixer_layers = mixer_layers;
  cfg.topk.k = k;
  Instance inst{net::init_model(cfg, seed), {}};
  std::mt19937_64 rng(seed ^ 0x5eedULL);
  for (auto& [name, t] : inst.model.params) {
    if (model::has_prefix(name, "norm.")) continue;
    t = model::uniform_init(rng, t.rows(), t.cols(), std::max<std::size_t>(1, t.rows()));
  }
  std::normal_distribution<double> normal(0.0, 1.0);
  Bag& bag = inst.bag;
  bag.slide_id = "check";
  bag.label = static_cast<int>(seed % 2);
  bag.deep = Tensor({n, deep_dim});
  bag.path = Tensor({n, path_dim});
  for (double& v : bag.deep.data()) v = normal(rng);
  for (double& v : bag.path.data()) v = normal(rng);
  for (std::size_t i = 0; i < n; ++i) bag.patch_ids.push_back("p" + std::to_string(i));
  return inst;
}

GradCheckReport full_loss_gradcheck(const Instance& inst, double lambda, double step, double tol) {
  const net::Model& m = inst.model;
  std::vector<std::string> names;
  std::vector<Tensor> values;
  for (const auto& [name, t] : m.params) {
    if (model::has_prefix(name, "mil.") || model::has_prefix(name, "si.")) {
      names.push_back(name);
      values.push_back(t);
    }
  }
  // Seeded Monte-Carlo indicator at the base point, then held fixed.
  // The stop-gradient target is likewise frozen at the base point.
  Tensor indicator, target;
  {
    Graph g;
    model::Bound p(g, m.params, [](const std::string&) { return false; });
    const net::Forward f = net::forward(p, m, inst.bag, net::Selection::Perturbed, 1234);
    indicator = f.indicator.value();
    target = f.mil.prob.value();
  }
  const Tensor input = net::mil_input(m, inst.bag);
  auto build = [&](Graph& g, std::span<const Var> vars) {
    std::map<std::string, Var> bound;
    for (std::size_t i = 0; i < names.size(); ++i) bound.emplace(names[i], vars[i]);
    model::Bound p(g, std::move(bound));
    const mil::MilOutput mo = mil::forward(p, m.config.mil_config(), g.constant(input));
    Var selected = topk::select_features(g.constant(indicator), g.constant(inst.bag.path));
    const si::SiOutput so = si::forward(p, m.config.si_config(), selected);
    Var loss = train::compute_loss(inst.bag.label, mo.prob, so.prediction.prob, 0.0);
    return add(loss, scale(square(sub(so.prediction.prob, g.constant(target))), lambda));
  };
  return grad_check(build, values, step, tol, 1e-5, Stencil::Central5);
}

TopkFdResult topk_crn_check(double sigma, std::size_t samples, double h, std::uint64_t seed) {
  const std::vector<double> alpha = {1.0, 0.9};
  topk::TopKConfig cfg{1, sigma, samples, seed};
  TopkFdResult r;
  topk::PerturbedTopK op(cfg);
  op.forward(alpha);
  Tensor upstream({1, 2});
  upstream.at(0, 0) = 1.0;
  r.estimator = op.backward(upstream);
  for (std::size_t i = 0; i < 2; ++i) {
    std::vector<double> up = alpha, down = alpha;
    up[i] += h;
    down[i] -= h;
    topk::PerturbedTopK a(cfg), b(cfg);
    r.finite_difference.push_back((a.forward(up).at(0, 0) - b.forward(down).at(0, 0)) / (2.0 * h));
  }
  const double s = sigma * std::numbers::sqrt2;
  const double z = (alpha[0] - alpha[1]) / s;
  const double density = std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi) / s;
  r.analytic = {density, -density};
  for (std::size_t i = 0; i < 2; ++i) {
    const double denom = std::max(std::abs(r.estimator[i]), std::abs(r.finite_difference[i]));
    r.max_relative_error = std::max(r.max_relative_error, std::abs(r.estimator[i] - r.finite_difference[i]) / denom);
  }
  return r;
}

double topk_variance_ratio(std::size_t trials, std::size_t samples, std::uint64_t seed) {
  const std::vector<double> alpha = {1.0, 0.9};
  Tensor upstream({1, 2});
  upstream.at(0, 0) = 1.0;
  auto variance = [&](std::size_t s) {
    double sum = 0.0, sq = 0.0;
    for (std::size_t t = 0; t < trials; ++t) {
      topk::PerturbedTopK op({1, 0.5, s, seed + t});
      op.forward(alpha);
      const double g = op.backward(upstream)[0];
      sum += g;
      sq += g * g;
    }
    const double n = static_cast<double>(trials);
    return (sq - sum * sum / n) / (n - 1.0);
  };
  return variance(samples) / variance(2 * samples);
}

double decomposition_max_error(std::size_t instances, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> dim(2, 12), kk(1, 8), nn(1, 12);
  double worst = 0.0;
  for (std::size_t i = 0; i < instances; ++i) {
    const std::size_t k = kk(rng);
    const Instance inst = random_instance(nn(rng), dim(rng), dim(rng), k, rng(), 1 + i % 3);
    Graph g;
    model::Bound p(g, inst.model.params, [](const std::string&) { return false; });
    const net::Forward f = net::forward(p, inst.model, inst.bag, net::Selection::Hard, 0);
    const Tensor& w = inst.model.params.at("si.predictor.weight");
    const double b = inst.model.params.at("si.predictor.bias").item();
    const std::vector<double> contrib = si::contributions(f.selected.value(), f.si.beta.value(), w);
    double total = static_cast<double>(k) * b;
    for (double c : contrib) total += c;
    worst = std::max(worst, std::abs(f.si.prediction.logit.item() - total));
  }
  return worst;
}

StopGradientReport kd_only_gradients(const Instance& inst) {
  StopGradientReport r;
  auto kd_loss = [](const net::Forward& f) {
    Var gap = sub(f.si.prediction.prob, stop_gradient(f.mil.prob));
    return scale(square(gap), 20.0);
  };
  auto all = [](const std::string& name) {
    return model::has_prefix(name, "mil.") || model::has_prefix(name, "si.");
  };
  {
    Graph g;
    model::Bound p(g, inst.model.params, all);
    const net::Forward f = net::forward(p, inst.model, inst.bag, net::Selection::Perturbed, 77);
    g.backward(kd_loss(f));
    r.mil_prob_grad = max_abs(f.mil.prob.grad());
    for (const auto& [name, v] : p.vars()) {
      if (model::has_prefix(name, "mil.classifier.")) r.max_mil_exclusive = std::max(r.max_mil_exclusive, max_abs(v.grad()));
      if (model::has_prefix(name, "si.")) r.max_si = std::max(r.max_si, max_abs(v.grad()));
    }
  }
  {
    Graph g;
    model::Bound p(g, inst.model.params, all);
    const net::Forward f = net::forward(p, inst.model, inst.bag, net::Selection::Hard, 77);
    g.backward(kd_loss(f));
    for (const auto& [name, v] : p.vars()) {
      if (model::has_prefix(name, "mil.")) r.max_mil_barrier = std::max(r.max_mil_barrier, max_abs(v.grad()));
    }
  }
  return r;
}

}  // namespace simil::checks
