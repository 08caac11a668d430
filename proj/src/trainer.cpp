#include "simil/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "simil/errors.hpp"
#include "simil/normalizer.hpp"

namespace simil::train {

using namespace simil::ad;

namespace {

constexpr double kProbClamp = 1e-7;

std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  return mix(mix(mix(seed) ^ a) ^ b);
}

std::uint64_t hash_string(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : s) h = (h ^ ch) * 1099511628211ULL;
  return h;
}

void require_classes(const std::vector<Bag>& bags, std::size_t min_per_class, const std::string& what) {
  std::size_t n[2] = {0, 0};
  for (const Bag& b : bags) {
    if (b.label != 0 && b.label != 1) throw DataError("bag " + b.slide_id + " has non-binary label");
    ++n[b.label];
  }
  if (n[0] < min_per_class || n[1] < min_per_class) {
    throw DataError(what + " needs at least " + std::to_string(min_per_class) + " bags per class (got " +
                    std::to_string(n[0]) + " negative, " + std::to_string(n[1]) + " positive)");
  }
}

enum class Stage { Joint, MilOnly, SiOnly };

const char* stage_name(Stage s) {
  switch (s) {
    case Stage::Joint: return "joint";
    case Stage::MilOnly: return "mil";
    case Stage::SiOnly: return "si";
  }
  return "?";
}

std::vector<std::size_t> canonical_order(const std::vector<Bag>& bags) {
  std::vector<std::size_t> idx(bags.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return bags[a].slide_id < bags[b].slide_id;
  });
  return idx;
}

void fit_deep_scaler(net::Model& model, const std::vector<Bag>& bags) {
  if (model.config.pathfeat_only) return;
  std::vector<const Tensor*> mats;
  for (std::size_t i : canonical_order(bags)) mats.push_back(&bags[i].deep);
  const norm::ColumnScaler s = norm::fit_scaler(mats);
  model.params["norm.deep_mean"] = Tensor({1, s.mean.size()}, s.mean);
  model.params["norm.deep_std"] = Tensor({1, s.std.size()}, s.std);
}

void run_stage(net::Model& model, const std::vector<Bag>& train, const std::vector<Bag>& validation,
               const TrainConfig& cfg, Stage stage, std::vector<EpochRecord>& curve, std::size_t& best_epoch) {
  const bool si_trainable = cfg.si_lr_scale > 0.0;
  auto trainable = [&](const std::string& name) {
    const bool is_mil = model::has_prefix(name, "mil.");
    const bool is_si = model::has_prefix(name, "si.");
    switch (stage) {
      case Stage::Joint: return is_mil || (is_si && si_trainable);
      case Stage::MilOnly: return is_mil;
      case Stage::SiOnly: return is_si && si_trainable;
    }
    return false;
  };
  // A frozen SI branch sends nothing back into alpha.
  const net::Selection selection = (stage == Stage::Joint && !cfg.ablations.no_pag_topk && si_trainable)
                                       ? net::Selection::Perturbed
                                       : net::Selection::Hard;
  const double lambda = cfg.ablations.no_kd ? 0.0 : cfg.lambda;
  std::map<std::string, double> lr_scale;
  for (const auto& [name, t] : model.params) {
    if (model::has_prefix(name, "si.")) lr_scale[name] = cfg.si_lr_scale;
  }

  AdamW opt(cfg.lr, cfg.weight_decay);
  const std::vector<std::size_t> base = canonical_order(train);
  const std::uint64_t stage_seed = derive(cfg.seed, 101);
  std::optional<double> best_auc;
  model::ParamSet best_params = model.params;
  std::size_t best = 0;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<std::size_t> order = base;
    std::mt19937_64 shuffle_rng(derive(stage_seed, epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    EpochRecord rec;
    rec.epoch = epoch;
    rec.stage = stage_name(stage);
    for (std::size_t idx : order) {
      const Bag& bag = train[idx];
      Graph g;
      model::Bound p(g, model.params, trainable);
      const net::Forward f =
          net::forward(p, model, bag, selection, derive(stage_seed, epoch, hash_string(bag.slide_id)));
      Var ce_g = bce(f.mil.prob, bag.label);
      Var ce_f = bce(f.si.prediction.prob, bag.label);
      Var loss;
      switch (stage) {
        case Stage::Joint: loss = compute_loss(bag.label, f.mil.prob, f.si.prediction.prob, lambda); break;
        case Stage::MilOnly: loss = ce_g; break;
        case Stage::SiOnly: loss = ce_f; break;
      }
      g.backward(loss);
      std::map<std::string, Tensor> grads;
      for (const auto& [name, v] : p.vars()) {
        if (g.requires_grad(v.id())) grads.emplace(name, v.grad());
      }
      opt.step(model.params, grads, lr_scale);
      rec.loss += loss.item();
      rec.si_loss += ce_f.item();
      rec.mil_loss += ce_g.item();
    }
    const double n = static_cast<double>(train.size());
    rec.loss /= n;
    rec.si_loss /= n;
    rec.mil_loss /= n;
    if (!validation.empty()) {
      const EvalResult ev = evaluate(model, validation);
      rec.val_auc = stage == Stage::MilOnly ? ev.mil_auc : ev.auc;
    }
    if (cfg.select_best && rec.val_auc && (!best_auc || *rec.val_auc > *best_auc)) {
      best_auc = rec.val_auc;
      best_params = model.params;
      best = epoch;
    }
    curve.push_back(rec);
  }
  if (cfg.select_best && best_auc) {
    model.params = std::move(best_params);
    best_epoch = best;
  } else {
    best_epoch = cfg.epochs;
  }
}

}  // namespace

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ContractError("learning rate must be positive");
  if (weight_decay < 0.0) throw ContractError("weight decay must be non-negative");
  if (lambda < 0.0) throw ContractError("lambda must be non-negative");
  if (epochs < 1) throw ContractError("epochs must be at least 1");
  if (folds < 2) throw ContractError("cross-validation needs at least 2 folds");
  if (test_fraction < 0.0 || test_fraction >= 1.0) throw ContractError("test fraction must lie in [0,1)");
  if (si_lr_scale < 0.0) throw ContractError("SI learning-rate scale must be non-negative");
  model.topk.validate();
  model.beta.validate();
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"lr", c.lr},
          {"weight_decay", c.weight_decay},
          {"lambda", c.lambda},
          {"epochs", c.epochs},
          {"seed", c.seed},
          {"folds", c.folds},
          {"test_fraction", c.test_fraction},
          {"si_lr_scale", c.si_lr_scale},
          {"select_best", c.select_best},
          {"ablations",
           {{"no_pag_topk", c.ablations.no_pag_topk},
            {"no_kd", c.ablations.no_kd},
            {"pathfeat_only", c.ablations.pathfeat_only},
            {"two_stage", c.ablations.two_stage},
            {"no_projector", c.ablations.no_projector}}},
          {"model", net::to_json(c.model)}};
}

TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c) {
  if (!j.is_object()) throw FormatError("training config must be a JSON object");
  auto take = [](const nlohmann::json& obj, const std::string& key, auto& field) {
    if (obj.contains(key)) field = obj.at(key).get<std::remove_reference_t<decltype(field)>>();
  };
  static const std::set<std::string> top = {"lr",        "weight_decay", "lambda",      "epochs",
                                            "seed",      "folds",        "test_fraction", "si_lr_scale",
                                            "select_best", "ablations",  "model"};
  static const std::set<std::string> abl = {"no_pag_topk", "no_kd", "pathfeat_only", "two_stage", "no_projector"};
  static const std::set<std::string> mod = {"deep_dim",      "path_dim",      "mil_hidden", "mil_attention",
                                            "mixer_layers",  "si_attention",  "pathfeat_only", "no_projector",
                                            "topk",          "beta"};
  auto check = [](const nlohmann::json& obj, const std::set<std::string>& allowed, const std::string& where) {
    if (!obj.is_object()) throw FormatError(where + " must be an object");
    for (const auto& [k, v] : obj.items()) {
      if (!allowed.count(k)) throw FormatError("unknown key '" + k + "' in " + where);
    }
  };
  try {
    check(j, top, "training config");
    take(j, "lr", c.lr);
    take(j, "weight_decay", c.weight_decay);
    take(j, "lambda", c.lambda);
    take(j, "epochs", c.epochs);
    take(j, "seed", c.seed);
    take(j, "folds", c.folds);
    take(j, "test_fraction", c.test_fraction);
    take(j, "si_lr_scale", c.si_lr_scale);
    take(j, "select_best", c.select_best);
    if (j.contains("ablations")) {
      const auto& a = j.at("ablations");
      check(a, abl, "ablations");
      take(a, "no_pag_topk", c.ablations.no_pag_topk);
      take(a, "no_kd", c.ablations.no_kd);
      take(a, "pathfeat_only", c.ablations.pathfeat_only);
      take(a, "two_stage", c.ablations.two_stage);
      take(a, "no_projector", c.ablations.no_projector);
    }
    if (j.contains("model")) {
      const auto& m = j.at("model");
      check(m, mod, "model");
      take(m, "deep_dim", c.model.deep_dim);
      take(m, "path_dim", c.model.path_dim);
      take(m, "mil_hidden", c.model.mil_hidden);
      take(m, "mil_attention", c.model.mil_attention);
      take(m, "mixer_layers", c.model.mixer_layers);
      take(m, "si_attention", c.model.si_attention);
      take(m, "pathfeat_only", c.model.pathfeat_only);
      take(m, "no_projector", c.model.no_projector);
      if (m.contains("topk")) {
        const auto& t = m.at("topk");
        check(t, {"K", "sigma", "samples", "seed"}, "model.topk");
        take(t, "K", c.model.topk.k);
        take(t, "sigma", c.model.topk.sigma);
        take(t, "samples", c.model.topk.samples);
        take(t, "seed", c.model.topk.seed);
      }
      if (m.contains("beta")) {
        const auto& b = m.at("beta");
        check(b, {"gamma", "t"}, "model.beta");
        take(b, "gamma", c.model.beta.gamma);
        take(b, "t", c.model.beta.t);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("training config: ") + e.what());
  }
  c.validate();
  return c;
}

double bce(int y, double p) {
  p = std::clamp(p, kProbClamp, 1.0 - kProbClamp);
  return y == 1 ? -std::log(p) : -std::log(1.0 - p);
}

Var bce(Var p, int y) {
  Var q = clamp(p, kProbClamp, 1.0 - kProbClamp);
  if (y == 1) return scale(log(q), -1.0);
  return scale(log(shift(scale(q, -1.0), 1.0)), -1.0);
}

Var compute_loss(int y, Var p_g, Var p_f, double lambda) {
  Var loss = add(bce(p_g, y), bce(p_f, y));
  if (lambda == 0.0) return loss;
  Var gap = sub(p_f, stop_gradient(p_g));
  return add(loss, scale(square(gap), lambda));
}

double compute_loss(int y, double p_g, double p_f, double lambda) {
  return bce(y, p_g) + bce(y, p_f) + lambda * (p_f - p_g) * (p_f - p_g);
}

AdamW::AdamW(double lr, double wd, double b1, double b2, double eps)
    : lr_(lr), wd_(wd), b1_(b1), b2_(b2), eps_(eps) {}

void AdamW::step(model::ParamSet& params, const std::map<std::string, Tensor>& grads,
                 const std::map<std::string, double>& lr_scale) {
  for (const auto& [name, g] : grads) {
    auto it = lr_scale.find(name);
    const double lr = lr_ * (it == lr_scale.end() ? 1.0 : it->second);
    if (lr == 0.0) continue;
    Tensor& p = params.at(name);
    if (!p.same_shape(g)) throw ShapeError("gradient shape mismatch for " + name);
    auto [mi, fresh] = m_.try_emplace(name, Tensor(p.shape()));
    Tensor& v = v_.try_emplace(name, Tensor(p.shape())).first->second;
    Tensor& m = mi->second;
    const std::size_t t = ++t_[name];
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t));
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = b1_ * m[i] + (1.0 - b1_) * g[i];
      v[i] = b2_ * v[i] + (1.0 - b2_) * g[i] * g[i];
      p[i] -= lr * wd_ * p[i];
      p[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
  }
}

std::optional<double> roc_auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw ShapeError("roc_auc: scores and labels differ in length");
  std::vector<double> pos, neg;
  for (std::size_t i = 0; i < scores.size(); ++i) (labels[i] == 1 ? pos : neg).push_back(scores[i]);
  if (pos.empty() || neg.empty()) return std::nullopt;
  // Rank-sum form with average ranks for ties.
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && scores[idx[j + 1]] == scores[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) {
      if (labels[idx[k]] == 1) rank_sum += avg;
    }
    i = j + 1;
  }
  const double np = static_cast<double>(pos.size()), nn = static_cast<double>(neg.size());
  return (rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

EvalResult evaluate(const net::Model& model, const std::vector<Bag>& bags) {
  EvalResult r;
  std::vector<double> pf, pg;
  std::vector<int> labels;
  std::size_t correct = 0;
  for (const Bag& bag : bags) {
    Graph g;
    model::Bound p(g, model.params, [](const std::string&) { return false; });
    const net::Forward f = net::forward(p, model, bag, net::Selection::Hard, 0);
    SlidePrediction sp{bag.slide_id, bag.label, f.si.prediction.prob.item(), f.mil.prob.item()};
    if ((sp.prob_f >= 0.5 ? 1 : 0) == bag.label) ++correct;
    pf.push_back(sp.prob_f);
    pg.push_back(sp.prob_g);
    labels.push_back(bag.label);
    r.predictions.push_back(std::move(sp));
  }
  r.accuracy = bags.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(bags.size());
  r.auc = roc_auc(pf, labels);
  r.mil_auc = roc_auc(pg, labels);
  return r;
}

nlohmann::json to_json(const EvalResult& r) {
  nlohmann::json preds = nlohmann::json::array();
  for (const auto& p : r.predictions) {
    preds.push_back({{"slide_id", p.slide_id}, {"label", p.label}, {"prob_f", p.prob_f}, {"prob_g", p.prob_g}});
  }
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  return {{"accuracy", r.accuracy}, {"auc", opt(r.auc)}, {"mil_auc", opt(r.mil_auc)}, {"predictions", preds}};
}

net::ModelConfig resolve_model_config(const TrainConfig& cfg, const Dataset& ds) {
  net::ModelConfig m = cfg.model;
  m.deep_dim = ds.deep_dim;
  m.path_dim = ds.path_dim();
  m.pathfeat_only = m.pathfeat_only || cfg.ablations.pathfeat_only;
  m.no_projector = m.no_projector || cfg.ablations.no_projector;
  return m;
}

TrainResult train_fold(const std::vector<Bag>& train, const std::vector<Bag>& validation, const TrainConfig& cfg) {
  cfg.validate();
  require_classes(train, 2, "training");
  for (const Bag& b : train) b.validate();
  net::ModelConfig mc = cfg.model;
  if (mc.path_dim == 0) mc.path_dim = train.front().path.cols();
  if (mc.deep_dim == 0) mc.deep_dim = train.front().deep.cols();
  mc.pathfeat_only = mc.pathfeat_only || cfg.ablations.pathfeat_only;
  mc.no_projector = mc.no_projector || cfg.ablations.no_projector;

  TrainResult out{net::init_model(mc, derive(cfg.seed, 7)), {}, 0};
  fit_deep_scaler(out.model, train);
  if (cfg.ablations.two_stage) {
    std::size_t mil_best = 0;
    run_stage(out.model, train, validation, cfg, Stage::MilOnly, out.curve, mil_best);
    run_stage(out.model, train, validation, cfg, Stage::SiOnly, out.curve, out.best_epoch);
  } else {
    run_stage(out.model, train, validation, cfg, Stage::Joint, out.curve, out.best_epoch);
  }
  return out;
}

std::vector<std::size_t> stratified_folds(std::span<const int> labels, std::size_t folds, std::uint64_t seed) {
  if (folds < 2) throw ContractError("cross-validation needs at least 2 folds");
  std::vector<std::size_t> assign(labels.size());
  for (int cls : {0, 1}) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] == cls) members.push_back(i);
    }
    if (members.size() < folds) {
      throw DataError("class " + std::to_string(cls) + " has " + std::to_string(members.size()) +
                      " bags, fewer than " + std::to_string(folds) + " folds");
    }
    std::mt19937_64 rng(derive(seed, 11, static_cast<std::uint64_t>(cls)));
    std::shuffle(members.begin(), members.end(), rng);
    for (std::size_t k = 0; k < members.size(); ++k) assign[members[k]] = k % folds;
  }
  for (int l : labels) {
    if (l != 0 && l != 1) throw DataError("labels must be 0 or 1");
  }
  return assign;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> holdout_split(std::span<const int> labels,
                                                                            double fraction, std::uint64_t seed) {
  std::vector<std::size_t> rest, test;
  for (int cls : {0, 1}) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] == cls) members.push_back(i);
    }
    std::mt19937_64 rng(derive(seed, 13, static_cast<std::uint64_t>(cls)));
    std::shuffle(members.begin(), members.end(), rng);
    std::size_t take = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(members.size())));
    if (fraction > 0.0 && take == 0) take = 1;
    if (take >= members.size()) throw DataError("held-out split leaves no training bags for a class");
    test.insert(test.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(take));
    rest.insert(rest.end(), members.begin() + static_cast<std::ptrdiff_t>(take), members.end());
  }
  std::sort(rest.begin(), rest.end());
  std::sort(test.begin(), test.end());
  return {rest, test};
}

CvResult cross_validate(const Dataset& ds, const TrainConfig& config, const FoldCallback& on_fold) {
  config.validate();
  TrainConfig cfg = config;
  cfg.model = resolve_model_config(config, ds);
  std::vector<int> labels;
  for (const Bag& b : ds.bags) labels.push_back(b.label);
  for (int l : labels) {
    if (l != 0 && l != 1) throw DataError("labels must be 0 or 1");
  }

  std::vector<std::size_t> rest(ds.bags.size()), test_idx;
  std::iota(rest.begin(), rest.end(), 0);
  if (cfg.test_fraction > 0.0) std::tie(rest, test_idx) = holdout_split(labels, cfg.test_fraction, cfg.seed);
  std::vector<int> rest_labels;
  for (std::size_t i : rest) rest_labels.push_back(labels[i]);
  const std::vector<std::size_t> fold_of = stratified_folds(rest_labels, cfg.folds, cfg.seed);

  CvResult out;
  std::vector<Bag> test;
  for (std::size_t i : test_idx) {
    test.push_back(ds.bags[i]);
    out.test_slides.push_back(ds.bags[i].slide_id);
  }
  std::vector<double> aucs, accs, mil_aucs;
  for (std::size_t k = 0; k < cfg.folds; ++k) {
    std::vector<Bag> train, val;
    for (std::size_t r = 0; r < rest.size(); ++r) (fold_of[r] == k ? val : train).push_back(ds.bags[rest[r]]);
    TrainConfig fold_cfg = cfg;
    fold_cfg.seed = derive(cfg.seed, 17, k);
    TrainResult tr = train_fold(train, val, fold_cfg);
    FoldResult fr;
    fr.fold = k;
    fr.train_bags = train.size();
    fr.validation = evaluate(tr.model, val);
    fr.test = test.empty() ? fr.validation : evaluate(tr.model, test);
    fr.curve = std::move(tr.curve);
    fr.best_epoch = tr.best_epoch;
    fr.model = std::move(tr.model);
    if (fr.test.auc) aucs.push_back(*fr.test.auc);
    if (fr.test.mil_auc) mil_aucs.push_back(*fr.test.mil_auc);
    accs.push_back(fr.test.accuracy);
    if (on_fold) on_fold(fr);
    out.folds.push_back(std::move(fr));
  }
  auto mean_std = [](const std::vector<double>& xs) -> std::pair<double, double> {
    if (xs.empty()) return {0.0, 0.0};
    const double m = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
    double ss = 0.0;
    for (double x : xs) ss += (x - m) * (x - m);
    return {m, std::sqrt(ss / static_cast<double>(xs.size()))};
  };
  std::tie(out.mean_auc, out.std_auc) = mean_std(aucs);
  std::tie(out.mean_accuracy, out.std_accuracy) = mean_std(accs);
  out.mean_mil_auc = mean_std(mil_aucs).first;
  return out;
}

nlohmann::json to_json(const EpochRecord& e) {
  return {{"epoch", e.epoch},
          {"stage", e.stage},
          {"loss", e.loss},
          {"si_loss", e.si_loss},
          {"mil_loss", e.mil_loss},
          {"val_auc", e.val_auc ? nlohmann::json(*e.val_auc) : nlohmann::json(nullptr)}};
}

nlohmann::json to_json(const CvResult& r) {
  nlohmann::json folds = nlohmann::json::array();
  for (const FoldResult& f : r.folds) {
    nlohmann::json curve = nlohmann::json::array();
    for (const EpochRecord& e : f.curve) curve.push_back(to_json(e));
    folds.push_back({{"fold", f.fold},
                     {"train_bags", f.train_bags},
                     {"best_epoch", f.best_epoch},
                     {"validation", to_json(f.validation)},
                     {"test", to_json(f.test)},
                     {"curve", curve}});
  }
  return {{"mean_auc", r.mean_auc},
          {"std_auc", r.std_auc},
          {"mean_accuracy", r.mean_accuracy},
          {"std_accuracy", r.std_accuracy},
          {"mean_mil_auc", r.mean_mil_auc},
          {"test_slides", r.test_slides},
          {"folds", folds}};
}

}  // namespace simil::train
