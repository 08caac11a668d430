#include "simil/model.hpp"

#include "simil/errors.hpp"

namespace simil::net {

mil::MilConfig ModelConfig::mil_config() const {
  return {pathfeat_only ? path_dim : deep_dim, mil_hidden, mil_attention, !no_projector};
}

si::SiConfig ModelConfig::si_config() const { return {topk.k, path_dim, mixer_layers, si_attention, beta}; }

void ModelConfig::validate() const {
  if (path_dim < 2) throw ShapeError("PathExpert dimension must be at least 2");
  if (!pathfeat_only && deep_dim == 0) throw ShapeError("deep feature dimension must be positive");
  topk.validate();
  beta.validate();
}

nlohmann::json to_json(const ModelConfig& c) {
  return {{"deep_dim", c.deep_dim},
          {"path_dim", c.path_dim},
          {"mil_hidden", c.mil_hidden},
          {"mil_attention", c.mil_attention},
          {"mixer_layers", c.mixer_layers},
          {"si_attention", c.si_attention},
          {"pathfeat_only", c.pathfeat_only},
          {"no_projector", c.no_projector},
          {"topk", {{"K", c.topk.k}, {"sigma", c.topk.sigma}, {"samples", c.topk.samples}, {"seed", c.topk.seed}}},
          {"beta", {{"gamma", c.beta.gamma}, {"t", c.beta.t}}}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.deep_dim = j.at("deep_dim");
    c.path_dim = j.at("path_dim");
    c.mil_hidden = j.at("mil_hidden");
    c.mil_attention = j.at("mil_attention");
    c.mixer_layers = j.at("mixer_layers");
    c.si_attention = j.at("si_attention");
    c.pathfeat_only = j.at("pathfeat_only");
    c.no_projector = j.at("no_projector");
    const auto& t = j.at("topk");
    c.topk.k = t.at("K");
    c.topk.sigma = t.at("sigma");
    c.topk.samples = t.at("samples");
    c.topk.seed = t.at("seed");
    c.beta.gamma = j.at("beta").at("gamma");
    c.beta.t = j.at("beta").at("t");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

Model init_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Model m{config, {}};
  std::mt19937_64 rng(seed);
  m.params = mil::init_params(config.mil_config(), rng);
  for (auto& [name, t] : si::init_params(config.si_config(), rng)) m.params[name] = std::move(t);
  if (!config.pathfeat_only) {
    m.params["norm.deep_mean"] = Tensor({1, config.deep_dim}, 0.0);
    m.params["norm.deep_std"] = Tensor({1, config.deep_dim}, 1.0);
  }
  return m;
}

Tensor mil_input(const Model& m, const Bag& bag) {
  if (m.config.pathfeat_only) return bag.path;
  const Tensor& mu = m.params.at("norm.deep_mean");
  const Tensor& sd = m.params.at("norm.deep_std");
  if (bag.deep.cols() != mu.cols()) {
    throw ShapeError("bag " + bag.slide_id + " deep features " + bag.deep.shape_string() + ", model expects D=" +
                     std::to_string(mu.cols()));
  }
  Tensor out = bag.deep;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    for (std::size_t c = 0; c < out.cols(); ++c) out.at(r, c) = (out.at(r, c) - mu[c]) / sd[c];
  }
  return out;
}

Forward forward(const model::Bound& p, const Model& m, const Bag& bag, Selection selection,
                std::uint64_t topk_seed) {
  if (bag.size() == 0) throw DataError("bag " + bag.slide_id + " has no patches");
  if (bag.path.cols() != m.config.path_dim) {
    throw ShapeError("bag " + bag.slide_id + " PathExpert features " + bag.path.shape_string() +
                     ", model expects d=" + std::to_string(m.config.path_dim));
  }
  ad::Graph& g = p.graph();
  Forward f;
  f.mil = mil::forward(p, m.config.mil_config(), g.constant(mil_input(m, bag)));
  f.hard = topk::hard_topk(f.mil.alpha.value().data(), m.config.topk.k);
  if (selection == Selection::Perturbed) {
    topk::TopKConfig cfg = m.config.topk;
    cfg.seed = topk_seed;
    f.indicator = topk::perturbed_topk(f.mil.alpha, cfg);
  } else {
    f.indicator = g.constant(topk::indicator(f.hard, bag.size()));
  }
  f.selected = topk::select_features(f.indicator, g.constant(bag.path));
  f.si = si::forward(p, m.config.si_config(), f.selected);
  return f;
}

Checkpoint to_checkpoint(const Model& m, std::map<std::string, std::uint64_t> seeds, nlohmann::json extra) {
  Checkpoint c;
  c.params = m.params;
  c.config = {{"model", to_json(m.config)}};
  for (auto& [k, v] : extra.items()) c.config[k] = v;
  c.seeds = std::move(seeds);
  return c;
}

Model from_checkpoint(const Checkpoint& c) {
  if (!c.config.contains("model")) throw FormatError("checkpoint has no model configuration");
  Model m{model_config_from_json(c.config.at("model")), c.params};
  Model ref = init_model(m.config, 0);
  for (const auto& [name, t] : ref.params) {
    auto it = m.params.find(name);
    if (it == m.params.end()) throw FormatError("checkpoint is missing parameter " + name);
    if (!it->second.same_shape(t)) throw FormatError("checkpoint parameter " + name + " has the wrong shape");
  }
  return m;
}

}  // namespace simil::net
