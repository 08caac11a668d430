#pragma once

// The two-branch model: MIL branch over deep (or PathExpert) patch features,
// attention-guided Top-K, and the SI branch over the selected PathExpert rows.

#include <cstdint>
#include <optional>
#include <random>

#include "json.hpp"
#include "simil/featio.hpp"
#include "simil/mil_branch.hpp"
#include "simil/pag_topk.hpp"
#include "simil/si_branch.hpp"

namespace simil::net {

using model::ParamSet;
using model::Tensor;
using model::Var;

struct ModelConfig {
  std::size_t deep_dim = 0;
  std::size_t path_dim = 0;
  std::size_t mil_hidden = 128;
  std::size_t mil_attention = 64;
  std::size_t mixer_layers = 4;
  std::size_t si_attention = 32;
  bool pathfeat_only = false;  // MIL branch reads PathExpert features
  bool no_projector = false;
  topk::TopKConfig topk;
  si::BetaConfig beta;

  mil::MilConfig mil_config() const;
  si::SiConfig si_config() const;
  void validate() const;
};

nlohmann::json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j);

struct Model {
  ModelConfig config;
  ParamSet params;  // mil.*, si.*, plus norm.deep_mean / norm.deep_std (1 x D)
};

Model init_model(const ModelConfig& config, std::uint64_t seed);

// Scaled MIL input for a bag (deep features z-scored with the stored
// statistics, or the PathExpert rows under pathfeat_only).
Tensor mil_input(const Model& model, const Bag& bag);

enum class Selection {
  Perturbed,  // training: Monte-Carlo soft indicator with estimator gradient
  Hard,       // inference, or training with a gradient barrier on alpha
};

struct Forward {
  mil::MilOutput mil;
  Var indicator;  // K x N
  Var selected;   // K x d
  si::SiOutput si;
  topk::Selection hard;  // hard selection on alpha (always computed)
};

Forward forward(const model::Bound& p, const Model& model, const Bag& bag, Selection selection,
                std::uint64_t topk_seed);

Checkpoint to_checkpoint(const Model& model, std::map<std::string, std::uint64_t> seeds = {},
                         nlohmann::json extra = nlohmann::json::object());
Model from_checkpoint(const Checkpoint& checkpoint);

}  // namespace simil::net
