#pragma once

// Joint training of both branches, evaluation metrics and stratified
// cross-validation with a shared held-out test split.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "simil/featio.hpp"
#include "simil/model.hpp"

namespace simil::train {

using model::Tensor;
using model::Var;

struct Ablations {
  bool no_pag_topk = false;    // hard selection + gradient barrier on alpha
  bool no_kd = false;          // lambda = 0
  bool pathfeat_only = false;  // MIL branch consumes PathExpert features
  bool two_stage = false;      // MIL first, frozen, then SI on hard selection
  bool no_projector = false;   // H = identity

  friend bool operator==(const Ablations&, const Ablations&) = default;
};

struct TrainConfig {
  double lr = 2e-4;            // grid: 1e-3, 2e-3, 1e-4, 2e-4
  double weight_decay = 1e-2;  // grid: 1e-2, 5e-3
  double lambda = 20.0;
  std::size_t epochs = 50;
  std::uint64_t seed = 0;
  std::size_t folds = 5;
  double test_fraction = 0.2;   // held-out split before the folds; 0 evaluates on the fold itself
  double si_lr_scale = 1.0;     // 0 freezes the SI branch
  bool select_best = true;      // keep the epoch with the best validation AUC
  Ablations ablations;
  net::ModelConfig model;       // deep_dim / path_dim filled from the data

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& config);
// Missing keys keep their defaults; unknown keys are rejected.
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

// Binary cross-entropy with p clamped to [1e-7, 1 - 1e-7].
double bce(int y, double p);
Var bce(Var p, int y);
// CE(y, p_g) + CE(y, p_f) + lambda * (p_f - stopgrad(p_g))^2.
Var compute_loss(int y, Var p_g, Var p_f, double lambda);
double compute_loss(int y, double p_g, double p_f, double lambda);

// Adam moments with decoupled weight decay.
class AdamW {
 public:
  AdamW(double lr, double weight_decay, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void step(model::ParamSet& params, const std::map<std::string, Tensor>& grads,
            const std::map<std::string, double>& lr_scale = {});

 private:
  double lr_, wd_, b1_, b2_, eps_;
  std::map<std::string, std::size_t> t_;
  std::map<std::string, Tensor> m_, v_;
};

struct SlidePrediction {
  std::string slide_id;
  int label = 0;
  double prob_f = 0.5;  // SI branch (the reported prediction)
  double prob_g = 0.5;  // MIL branch
};

struct EvalResult {
  double accuracy = 0.0;
  std::optional<double> auc;      // SI branch; absent for single-class sets
  std::optional<double> mil_auc;
  std::vector<SlidePrediction> predictions;
};

// Mann-Whitney statistic with half credit for ties; absent if a class is empty.
std::optional<double> roc_auc(std::span<const double> scores, std::span<const int> labels);

EvalResult evaluate(const net::Model& model, const std::vector<Bag>& bags);
nlohmann::json to_json(const EvalResult& result);

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0.0;     // mean total loss over the epoch's steps
  double si_loss = 0.0;  // mean CE of the SI branch
  double mil_loss = 0.0;
  std::optional<double> val_auc;
  std::string stage = "joint";
};
nlohmann::json to_json(const EpochRecord& record);

struct TrainResult {
  net::Model model;
  std::vector<EpochRecord> curve;
  std::size_t best_epoch = 0;
};

// Validation bags drive best-epoch selection when non-empty.
TrainResult train_fold(const std::vector<Bag>& train, const std::vector<Bag>& validation,
                       const TrainConfig& config);

// Seeded stratified assignment of indices to folds (0..folds-1).
std::vector<std::size_t> stratified_folds(std::span<const int> labels, std::size_t folds, std::uint64_t seed);
// Stratified held-out split; returns (rest, test) indices.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> holdout_split(std::span<const int> labels,
                                                                            double fraction, std::uint64_t seed);

struct FoldResult {
  std::size_t fold = 0;
  std::size_t train_bags = 0;
  EvalResult validation;
  EvalResult test;
  std::vector<EpochRecord> curve;
  std::size_t best_epoch = 0;
  net::Model model;
};

struct CvResult {
  std::vector<FoldResult> folds;
  std::vector<std::string> test_slides;
  double mean_auc = 0.0, std_auc = 0.0;
  double mean_accuracy = 0.0, std_accuracy = 0.0;
  double mean_mil_auc = 0.0;
};

using FoldCallback = std::function<void(const FoldResult&)>;
CvResult cross_validate(const Dataset& dataset, const TrainConfig& config, const FoldCallback& on_fold = {});
nlohmann::json to_json(const CvResult& result);

// Fills model dims from the dataset and applies ablation switches to the model config.
net::ModelConfig resolve_model_config(const TrainConfig& config, const Dataset& dataset);

}  // namespace simil::train
