#include "simil/pag_topk.hpp"

#include <algorithm>
#include <numeric>
#include <random>

#include "simil/errors.hpp"

namespace simil::topk {

void TopKConfig::validate() const {
  if (k < 1) throw ContractError("Top-K requires K >= 1");
  if (!(sigma > 0.0)) throw ContractError("Top-K perturbation sigma must be positive");
  if (samples < 1) throw ContractError("Top-K requires at least one sample");
}

namespace {

void select_into(std::span<const double> scores, std::size_t k, std::vector<std::size_t>& order,
                 std::size_t* out) {
  const std::size_t n = scores.size();
  order.resize(n);
  std::iota(order.begin(), order.end(), 0);
  const std::size_t take = std::min(k, n);
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take), order.end(),
                    [&](std::size_t a, std::size_t b) {
                      if (scores[a] != scores[b]) return scores[a] > scores[b];
                      return a < b;
                    });
  for (std::size_t r = 0; r < k; ++r) out[r] = order[std::min(r, take - 1)];
}

}  // namespace

Selection hard_topk(std::span<const double> scores, std::size_t k) {
  if (scores.empty()) throw ShapeError("Top-K over an empty bag");
  if (k < 1) throw ContractError("Top-K requires K >= 1");
  Selection s;
  s.indices.resize(k);
  std::vector<std::size_t> order;
  select_into(scores, k, order, s.indices.data());
  s.padded = scores.size() < k;
  return s;
}

Tensor indicator(const Selection& selection, std::size_t n) {
  Tensor t({selection.indices.size(), n});
  for (std::size_t r = 0; r < selection.indices.size(); ++r) t.at(r, selection.indices[r]) = 1.0;
  return t;
}

PerturbedTopK::PerturbedTopK(TopKConfig config) : config_(config) { config_.validate(); }

Tensor PerturbedTopK::forward(std::span<const double> scores) {
  if (scores.empty()) throw ShapeError("Top-K over an empty bag");
  n_ = scores.size();
  padded_ = n_ < config_.k;
  const std::size_t S = config_.samples, K = config_.k;
  noise_.resize(S * n_);
  selected_.resize(S * K);
  std::mt19937_64 rng(config_.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (double& e : noise_) e = normal(rng);

  Tensor out({K, n_});
  std::vector<double> perturbed(n_);
  std::vector<std::size_t> order;
  for (std::size_t s = 0; s < S; ++s) {
    for (std::size_t i = 0; i < n_; ++i) perturbed[i] = scores[i] + config_.sigma * noise_[s * n_ + i];
    std::size_t* idx = &selected_[s * K];
    select_into(perturbed, K, order, idx);
    for (std::size_t r = 0; r < K; ++r) out.at(r, idx[r]) += 1.0;
  }
  const double inv = 1.0 / static_cast<double>(S);
  for (double& v : out.data()) v *= inv;
  return out;
}

std::vector<double> PerturbedTopK::backward(const Tensor& upstream) const {
  if (noise_.empty()) throw ContractError("perturbed Top-K backward without a retained forward pass");
  const std::size_t S = config_.samples, K = config_.k;
  if (upstream.rows() != K || upstream.cols() != n_) {
    throw ShapeError("perturbed Top-K upstream gradient has shape " + upstream.shape_string());
  }
  std::vector<double> grad(n_, 0.0);
  for (std::size_t s = 0; s < S; ++s) {
    double inner = 0.0;
    for (std::size_t r = 0; r < K; ++r) inner += upstream.at(r, selected_[s * K + r]);
    if (inner == 0.0) continue;
    for (std::size_t i = 0; i < n_; ++i) grad[i] += inner * noise_[s * n_ + i];
  }
  const double factor = 1.0 / (static_cast<double>(S) * config_.sigma);
  for (double& g : grad) g *= factor;
  return grad;
}

Var perturbed_topk(Var scores, const TopKConfig& config) {
  const Tensor& v = scores.value();
  if (v.rank() != 2 || v.cols() != 1) throw ShapeError("perturbed Top-K expects N x 1 scores");
  auto state = std::make_shared<PerturbedTopK>(config);
  ad::CustomGrad op{"perturbed_topk",
                    [state](std::span<const Tensor* const> in) { return state->forward(in[0]->data()); },
                    [state](const ad::BackwardContext& ctx) {
                      Tensor* g = ctx.input_grads[0];
                      if (g == nullptr) return;
                      const std::vector<double> grad = state->backward(ctx.upstream);
                      for (std::size_t i = 0; i < grad.size(); ++i) (*g)[i] += grad[i];
                    }};
  return ad::custom(op, {scores});
}

Var hard_indicator(Var scores, std::size_t k) {
  const Tensor& v = scores.value();
  return scores.graph().constant(indicator(hard_topk(v.data(), k), v.size()));
}

Var select_features(Var indicator, Var features) {
  if (indicator.value().cols() != features.value().rows()) {
    throw ShapeError("select_features: indicator " + indicator.value().shape_string() + " vs features " +
                     features.value().shape_string());
  }
  return ad::matmul(indicator, features);
}

}  // namespace simil::topk
