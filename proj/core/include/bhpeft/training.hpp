#pragma once

#include <cstdint>
#include <unordered_map>
#include <utility>
#include <vector>

#include "bhpeft/data.hpp"
#include "bhpeft/model.hpp"

namespace bhpeft {

struct TrainConfig {
  std::size_t mc_samples = 1;     // S: Monte Carlo samples per objective evaluation
  std::size_t epochs = 20;
  std::size_t batch_size = 32;
  double learning_rate = 0.01;
  double kl_weight = 1.0;         // 1.0 is the faithful variational objective
  double sigma_n = 1.0;           // regression observation noise (fixed)
  bool per_example_eps = false;   // fresh noise per example instead of per sample index
  std::uint64_t seed = 42;
  std::size_t eval_samples = 32;  // S_eval for prediction-time sampling

  void validate() const;
};

/// Log p(y | output). Classification: log softmax(output)[label].
/// Regression: Gaussian log density with fixed noise sigma_n. Higher is
/// better.
Var log_likelihood_node(Tape& tape, Var output, TaskKind task, const Example& ex, double sigma_n);
double log_likelihood(const Model& model, const Tensor& output, const Example& ex, double sigma_n);

struct ElboParts {
  Var loss;         // scalar node: nll_term + kl_term
  double nll_term;  // -(1/S) sum_i sum_batch log p(y | x, W^(i))
  double kl_term;   // (|batch| / N) * kl_weight * sum_params KL(q || prior)
};

/// Negative evidence lower bound for one minibatch. Noise is drawn per
/// Monte Carlo sample index and shared across the batch (or per example when
/// cfg.per_example_eps). The KL term is scaled by |batch| / N so that
/// per-batch losses sum to the full-dataset objective over an epoch.
ElboParts negative_elbo(Tape& tape, Model& model, const std::vector<const Example*>& batch,
                        std::size_t dataset_size, const TrainConfig& cfg, EpsSource& eps);

/// Adam with beta1 = 0.9, beta2 = 0.999, eps = 1e-8. State is keyed by
/// parameter identity and persists across steps.
class AdamOptimizer {
 public:
  explicit AdamOptimizer(double learning_rate) : lr_(learning_rate) {}
  void step(const std::vector<Parameter*>& params, const Tape& tape);

 private:
  double lr_;
  std::size_t t_ = 0;
  std::unordered_map<const Parameter*, std::pair<Tensor, Tensor>> state_;
};

struct EpochMetrics {
  std::size_t epoch;  // 1-based
  double loss;
  double nll_term;
  double kl_term;
};

struct TrainResult {
  std::vector<EpochMetrics> epochs;
};

/// Seeded epochs of shuffled minibatch descent on the negative ELBO. Only
/// variational parameters and the task head move; the frozen backbone is
/// untouched. Aborts with numeric_error if the loss leaves the reals.
TrainResult train(Model& model, const Dataset& dataset, const TrainConfig& cfg);

/// Mean-mode evaluation: accuracy for classification, MSE for regression.
double evaluate_mean_mode(const Model& model, const Dataset& dataset);

}  // namespace bhpeft
