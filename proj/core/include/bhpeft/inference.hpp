#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bhpeft/data.hpp"
#include "bhpeft/model.hpp"

namespace bhpeft {

/// Predictive summary over weight samples. For classification the mean is a
/// probability vector (softmax averaged in probability space); for regression
/// it is the scalar output. Variances are unbiased (divisor S-1) and
/// total_uncertainty is their sum.
struct Prediction {
  Tensor mean_output;         // [C] probabilities or [1] scalar
  Tensor per_class_variance;  // same shape; empty when not computed
  double total_uncertainty = 0.0;
  int predicted_label = -1;   // classification: argmax of mean, ties -> lowest index
  std::size_t s_eval = 0;
  bool has_variance = false;
};

/// Summary statistics over already-computed model outputs (logits rows or
/// regression scalars), in sample order.
Prediction summarize_samples(const std::vector<Tensor>& outputs, TaskKind task,
                             bool with_variance);

/// Draws s_eval weight samples and summarizes. with_variance requires
/// s_eval >= 2.
Prediction predict(const Model& model, const std::vector<int>& tokens, std::size_t s_eval,
                   Rng& rng, bool with_variance = true);

struct RejectionRow {
  double rate;
  std::size_t n_kept;
  std::string metric_name;  // "accuracy" or "mse"
  double metric_value;
};

/// For each rejection rate r (ascending, in [0,1)), discards the
/// ceil(r * N) examples with the highest total uncertainty (ties keep the
/// earlier-indexed example) and evaluates the metric on the survivors.
/// Per-example prediction noise derives from (seed, example index).
std::vector<RejectionRow> rejection_curve(const Model& model, const Dataset& dataset,
                                          const std::vector<double>& rates, std::size_t s_eval,
                                          std::uint64_t seed);

}  // namespace bhpeft
