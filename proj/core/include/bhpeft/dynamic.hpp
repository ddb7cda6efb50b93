#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bhpeft/data.hpp"
#include "bhpeft/model.hpp"
#include "bhpeft/training.hpp"

namespace bhpeft {

/// How successive fine-tuning rounds use history.
///   bayesian_chain  - each round's prior is the previous round's posterior;
///                     trains on the new data only
///   data_pooling    - resets to the round-1 initialization and retrains on
///                     all data seen so far
///   parameter_init  - keeps parameter values, keeps the constant round-1
///                     prior, trains on the new data only
///   data_selection  - like parameter_init but adds a uniform sample of
///                     historical data to each round
enum class Strategy { bayesian_chain, data_pooling, parameter_init, data_selection };

Strategy parse_strategy(const std::string& name);  // config_error on unknown
std::string strategy_name(Strategy s);

/// Replaces every Gaussian's prior with a snapshot of its current posterior;
/// variational parameters continue from their current values. Immediately
/// afterwards the total KL term is zero.
void chain_prior(Model& model);

struct DynamicConfig {
  Strategy strategy = Strategy::bayesian_chain;
  double selection_fraction = 0.25;  // data_selection: share of pooled history
  TrainConfig train;
  std::uint64_t seed = 42;
};

struct RoundMetrics {
  std::size_t round;    // 1-based
  std::size_t n_train;  // examples this round actually trained on
  double holdout_metric;
  std::vector<double> per_round_train_metric;  // metric on round j's data, j = 1..round
};

struct DynamicResult {
  std::string metric_name;  // "accuracy" or "mse"
  std::vector<RoundMetrics> rounds;
  double average_holdout;
};

/// Runs the stream under one strategy. Per-round training seeds derive from
/// (cfg.seed, round), so every strategy shares the identical round-1
/// trajectory. Optimizer state starts fresh each round. After each round the
/// model is evaluated mean-mode on the fixed holdout and on every earlier
/// round's training data (the forgetting profile).
DynamicResult run_dynamic(Model& model, const std::vector<Dataset>& rounds, const Dataset& holdout,
                          const DynamicConfig& cfg);

}  // namespace bhpeft
