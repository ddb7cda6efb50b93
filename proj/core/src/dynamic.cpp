#include "bhpeft/dynamic.hpp"

#include "bhpeft/errors.hpp"

namespace bhpeft {

Strategy parse_strategy(const std::string& name) {
  if (name == "bayesian_chain") return Strategy::bayesian_chain;
  if (name == "data_pooling") return Strategy::data_pooling;
  if (name == "parameter_init") return Strategy::parameter_init;
  if (name == "data_selection") return Strategy::data_selection;
  throw config_error("unknown strategy '" + name +
                     "' (expected bayesian_chain, data_pooling, parameter_init, data_selection)");
}

std::string strategy_name(Strategy s) {
  switch (s) {
    case Strategy::bayesian_chain: return "bayesian_chain";
    case Strategy::data_pooling: return "data_pooling";
    case Strategy::parameter_init: return "parameter_init";
    case Strategy::data_selection: return "data_selection";
  }
  return "?";
}

void chain_prior(Model& model) {
  for (GaussianParameter* g : model.gaussians()) g->prior = posterior_snapshot(*g);
}

DynamicResult run_dynamic(Model& model, const std::vector<Dataset>& rounds, const Dataset& holdout,
                          const DynamicConfig& cfg) {
  if (rounds.empty()) throw input_error("run_dynamic: no rounds");
  for (std::size_t k = 0; k < rounds.size(); ++k) {
    if (rounds[k].size() == 0) {
      throw input_error("run_dynamic: round " + std::to_string(k + 1) + " is empty");
    }
  }
  if (cfg.selection_fraction < 0.0 || cfg.selection_fraction > 1.0) {
    throw config_error("selection_fraction must be in [0,1]");
  }

  const Model initial = model;  // round-1 state, for data_pooling resets
  Rng root(cfg.seed);

  DynamicResult result;
  result.metric_name =
      model.config().task == TaskKind::classification ? "accuracy" : "mse";

  for (std::size_t k = 1; k <= rounds.size(); ++k) {
    const Dataset& fresh = rounds[k - 1];
    Dataset train_ds;
    switch (cfg.strategy) {
      case Strategy::bayesian_chain:
        if (k > 1) chain_prior(model);
        train_ds = fresh;
        break;
      case Strategy::data_pooling: {
        model = initial;
        std::vector<const Dataset*> parts;
        for (std::size_t j = 0; j < k; ++j) parts.push_back(&rounds[j]);
        train_ds = concat_datasets(parts);
        break;
      }
      case Strategy::parameter_init:
        train_ds = fresh;
        break;
      case Strategy::data_selection: {
        train_ds = fresh;
        if (k > 1) {
          std::vector<const Dataset*> parts;
          for (std::size_t j = 0; j + 1 < k; ++j) parts.push_back(&rounds[j]);
          Dataset history = concat_datasets(parts);
          Rng sel = root.child(1000 + k);
          Dataset picked = sample_fraction(history, cfg.selection_fraction, sel);
          train_ds.examples.insert(train_ds.examples.end(), picked.examples.begin(),
                                   picked.examples.end());
        }
        break;
      }
    }

    TrainConfig round_cfg = cfg.train;
    round_cfg.seed = root.child(k).seed();
    train(model, train_ds, round_cfg);

    RoundMetrics rm;
    rm.round = k;
    rm.n_train = train_ds.size();
    rm.holdout_metric = evaluate_mean_mode(model, holdout);
    for (std::size_t j = 0; j < k; ++j) {
      rm.per_round_train_metric.push_back(evaluate_mean_mode(model, rounds[j]));
    }
    result.rounds.push_back(std::move(rm));
  }

  double sum = 0.0;
  for (const RoundMetrics& rm : result.rounds) sum += rm.holdout_metric;
  result.average_holdout = sum / static_cast<double>(result.rounds.size());
  return result;
}

}  // namespace bhpeft
