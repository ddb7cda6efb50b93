// bhpeft: train, evaluate and stream-fine-tune a Bayesian PEFT transformer.
#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "bhpeft/checkpoint.hpp"
#include "bhpeft/config.hpp"
#include "bhpeft/dynamic.hpp"
#include "bhpeft/errors.hpp"
#include "bhpeft/inference.hpp"
#include "bhpeft/training.hpp"
#include "selfcheck.hpp"

namespace {

using namespace bhpeft;

std::string fmt_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::map<std::string, std::string> parse_kv_list(const std::string& text) {
  std::map<std::string, std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    auto eq = item.find('=');
    if (eq == std::string::npos) throw config_error("expected key=value, got '" + item + "'");
    out[item.substr(0, eq)] = item.substr(eq + 1);
  }
  return out;
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    std::uint64_t x = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw config_error(key + ": expected an unsigned integer, got '" + v + "'");
  }
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw config_error(key + ": expected a number, got '" + v + "'");
  }
}

void apply_seed_env(RunConfig& cfg) {
  if (const char* env = std::getenv("BHPEFT_SEED")) {
    cfg.seed = parse_u64("BHPEFT_SEED", env);
  }
}

/// Data specs: "gen:<task>,n=...,seed=...[,vocab=...,n_max=...,...]" or
/// "tsv:<path>". Generator vocab/n_max default to the model's.
Dataset load_dataset(const std::string& spec, const ModelConfig& mc) {
  auto colon = spec.find(':');
  if (colon == std::string::npos) {
    throw config_error("data spec must start with gen: or tsv:, got '" + spec + "'");
  }
  std::string kind = spec.substr(0, colon);
  std::string rest = spec.substr(colon + 1);
  if (kind == "tsv") {
    return load_text(rest, mc.task, static_cast<int>(mc.classes), mc.vocab, mc.n_max);
  }
  if (kind != "gen") throw config_error("unknown data spec kind '" + kind + "'");

  auto comma = rest.find(',');
  std::string task_name = comma == std::string::npos ? rest : rest.substr(0, comma);
  GenTask task = parse_gen_task(task_name);
  auto kv = comma == std::string::npos ? std::map<std::string, std::string>{}
                                       : parse_kv_list(rest.substr(comma + 1));
  GenParams params;
  params.vocab = mc.vocab;
  params.n_max = mc.n_max;
  std::size_t n = 100;
  std::uint64_t seed = 1;
  for (const auto& [key, value] : kv) {
    if (key == "n") n = parse_u64(key, value);
    else if (key == "seed") seed = parse_u64(key, value);
    else if (key == "vocab") params.vocab = parse_u64(key, value);
    else if (key == "n_max") params.n_max = parse_u64(key, value);
    else if (key == "distinct_tokens") params.distinct_tokens = parse_u64(key, value);
    else if (key == "ambig_fraction") params.ambig_fraction = parse_double(key, value);
    else if (key == "phase") params.phase = static_cast<int>(parse_u64(key, value));
    else throw config_error("unknown generator key '" + key + "'");
  }
  return generate(task, n, seed, params);
}

std::string join_args(int argc, char** argv) {
  std::string out;
  for (int i = 0; i < argc; ++i) {
    if (i) out += ' ';
    out += argv[i];
  }
  return out;
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot write '" + path + "'");
  out << content;
}

// --- train ------------------------------------------------------------------

struct TrainArgs {
  std::string config_path;
  std::string data_spec;
  std::string out_ckpt;
  std::string metrics_csv;
};

int cmd_train(const TrainArgs& args, const std::string& command_line) {
  RunConfig cfg = args.config_path.empty() ? RunConfig{} : load_run_config(args.config_path);
  apply_seed_env(cfg);
  cfg.model.validate();
  cfg.train.validate();

  Dataset ds = load_dataset(args.data_spec, cfg.model);
  if (ds.task != cfg.model.task) {
    throw config_error("dataset task '" + task_name(ds.task) + "' does not match model task '" +
                       task_name(cfg.model.task) + "'");
  }
  Model model = Model::create(cfg.model, cfg.model_seed());
  TrainConfig tc = cfg.train;
  tc.seed = cfg.train_seed();
  if (tc.kl_weight != 1.0) {
    std::printf("note: kl_weight = %s reweights the KL term; the objective is no longer the "
                "exact negative evidence lower bound\n",
                fmt_g(tc.kl_weight).c_str());
  }
  TrainResult result = train(model, ds, tc);

  if (!args.metrics_csv.empty()) {
    std::string csv = "epoch,loss,nll_term,kl_term\n";
    for (const EpochMetrics& em : result.epochs) {
      csv += std::to_string(em.epoch) + "," + fmt_g(em.loss) + "," + fmt_g(em.nll_term) + "," +
             fmt_g(em.kl_term) + "\n";
    }
    write_file(args.metrics_csv, csv);
  }

  CheckpointMeta meta;
  meta.seed = cfg.seed;
  meta.round_index = 1;
  meta.config_digest = config_digest(cfg);
  meta.command_line = command_line;
  checkpoint_save(args.out_ckpt, model, meta);
  if (!result.epochs.empty()) {
    std::printf("trained %zu epochs, final loss %s\n", result.epochs.size(),
                fmt_g(result.epochs.back().loss).c_str());
  }
  return 0;
}

// --- predict ----------------------------------------------------------------

struct PredictArgs {
  std::string ckpt;
  std::string data_spec;
  std::string out_csv;
  std::size_t s_eval = 32;
  std::int64_t seed = -1;  // -1: use the checkpoint's seed
};

int cmd_predict(const PredictArgs& args) {
  LoadedCheckpoint ckpt = checkpoint_load(args.ckpt);
  Dataset ds = load_dataset(args.data_spec, ckpt.config);
  std::uint64_t seed = args.seed >= 0 ? static_cast<std::uint64_t>(args.seed) : ckpt.meta.seed;
  if (const char* env = std::getenv("BHPEFT_SEED")) seed = parse_u64("BHPEFT_SEED", env);
  if (args.s_eval < 1) throw config_error("s_eval must be >= 1");

  const bool with_variance = args.s_eval >= 2;
  std::string csv = with_variance ? "index,predicted,mean_or_probs,total_uncertainty\n"
                                  : "index,predicted,mean_or_probs\n";
  Rng root(seed);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    Rng child = root.child(i);
    Prediction p = predict(ckpt.model, ds.examples[i].tokens, args.s_eval, child, with_variance);
    csv += std::to_string(i) + ",";
    if (ckpt.config.task == TaskKind::classification) {
      csv += std::to_string(p.predicted_label) + ",";
      for (std::size_t j = 0; j < p.mean_output.numel(); ++j) {
        csv += (j ? ";" : "") + fmt_g(p.mean_output[j]);
      }
    } else {
      csv += fmt_g(p.mean_output[0]) + "," + fmt_g(p.mean_output[0]);
    }
    if (with_variance) csv += "," + fmt_g(p.total_uncertainty);
    csv += "\n";
  }
  write_file(args.out_csv, csv);
  return 0;
}

// --- reject -----------------------------------------------------------------

struct RejectArgs {
  std::string ckpt;
  std::string data_spec;
  std::string out_csv;
  std::string rates = "0,0.05,0.1,0.15,0.2,0.25,0.3,0.35,0.4,0.45,0.5";
  std::size_t s_eval = 64;
  std::int64_t seed = -1;
};

int cmd_reject(const RejectArgs& args) {
  LoadedCheckpoint ckpt = checkpoint_load(args.ckpt);
  Dataset ds = load_dataset(args.data_spec, ckpt.config);
  std::uint64_t seed = args.seed >= 0 ? static_cast<std::uint64_t>(args.seed) : ckpt.meta.seed;
  if (const char* env = std::getenv("BHPEFT_SEED")) seed = parse_u64("BHPEFT_SEED", env);

  std::vector<double> rates;
  std::stringstream ss(args.rates);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) rates.push_back(parse_double("rates", item));
  }
  auto rows = rejection_curve(ckpt.model, ds, rates, args.s_eval, seed);
  std::string csv = "rate,n_kept,metric_name,metric_value\n";
  for (const RejectionRow& r : rows) {
    csv += fmt_g(r.rate) + "," + std::to_string(r.n_kept) + "," + r.metric_name + "," +
           fmt_g(r.metric_value) + "\n";
  }
  write_file(args.out_csv, csv);
  return 0;
}

// --- dynamic ----------------------------------------------------------------

struct DynamicArgs {
  std::string config_path;
  std::string stream_spec;
  std::string strategy = "bayesian_chain";
  std::string out_csv;
  std::string out_ckpt;
  std::string manifest_path;
  double selection_fraction = 0.25;
};

struct StreamSpec {
  std::vector<std::size_t> sizes;
  GenTask task = GenTask::keyword;
  std::size_t shift_round = 0;  // phase-shift: first round of phase 2 (1-based)
  std::size_t eval_n = 200;
  std::uint64_t seed = 1;
  GenParams params;
};

StreamSpec parse_stream_spec(const std::string& text, const ModelConfig& mc) {
  StreamSpec spec;
  spec.params.vocab = mc.vocab;
  spec.params.n_max = mc.n_max;
  for (const auto& [key, value] : parse_kv_list(text)) {
    if (key == "sizes") {
      std::stringstream ss(value);
      std::string item;
      while (std::getline(ss, item, ';')) {
        if (!item.empty()) spec.sizes.push_back(parse_u64("sizes", item));
      }
    } else if (key == "task") {
      spec.task = parse_gen_task(value);
    } else if (key == "shift_round") {
      spec.shift_round = parse_u64(key, value);
    } else if (key == "eval_n") {
      spec.eval_n = parse_u64(key, value);
    } else if (key == "seed") {
      spec.seed = parse_u64(key, value);
    } else if (key == "vocab") {
      spec.params.vocab = parse_u64(key, value);
    } else if (key == "n_max") {
      spec.params.n_max = parse_u64(key, value);
    } else if (key == "distinct_tokens") {
      spec.params.distinct_tokens = parse_u64(key, value);
    } else if (key == "ambig_fraction") {
      spec.params.ambig_fraction = parse_double(key, value);
    } else {
      throw config_error("unknown stream key '" + key + "'");
    }
  }
  if (spec.sizes.empty()) throw config_error("stream spec needs sizes=a;b;c");
  if (spec.task == GenTask::phase_shift && spec.shift_round == 0) {
    throw config_error("phase-shift streams need shift_round=k");
  }
  return spec;
}

/// Builds the per-round training sets and the fixed holdout. The holdout is
/// drawn from the distribution of the final round (phase 2 once a
/// phase-shift stream has drifted).
std::pair<std::vector<Dataset>, Dataset> build_stream(const StreamSpec& spec) {
  Rng root(spec.seed);
  std::vector<Dataset> rounds;
  for (std::size_t k = 0; k < spec.sizes.size(); ++k) {
    GenParams p = spec.params;
    if (spec.task == GenTask::phase_shift) {
      p.phase = (k + 1 >= spec.shift_round) ? 2 : 1;
    }
    rounds.push_back(generate(spec.task, spec.sizes[k], root.child(k + 1).seed(), p));
  }
  GenParams pe = spec.params;
  if (spec.task == GenTask::phase_shift) {
    pe.phase = (spec.sizes.size() + 1 > spec.shift_round) ? 2 : 1;
  }
  Dataset holdout = generate(spec.task, spec.eval_n, root.child(0).seed(), pe);
  return {std::move(rounds), std::move(holdout)};
}

int cmd_dynamic(const DynamicArgs& args, const std::string& command_line) {
  RunConfig cfg = args.config_path.empty() ? RunConfig{} : load_run_config(args.config_path);
  apply_seed_env(cfg);
  cfg.model.validate();
  cfg.train.validate();

  StreamSpec spec = parse_stream_spec(args.stream_spec, cfg.model);
  auto [rounds, holdout] = build_stream(spec);

  DynamicConfig dc;
  dc.strategy = parse_strategy(args.strategy);
  dc.selection_fraction = args.selection_fraction;
  dc.train = cfg.train;
  dc.seed = cfg.train_seed();

  Model model = Model::create(cfg.model, cfg.model_seed());
  DynamicResult result = run_dynamic(model, rounds, holdout, dc);

  std::string strategy = strategy_name(dc.strategy);
  std::string csv = "round,strategy,n_train,metric_name,metric_value\n";
  std::size_t total_trained = 0;
  for (const RoundMetrics& rm : result.rounds) {
    total_trained += rm.n_train;
    csv += std::to_string(rm.round) + "," + strategy + "," + std::to_string(rm.n_train) +
           ",holdout_" + result.metric_name + "," + fmt_g(rm.holdout_metric) + "\n";
    for (std::size_t j = 0; j < rm.per_round_train_metric.size(); ++j) {
      csv += std::to_string(rm.round) + "," + strategy + "," + std::to_string(rm.n_train) +
             ",round" + std::to_string(j + 1) + "_train_" + result.metric_name + "," +
             fmt_g(rm.per_round_train_metric[j]) + "\n";
    }
  }
  csv += "avg," + strategy + "," + std::to_string(total_trained) + ",avg_holdout_" +
         result.metric_name + "," + fmt_g(result.average_holdout) + "\n";
  write_file(args.out_csv, csv);

  if (!args.out_ckpt.empty()) {
    CheckpointMeta meta;
    meta.seed = cfg.seed;
    meta.round_index = result.rounds.size();
    meta.config_digest = config_digest(cfg);
    meta.command_line = command_line;
    checkpoint_save(args.out_ckpt, model, meta);
  }
  if (!args.manifest_path.empty()) {
    nlohmann::json manifest;
    manifest["seed"] = cfg.seed;
    manifest["config_digest"] = config_digest(cfg);
    manifest["strategy"] = strategy;
    manifest["strategy_params"] = {{"selection_fraction", args.selection_fraction}};
    manifest["kl_weight"] = cfg.train.kl_weight;
    manifest["exact_elbo_objective"] = cfg.train.kl_weight == 1.0;
    manifest["stream"] = {{"task", gen_task_name(spec.task)},
                          {"sizes", spec.sizes},
                          {"shift_round", spec.shift_round},
                          {"eval_n", spec.eval_n},
                          {"seed", spec.seed}};
    manifest["metric"] = result.metric_name;
    manifest["average_holdout"] = result.average_holdout;
    write_file(args.manifest_path, manifest.dump(2) + "\n");
  }
  std::printf("%s: average holdout %s = %s\n", strategy.c_str(), result.metric_name.c_str(),
              fmt_g(result.average_holdout).c_str());
  return 0;
}

// --- gen-data ---------------------------------------------------------------

struct GenDataArgs {
  std::string task = "keyword";
  std::size_t n = 100;
  std::uint64_t seed = 1;
  std::string out_path;
  std::size_t vocab = 512;
  std::size_t n_max = 32;
  std::size_t distinct_tokens = 16;
  double ambig_fraction = 0.25;
  int phase = 1;
};

int cmd_gen_data(const GenDataArgs& args) {
  GenParams params;
  params.vocab = args.vocab;
  params.n_max = args.n_max;
  params.distinct_tokens = args.distinct_tokens;
  params.ambig_fraction = args.ambig_fraction;
  params.phase = args.phase;
  Dataset ds = generate(parse_gen_task(args.task), args.n, args.seed, params);
  save_tsv(ds, args.out_path);
  std::printf("wrote %zu examples to %s\n", ds.size(), args.out_path.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian hybrid parameter-efficient fine-tuning for a miniature transformer"};
  app.require_subcommand(1);
  std::string command_line = join_args(argc, argv);

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "fine-tune on a dataset and write a checkpoint");
  train_cmd->add_option("--config", train_args.config_path, "flat key = value config file");
  train_cmd->add_option("--data", train_args.data_spec, "gen:<task>,k=v,... or tsv:<path>")
      ->required();
  train_cmd->add_option("--out", train_args.out_ckpt, "output checkpoint path")->required();
  train_cmd->add_option("--metrics", train_args.metrics_csv, "per-epoch metrics CSV path");

  PredictArgs predict_args;
  auto* predict_cmd = app.add_subcommand("predict", "predictive means and uncertainties");
  predict_cmd->add_option("--ckpt", predict_args.ckpt, "checkpoint path")->required();
  predict_cmd->add_option("--data", predict_args.data_spec, "data spec")->required();
  predict_cmd->add_option("--out", predict_args.out_csv, "output CSV path")->required();
  predict_cmd->add_option("--s-eval", predict_args.s_eval, "weight samples per prediction");
  predict_cmd->add_option("--seed", predict_args.seed, "sampling seed (default: checkpoint's)");

  RejectArgs reject_args;
  auto* reject_cmd = app.add_subcommand("reject", "rejection-curve analysis");
  reject_cmd->add_option("--ckpt", reject_args.ckpt, "checkpoint path")->required();
  reject_cmd->add_option("--data", reject_args.data_spec, "labeled data spec")->required();
  reject_cmd->add_option("--out", reject_args.out_csv, "output CSV path")->required();
  reject_cmd->add_option("--rates", reject_args.rates, "comma-separated rejection rates");
  reject_cmd->add_option("--s-eval", reject_args.s_eval, "weight samples per prediction");
  reject_cmd->add_option("--seed", reject_args.seed, "sampling seed (default: checkpoint's)");

  DynamicArgs dynamic_args;
  auto* dynamic_cmd = app.add_subcommand("dynamic", "streaming fine-tuning rounds");
  dynamic_cmd->add_option("--config", dynamic_args.config_path, "config file");
  dynamic_cmd
      ->add_option("--stream", dynamic_args.stream_spec,
                   "sizes=a;b;c,task=...,shift_round=k,eval_n=m,seed=s")
      ->required();
  dynamic_cmd->add_option("--strategy", dynamic_args.strategy,
                          "bayesian_chain | data_pooling | parameter_init | data_selection");
  dynamic_cmd->add_option("--out-csv", dynamic_args.out_csv, "per-round metrics CSV")->required();
  dynamic_cmd->add_option("--out-ckpt", dynamic_args.out_ckpt, "final checkpoint path");
  dynamic_cmd->add_option("--manifest", dynamic_args.manifest_path, "JSON run manifest path");
  dynamic_cmd->add_option("--selection-fraction", dynamic_args.selection_fraction,
                          "data_selection history fraction");

  GenDataArgs gen_args;
  auto* gen_cmd = app.add_subcommand("gen-data", "write a synthetic dataset as TSV");
  gen_cmd->add_option("--task", gen_args.task, "keyword | noisy-region | phase-shift | regression-count");
  gen_cmd->add_option("--n", gen_args.n, "number of examples");
  gen_cmd->add_option("--seed", gen_args.seed, "generator seed");
  gen_cmd->add_option("--out", gen_args.out_path, "output TSV path")->required();
  gen_cmd->add_option("--vocab", gen_args.vocab, "vocabulary size");
  gen_cmd->add_option("--n-max", gen_args.n_max, "maximum sequence length");
  gen_cmd->add_option("--distinct-tokens", gen_args.distinct_tokens, "token pool entries in use");
  gen_cmd->add_option("--ambig-fraction", gen_args.ambig_fraction, "noisy-region share");
  gen_cmd->add_option("--phase", gen_args.phase, "phase-shift phase (1 or 2)");

  auto* selfcheck_cmd = app.add_subcommand("selfcheck", "run the analytic oracle battery");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;  // usage problems exit 2, --help exits 0
  }

  try {
    if (train_cmd->parsed()) return cmd_train(train_args, command_line);
    if (predict_cmd->parsed()) return cmd_predict(predict_args);
    if (reject_cmd->parsed()) return cmd_reject(reject_args);
    if (dynamic_cmd->parsed()) return cmd_dynamic(dynamic_args, command_line);
    if (gen_cmd->parsed()) return cmd_gen_data(gen_args);
    if (selfcheck_cmd->parsed()) return bhpeft_cli::run_selfcheck();
  } catch (const config_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const input_error& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
