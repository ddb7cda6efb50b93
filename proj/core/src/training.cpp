#include "bhpeft/training.hpp"

#include <algorithm>
#include <cmath>

#include "bhpeft/errors.hpp"

namespace bhpeft {

void TrainConfig::validate() const {
  if (mc_samples < 1) throw config_error("mc_samples must be >= 1");
  if (batch_size < 1) throw config_error("batch_size must be >= 1");
  if (learning_rate <= 0.0) throw config_error("learning_rate must be positive");
  if (sigma_n <= 0.0) throw config_error("sigma_n must be positive");
  if (eval_samples < 1) throw config_error("eval_samples must be >= 1");
}

Var log_likelihood_node(Tape&, Var output, TaskKind task, const Example& ex, double sigma_n) {
  if (task == TaskKind::classification) {
    if (ex.label < 0 || static_cast<std::size_t>(ex.label) >= output.value().cols()) {
      throw input_error("target class " + std::to_string(ex.label) + " out of range for " +
                        std::to_string(output.value().cols()) + " classes");
    }
    return log_softmax_pick(output, static_cast<std::size_t>(ex.label));
  }
  Var diff = add_scalar(sum_all(output), -ex.target);
  Var sq = scale(mul(diff, diff), -1.0 / (2.0 * sigma_n * sigma_n));
  return add_scalar(sq, -std::log(sigma_n * std::sqrt(2.0 * 3.141592653589793)));
}

double log_likelihood(const Model& model, const Tensor& output, const Example& ex, double sigma_n) {
  Tape scratch;
  return log_likelihood_node(scratch, scratch.constant(output), model.config().task, ex, sigma_n)
      .value()[0];
}

ElboParts negative_elbo(Tape& tape, Model& model, const std::vector<const Example*>& batch,
                        std::size_t dataset_size, const TrainConfig& cfg, EpsSource& eps) {
  if (batch.empty()) throw input_error("negative_elbo: empty batch");
  if (dataset_size < batch.size()) {
    throw config_error("dataset size " + std::to_string(dataset_size) +
                       " smaller than batch size " + std::to_string(batch.size()));
  }
  Var ll_sum;
  bool have_ll = false;
  for (std::size_t s = 0; s < cfg.mc_samples; ++s) {
    std::string sample_key = "s" + std::to_string(s) + ".";
    TapedWeights tw;
    if (!cfg.per_example_eps) tw = model.realize_sampled(tape, eps, sample_key);
    for (std::size_t e = 0; e < batch.size(); ++e) {
      if (cfg.per_example_eps) {
        tw = model.realize_sampled(tape, eps, sample_key + "e" + std::to_string(e) + ".");
      }
      Var out = model.forward_on_tape(tape, batch[e]->tokens, tw);
      Var ll = log_likelihood_node(tape, out, model.config().task, *batch[e], cfg.sigma_n);
      ll_sum = have_ll ? add(ll_sum, ll) : ll;
      have_ll = true;
    }
  }
  Var nll = scale(ll_sum, -1.0 / static_cast<double>(cfg.mc_samples));

  Var kl_sum;
  bool have_kl = false;
  for (GaussianParameter* g : model.gaussians()) {
    Var kl = kl_node(tape, *g);
    kl_sum = have_kl ? add(kl_sum, kl) : kl;
    have_kl = true;
  }
  double kl_scale =
      cfg.kl_weight * static_cast<double>(batch.size()) / static_cast<double>(dataset_size);
  Var kl_scaled = have_kl ? scale(kl_sum, kl_scale) : tape.constant(Tensor::scalar(0.0));

  ElboParts parts;
  parts.loss = add(nll, kl_scaled);
  parts.nll_term = nll.value()[0];
  parts.kl_term = kl_scaled.value()[0];
  return parts;
}

void AdamOptimizer::step(const std::vector<Parameter*>& params, const Tape& tape) {
  ++t_;
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (Parameter* p : params) {
    Tensor g = tape.grad(*p);
    auto [it, fresh] = state_.try_emplace(p, Tensor::zeros(p->value.shape()),
                                          Tensor::zeros(p->value.shape()));
    Tensor& m = it->second.first;
    Tensor& v = it->second.second;
    for (std::size_t i = 0; i < g.numel(); ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * g[i];
      v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
      double mhat = m[i] / bc1;
      double vhat = v[i] / bc2;
      p->value[i] -= lr_ * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

namespace {
void shuffle_indices(std::vector<std::size_t>& idx, Rng& rng) {
  for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.index(i)]);
}
}  // namespace

TrainResult train(Model& model, const Dataset& dataset, const TrainConfig& cfg) {
  cfg.validate();
  if (dataset.size() == 0) throw input_error("train: empty dataset");
  TrainResult result;
  Rng rng(cfg.seed);
  Rng shuffle_rng = rng.child(0);
  Rng eps_rng = rng.child(1);
  AdamOptimizer opt(cfg.learning_rate);
  std::vector<Parameter*> params = model.trainable();
  std::vector<std::size_t> order(dataset.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    shuffle_indices(order, shuffle_rng);
    EpochMetrics em{epoch, 0.0, 0.0, 0.0};
    std::size_t batch_no = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batch_no) {
      std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      std::vector<const Example*> batch;
      batch.reserve(stop - start);
      for (std::size_t i = start; i < stop; ++i) batch.push_back(&dataset.examples[order[i]]);

      Tape tape;
      RngEps eps(eps_rng);
      ElboParts parts = negative_elbo(tape, model, batch, dataset.size(), cfg, eps);
      double loss = parts.loss.value()[0];
      if (!std::isfinite(loss)) {
        throw numeric_error("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                            std::to_string(batch_no) + " (nll=" + std::to_string(parts.nll_term) +
                            ", kl=" + std::to_string(parts.kl_term) + ")");
      }
      tape.backward(parts.loss);
      opt.step(params, tape);

      em.loss += loss;
      em.nll_term += parts.nll_term;
      em.kl_term += parts.kl_term;
    }
    result.epochs.push_back(em);
  }
  return result;
}

double evaluate_mean_mode(const Model& model, const Dataset& dataset) {
  if (dataset.size() == 0) throw input_error("evaluate: empty dataset");
  if (model.config().task == TaskKind::classification) {
    std::size_t correct = 0;
    for (const Example& ex : dataset.examples) {
      Tensor logits = model.forward_mean(ex.tokens);
      std::size_t best = 0;
      for (std::size_t j = 1; j < logits.cols(); ++j) {
        if (logits.at(0, j) > logits.at(0, best)) best = j;
      }
      if (static_cast<int>(best) == ex.label) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(dataset.size());
  }
  double sse = 0.0;
  for (const Example& ex : dataset.examples) {
    double out = model.forward_mean(ex.tokens)[0];
    sse += (out - ex.target) * (out - ex.target);
  }
  return sse / static_cast<double>(dataset.size());
}

}  // namespace bhpeft
