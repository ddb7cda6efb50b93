#include "bhpeft/inference.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "bhpeft/errors.hpp"

namespace bhpeft {

namespace {

Tensor softmax_row_plain(const Tensor& logits) {
  Tensor p({logits.cols()});
  double mx = logits.at(0, 0);
  for (std::size_t j = 1; j < logits.cols(); ++j) mx = std::max(mx, logits.at(0, j));
  double sum = 0.0;
  for (std::size_t j = 0; j < logits.cols(); ++j) {
    p[j] = std::exp(logits.at(0, j) - mx);
    sum += p[j];
  }
  for (std::size_t j = 0; j < p.numel(); ++j) p[j] /= sum;
  return p;
}

}  // namespace

Prediction summarize_samples(const std::vector<Tensor>& outputs, TaskKind task,
                             bool with_variance) {
  if (outputs.empty()) throw input_error("summarize_samples: no samples");
  if (with_variance && outputs.size() < 2) {
    throw config_error("variance needs at least 2 samples, got " +
                       std::to_string(outputs.size()));
  }
  const std::size_t s = outputs.size();
  std::vector<Tensor> values;
  values.reserve(s);
  if (task == TaskKind::classification) {
    for (const Tensor& o : outputs) values.push_back(softmax_row_plain(o));
  } else {
    for (const Tensor& o : outputs) values.push_back(Tensor({1}, {o[0]}));
  }

  Prediction pred;
  pred.s_eval = s;
  const std::size_t dim = values.front().numel();
  // Accumulate deviations from the first sample. Identical samples then give
  // a mean equal to that sample and a variance of exactly zero.
  const Tensor& base = values.front();
  Tensor dev_mean({dim});
  for (const Tensor& v : values)
    for (std::size_t j = 0; j < dim; ++j) dev_mean[j] += v[j] - base[j];
  for (std::size_t j = 0; j < dim; ++j) dev_mean[j] /= static_cast<double>(s);
  Tensor mean({dim});
  for (std::size_t j = 0; j < dim; ++j) mean[j] = base[j] + dev_mean[j];
  pred.mean_output = mean;

  if (with_variance) {
    Tensor var({dim});
    for (const Tensor& v : values) {
      for (std::size_t j = 0; j < dim; ++j) {
        double c = (v[j] - base[j]) - dev_mean[j];
        var[j] += c * c;
      }
    }
    for (std::size_t j = 0; j < dim; ++j) var[j] /= static_cast<double>(s - 1);
    pred.per_class_variance = var;
    pred.has_variance = true;
    double total = 0.0;
    for (std::size_t j = 0; j < dim; ++j) total += var[j];
    pred.total_uncertainty = total;
  }

  if (task == TaskKind::classification) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < dim; ++j) {
      if (mean[j] > mean[best]) best = j;  // strict: ties keep the lowest index
    }
    pred.predicted_label = static_cast<int>(best);
  }
  return pred;
}

Prediction predict(const Model& model, const std::vector<int>& tokens, std::size_t s_eval,
                   Rng& rng, bool with_variance) {
  if (s_eval < 1) throw config_error("s_eval must be >= 1");
  if (with_variance && s_eval < 2) {
    throw config_error("variance requested but s_eval = " + std::to_string(s_eval) + " < 2");
  }
  std::vector<Tensor> outputs;
  outputs.reserve(s_eval);
  for (std::size_t s = 0; s < s_eval; ++s) {
    outputs.push_back(model.forward_sampled(tokens, rng));
  }
  return summarize_samples(outputs, model.config().task, with_variance);
}

std::vector<RejectionRow> rejection_curve(const Model& model, const Dataset& dataset,
                                          const std::vector<double>& rates, std::size_t s_eval,
                                          std::uint64_t seed) {
  if (dataset.size() == 0) throw input_error("rejection_curve: empty dataset");
  if (rates.empty()) throw input_error("rejection_curve: no rates");
  for (std::size_t i = 0; i < rates.size(); ++i) {
    if (rates[i] < 0.0 || rates[i] >= 1.0) {
      throw input_error("rejection rate must be in [0,1), got " + std::to_string(rates[i]));
    }
    if (i > 0 && rates[i] < rates[i - 1]) throw input_error("rejection rates must be ascending");
  }
  const std::size_t n = dataset.size();
  Rng root(seed);
  std::vector<Prediction> preds;
  preds.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Rng child = root.child(i);
    preds.push_back(predict(model, dataset.examples[i].tokens, s_eval, child, s_eval >= 2));
  }

  // Discard order: highest uncertainty first; among ties, the later-indexed
  // example goes first so the earlier one is kept.
  std::vector<std::size_t> discard_order(n);
  std::iota(discard_order.begin(), discard_order.end(), std::size_t{0});
  std::sort(discard_order.begin(), discard_order.end(), [&](std::size_t a, std::size_t b) {
    if (preds[a].total_uncertainty != preds[b].total_uncertainty) {
      return preds[a].total_uncertainty > preds[b].total_uncertainty;
    }
    return a > b;
  });

  const bool classify = dataset.task == TaskKind::classification;
  std::vector<RejectionRow> rows;
  for (double rate : rates) {
    auto n_reject = static_cast<std::size_t>(
        std::ceil(rate * static_cast<double>(n) - 1e-9));  // guard float slop in r*N
    if (n_reject >= n) {
      throw input_error("rejection rate " + std::to_string(rate) + " leaves no examples");
    }
    std::vector<bool> rejected(n, false);
    for (std::size_t i = 0; i < n_reject; ++i) rejected[discard_order[i]] = true;
    double metric = 0.0;
    std::size_t kept = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (rejected[i]) continue;
      ++kept;
      if (classify) {
        metric += preds[i].predicted_label == dataset.examples[i].label ? 1.0 : 0.0;
      } else {
        double e = preds[i].mean_output[0] - dataset.examples[i].target;
        metric += e * e;
      }
    }
    metric /= static_cast<double>(kept);
    rows.push_back(RejectionRow{rate, kept, classify ? "accuracy" : "mse", metric});
  }
  return rows;
}

}  // namespace bhpeft
