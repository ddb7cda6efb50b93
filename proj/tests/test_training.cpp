#include <doctest.h>

#include <cmath>

#include "bhpeft/errors.hpp"
#include "bhpeft/training.hpp"
#include "oracles.hpp"

using namespace bhpeft;

namespace {

ModelConfig grad_config() {
  // The small instance used for the full gradient suite.
  ModelConfig cfg;
  cfg.d = 4;
  cfg.h = 2;
  cfg.layers = 1;
  cfg.n_max = 4;
  cfg.vocab = 16;
  cfg.prefix_len = 2;
  cfg.r_prefix = 2;
  cfg.r_adapter = 2;
  cfg.adapter_scale = 4.0;
  return cfg;
}

std::vector<const Example*> all_examples(const Dataset& ds) {
  std::vector<const Example*> out;
  for (const Example& ex : ds.examples) out.push_back(&ex);
  return out;
}

Dataset tiny_classification_set() {
  Dataset ds;
  ds.task = TaskKind::classification;
  ds.classes = 2;
  ds.vocab = 16;
  ds.examples = {{{1, 2, 3}, 0, 0.0}, {{4, 5, 6}, 1, 0.0}, {{7, 8, 9}, 1, 0.0}};
  return ds;
}

}  // namespace

TEST_CASE("log likelihood anchors") {
  Model m = Model::create(grad_config(), 1);
  {
    Tape t;
    Var logits = t.constant(Tensor({1, 4}, {0.7, 0.7, 0.7, 0.7}));
    Example ex{{1}, 2, 0.0};
    double ll = log_likelihood_node(t, logits, TaskKind::classification, ex, 1.0).value()[0];
    CHECK(ll == doctest::Approx(std::log(0.25)).epsilon(1e-12));
  }
  {
    Tape t;
    Var logits = t.constant(Tensor({1, 2}, {10.0, -10.0}));
    Example ex{{1}, 0, 0.0};
    double ll = log_likelihood_node(t, logits, TaskKind::classification, ex, 1.0).value()[0];
    CHECK(std::abs(ll) < 1e-8);
  }
  {
    Tape t;
    Var out = t.constant(Tensor({1, 1}, {2.5}));
    Example ex{{1}, 0, 2.5};
    double ll = log_likelihood_node(t, out, TaskKind::regression, ex, 1.0).value()[0];
    CHECK(ll == doctest::Approx(-0.9189385332046727).epsilon(1e-12));
  }
  {
    Tape t;
    Var logits = t.constant(Tensor({1, 2}, {0.0, 0.0}));
    Example ex{{1}, 5, 0.0};
    CHECK_THROWS_AS(log_likelihood_node(t, logits, TaskKind::classification, ex, 1.0),
                    input_error);
  }
}

TEST_CASE("negative elbo structure") {
  Model m = Model::create(grad_config(), 3);
  Dataset ds = tiny_classification_set();
  TrainConfig cfg;
  cfg.mc_samples = 2;
  cfg.batch_size = 3;

  SUBCASE("loss decomposes exactly into nll + kl") {
    Tape t;
    Rng rng(1);
    RngEps eps(rng);
    ElboParts parts = negative_elbo(t, m, all_examples(ds), ds.size(), cfg, eps);
    CHECK(std::abs(parts.loss.value()[0] - (parts.nll_term + parts.kl_term)) <= 1e-9);
    CHECK(std::isfinite(parts.loss.value()[0]));
  }

  SUBCASE("kl term vanishes when q equals the prior") {
    Model q = Model::create(grad_config(), 3);
    for (GaussianParameter* g : q.gaussians()) {
      g->prior = posterior_snapshot(*g);
    }
    Tape t;
    Rng rng(1);
    RngEps eps(rng);
    ElboParts parts = negative_elbo(t, q, all_examples(ds), ds.size(), cfg, eps);
    CHECK(std::abs(parts.kl_term) < 1e-9);
  }

  SUBCASE("g = 0 removes sampling variance across S") {
    Model z = Model::create(grad_config(), 3);
    for (GaussianParameter* g : z.gaussians()) g->g.value = Tensor::zeros(g->shape());
    auto eval_with_s = [&](std::size_t s, std::uint64_t seed) {
      TrainConfig c = cfg;
      c.mc_samples = s;
      Tape t;
      Rng rng(seed);
      RngEps eps(rng);
      return negative_elbo(t, z, all_examples(ds), ds.size(), c, eps).nll_term;
    };
    CHECK(eval_with_s(1, 10) == doctest::Approx(eval_with_s(4, 20)).epsilon(1e-12));
  }

  SUBCASE("full-batch kl scale is exactly the kl sum") {
    Tape t;
    Rng rng(2);
    RngEps eps(rng);
    ElboParts parts = negative_elbo(t, m, all_examples(ds), ds.size(), cfg, eps);
    double kl_sum = 0.0;
    for (GaussianParameter* g : m.gaussians()) kl_sum += kl_to_prior(*g, g->prior);
    CHECK(parts.kl_term == doctest::Approx(kl_sum).epsilon(1e-12));
  }

  SUBCASE("dataset smaller than batch is a configuration error") {
    Tape t;
    Rng rng(1);
    RngEps eps(rng);
    CHECK_THROWS_AS(negative_elbo(t, m, all_examples(ds), 2, cfg, eps), config_error);
  }
}

TEST_CASE("negative elbo gradients match finite differences on the small instance") {
  Model m = Model::create(grad_config(), 5);
  Dataset ds = tiny_classification_set();
  TrainConfig cfg;
  cfg.mc_samples = 2;
  cfg.batch_size = 3;

  // Record the noise once, then rebuild the identical loss for every probe.
  EpsSet captured;
  {
    Tape t;
    Rng rng(9);
    RngEps eps(rng, &captured);
    negative_elbo(t, m, all_examples(ds), 6, cfg, eps);
  }
  auto build = [&](Tape& t) -> Var {
    ReplayEps eps(captured);
    return negative_elbo(t, m, all_examples(ds), 6, cfg, eps).loss;
  };
  auto r = oracles::gradcheck(m.trainable(), build);
  CAPTURE(r.worst);
  CHECK(r.max_rel_err < 1e-4);
}

TEST_CASE("per-example noise mode") {
  Model m = Model::create(grad_config(), 5);
  Dataset ds = tiny_classification_set();
  TrainConfig cfg;
  cfg.mc_samples = 1;
  cfg.batch_size = 3;
  cfg.per_example_eps = true;

  SUBCASE("draws differ from the shared-noise objective") {
    TrainConfig shared = cfg;
    shared.per_example_eps = false;
    Tape t1, t2;
    Rng r1(4), r2(4);
    RngEps e1(r1), e2(r2);
    double a = negative_elbo(t1, m, all_examples(ds), 3, cfg, e1).nll_term;
    double b = negative_elbo(t2, m, all_examples(ds), 3, shared, e2).nll_term;
    CHECK(a != b);
  }

  SUBCASE("gradients still match finite differences") {
    EpsSet captured;
    {
      Tape t;
      Rng rng(9);
      RngEps eps(rng, &captured);
      negative_elbo(t, m, all_examples(ds), 3, cfg, eps);
    }
    auto build = [&](Tape& t) -> Var {
      ReplayEps eps(captured);
      return negative_elbo(t, m, all_examples(ds), 3, cfg, eps).loss;
    };
    auto r = oracles::gradcheck(m.trainable(), build);
    CAPTURE(r.worst);
    CHECK(r.max_rel_err < 1e-4);
  }
}

TEST_CASE("regression task trains end to end") {
  ModelConfig mc = grad_config();
  mc.task = TaskKind::regression;
  mc.vocab = 64;
  mc.n_max = 8;
  mc.d = 8;
  GenParams gp;
  gp.vocab = 64;
  gp.n_max = 8;
  Dataset ds = generate(GenTask::regression_count, 64, 3, gp);
  Model m = Model::create(mc, 17);
  double before = evaluate_mean_mode(m, ds);  // MSE
  TrainConfig cfg;
  cfg.epochs = 10;
  cfg.batch_size = 16;
  cfg.learning_rate = 0.02;
  cfg.seed = 5;
  TrainResult r = train(m, ds, cfg);
  double after = evaluate_mean_mode(m, ds);
  CHECK(std::isfinite(r.epochs.back().loss));
  CHECK(after < before);
  CHECK(after < 0.1);
}

TEST_CASE("monte carlo averaging reduces objective variance") {
  Model m = Model::create(grad_config(), 7);
  Dataset ds = tiny_classification_set();
  auto variance_at = [&](std::size_t s) {
    TrainConfig cfg;
    cfg.mc_samples = s;
    cfg.batch_size = 3;
    std::vector<double> vals;
    for (int rep = 0; rep < 100; ++rep) {
      Tape t;
      Rng rng(1000 + rep);
      RngEps eps(rng);
      vals.push_back(negative_elbo(t, m, all_examples(ds), ds.size(), cfg, eps).nll_term);
    }
    double mean = 0.0;
    for (double v : vals) mean += v;
    mean /= vals.size();
    double var = 0.0;
    for (double v : vals) var += (v - mean) * (v - mean);
    return var / (vals.size() - 1);
  };
  CHECK(variance_at(16) <= variance_at(1));
}

TEST_CASE("training loop") {
  ModelConfig mc = grad_config();
  GenParams gp;
  gp.vocab = 16;
  gp.n_max = 4;
  Dataset ds = generate(GenTask::keyword, 24, 11, gp);

  SUBCASE("zero epochs leave parameters untouched") {
    Model m = Model::create(mc, 13);
    Model before = m;
    TrainConfig cfg;
    cfg.epochs = 0;
    train(m, ds, cfg);
    for (std::size_t i = 0; i < m.trainable().size(); ++i) {
      CHECK(bitwise_equal(m.trainable()[i]->value, before.trainable()[i]->value));
    }
  }

  SUBCASE("divergence aborts with a diagnostic naming the batch") {
    Model m = Model::create(mc, 13);
    TrainConfig cfg;
    cfg.epochs = 50;
    cfg.batch_size = 8;
    // One Adam step of this size pushes (mu - mu0)^2 past the double range,
    // so the next objective evaluation is non-finite.
    cfg.learning_rate = 1e160;
    CHECK_THROWS_WITH_AS(train(m, ds, cfg), doctest::Contains("epoch"), numeric_error);
  }

  SUBCASE("same seed gives identical trajectories; backbone never moves") {
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 8;
    cfg.seed = 77;
    Model m1 = Model::create(mc, 13);
    Model m2 = Model::create(mc, 13);
    std::uint64_t digest_before = m1.backbone_digest();
    TrainResult r1 = train(m1, ds, cfg);
    TrainResult r2 = train(m2, ds, cfg);
    REQUIRE(r1.epochs.size() == 3);
    for (std::size_t e = 0; e < 3; ++e) {
      CHECK(r1.epochs[e].loss == r2.epochs[e].loss);
      CHECK(r1.epochs[e].nll_term == r2.epochs[e].nll_term);
      CHECK(r1.epochs[e].kl_term == r2.epochs[e].kl_term);
      CHECK(std::isfinite(r1.epochs[e].loss));
      CHECK(r1.epochs[e].loss ==
            doctest::Approx(r1.epochs[e].nll_term + r1.epochs[e].kl_term).epsilon(1e-9));
    }
    CHECK(m1.backbone_digest() == digest_before);
    CHECK(bitwise_equal(m1.head().w.value, m2.head().w.value));
  }
}

TEST_CASE("separable keyword task is learnable") {
  ModelConfig mc;
  mc.d = 32;
  mc.h = 4;
  mc.layers = 1;
  mc.n_max = 8;
  mc.vocab = 512;
  GenParams gp;
  gp.n_max = 8;
  gp.distinct_tokens = 8;
  auto [train_ds, eval_ds] = train_eval_split(GenTask::keyword, 200, 60, 21, gp);

  Model m = Model::create(mc, 29);
  TrainConfig cfg;
  cfg.epochs = 20;
  cfg.batch_size = 16;
  cfg.learning_rate = 0.02;
  cfg.seed = 129;
  train(m, train_ds, cfg);
  CHECK(evaluate_mean_mode(m, eval_ds) >= 0.9);
}
