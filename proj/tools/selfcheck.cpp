#include "selfcheck.hpp"

#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "bhpeft/model.hpp"
#include "bhpeft/training.hpp"
#include "bhpeft/variational.hpp"

namespace bhpeft_cli {

namespace {

using namespace bhpeft;

// Minimal adaptive Simpson for the KL integrand; independent of the
// closed-form path it validates.
double simpson_rec(const std::function<double(double)>& f, double a, double b, double fa,
                   double fm, double fb, double whole, double tol, int depth) {
  double m = 0.5 * (a + b);
  double flm = f(0.5 * (a + m)), frm = f(0.5 * (m + b));
  double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  if (depth <= 0 || std::abs(left + right - whole) <= 15.0 * tol) {
    return left + right + (left + right - whole) / 15.0;
  }
  return simpson_rec(f, a, m, fa, flm, fm, left, tol / 2, depth - 1) +
         simpson_rec(f, m, b, fm, frm, fb, right, tol / 2, depth - 1);
}

double kl_quadrature(double mu_q, double s_q, double mu_p, double s_p) {
  auto f = [&](double x) {
    double q = std::exp(-(x - mu_q) * (x - mu_q) / (2 * s_q * s_q)) /
               (s_q * std::sqrt(2 * 3.141592653589793));
    double lr = std::log(s_p / s_q) - (x - mu_q) * (x - mu_q) / (2 * s_q * s_q) +
                (x - mu_p) * (x - mu_p) / (2 * s_p * s_p);
    return q * lr;
  };
  double a = mu_q - 12 * s_q, b = mu_q + 12 * s_q, m = 0.5 * (a + b);
  double fa = f(a), fm = f(m), fb = f(b);
  double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
  return simpson_rec(f, a, b, fa, fm, fb, whole, 1e-12, 44);
}

bool check(const char* name, bool ok) {
  std::printf("[%s] %s\n", ok ? "ok" : "FAIL", name);
  return ok;
}

bool check_kl_oracle() {
  bool ok = true;
  // Analytic anchors.
  {
    GaussianParameter p;
    p.name = "a";
    p.mu = Parameter{"a.mu", Tensor::scalar(0.1)};
    p.g = Parameter{"a.g", Tensor::scalar(std::sqrt(0.1))};
    p.prior = PriorSpec{Tensor::scalar(0.0), Tensor::scalar(0.1)};
    ok = ok && std::abs(kl_to_prior(p, p.prior) - 0.5) < 1e-12;
    p.mu.value = Tensor::scalar(0.0);
    p.g.value = Tensor::scalar(std::sqrt(0.2));
    ok = ok && std::abs(kl_to_prior(p, p.prior) - 0.8068528194400547) < 1e-12;
  }
  // Random scalar cases against quadrature.
  Rng rng(4242);
  for (int i = 0; i < 200 && ok; ++i) {
    double mu_q = rng.uniform(-2, 2), g = rng.uniform(0.05, 1.0);
    double mu0 = rng.uniform(-2, 2), s0 = rng.uniform(0.02, 1.5);
    GaussianParameter p;
    p.name = "q";
    p.mu = Parameter{"q.mu", Tensor::scalar(mu_q)};
    p.g = Parameter{"q.g", Tensor::scalar(g)};
    p.prior = PriorSpec{Tensor::scalar(mu0), Tensor::scalar(s0)};
    double closed = kl_to_prior(p, p.prior);
    double quad = kl_quadrature(mu_q, g * g, mu0, s0);
    ok = ok && std::abs(closed - quad) <= 1e-6 * std::max(1e-6, std::abs(quad));
  }
  return check("closed-form KL matches 1-D quadrature", ok);
}

bool check_gradients() {
  ModelConfig cfg;
  cfg.d = 4;
  cfg.h = 2;
  cfg.layers = 1;
  cfg.n_max = 4;
  cfg.vocab = 16;
  cfg.prefix_len = 2;
  cfg.r_prefix = 2;
  cfg.r_adapter = 2;
  Model model = Model::create(cfg, 5);
  Dataset ds;
  ds.task = TaskKind::classification;
  ds.classes = 2;
  ds.vocab = 16;
  ds.examples = {{{1, 2, 3}, 0, 0.0}, {{4, 5, 6}, 1, 0.0}};
  std::vector<const Example*> batch = {&ds.examples[0], &ds.examples[1]};
  TrainConfig tc;
  tc.mc_samples = 2;

  EpsSet captured;
  {
    Tape t;
    Rng rng(9);
    RngEps eps(rng, &captured);
    negative_elbo(t, model, batch, 4, tc, eps);
  }
  auto build = [&](Tape& t) {
    ReplayEps eps(captured);
    return negative_elbo(t, model, batch, 4, tc, eps).loss;
  };

  Tape tape;
  Var loss = build(tape);
  tape.backward(loss);
  bool ok = true;
  const double h = 1e-5;
  for (Parameter* p : model.trainable()) {
    Tensor analytic = tape.grad(*p);
    for (std::size_t i = 0; i < p->value.numel() && ok; ++i) {
      double saved = p->value[i];
      p->value[i] = saved + h;
      Tape tp;
      double up = build(tp).value()[0];
      p->value[i] = saved - h;
      Tape tm;
      double down = build(tm).value()[0];
      p->value[i] = saved;
      double fd = (up - down) / (2 * h);
      double rel = std::abs(analytic[i] - fd) /
                   std::max({1e-3, std::abs(analytic[i]), std::abs(fd)});
      ok = ok && rel < 1e-4;
    }
  }
  return check("objective gradients match central finite differences", ok);
}

bool check_kernels() {
  bool ok = true;
  {
    Tape t;
    Tensor s = softmax_rows(t.constant(Tensor({1, 3}, {1000, 1000, 999}))).value();
    double sum = s.at(0, 0) + s.at(0, 1) + s.at(0, 2);
    ok = ok && s.all_finite() && std::abs(sum - 1.0) < 1e-12;
  }
  {
    Tape t;
    Tensor gamma = Tensor::filled({4}, 1.0);
    Tensor beta = Tensor::zeros({4});
    Tensor r = layer_norm(t.constant(Tensor({1, 4}, {5, 5, 5, 5})), gamma, beta, 1e-5).value();
    for (std::size_t j = 0; j < 4; ++j) ok = ok && r.at(0, j) == 0.0;
  }
  {
    Tape t;
    ok = ok && std::abs(tanh(t.constant(Tensor::scalar(1.0))).value()[0] - 0.7615941559557649) <
                   1e-15;
  }
  return check("kernel anchors (softmax stability, layer norm, tanh)", ok);
}

bool check_sampler() {
  GaussianParameter p;
  p.name = "s";
  p.mu = Parameter{"s.mu", Tensor::scalar(1.0)};
  p.g = Parameter{"s.g", Tensor::scalar(0.5)};
  p.prior = PriorSpec{Tensor::scalar(0.0), Tensor::scalar(0.1)};
  Rng rng(7);
  const int n = 20000;
  double sum = 0, sum_sq = 0;
  for (int i = 0; i < n; ++i) {
    auto [w, eps] = sample(p, rng);
    sum += w[0];
    sum_sq += w[0] * w[0];
  }
  double mean = sum / n;
  double var = (sum_sq - n * mean * mean) / (n - 1);
  bool ok = std::abs(mean - 1.0) < 0.01 && std::abs(var - 0.0625) < 0.005;
  return check("reparameterized sampler moments", ok);
}

}  // namespace

int run_selfcheck() {
  bool ok = true;
  ok &= check_kl_oracle();
  ok &= check_gradients();
  ok &= check_kernels();
  ok &= check_sampler();
  std::printf("%s\n", ok ? "selfcheck passed" : "selfcheck FAILED");
  return ok ? 0 : 1;
}

}  // namespace bhpeft_cli
