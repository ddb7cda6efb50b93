#include "bhpeft/variational.hpp"

#include <cmath>

#include "bhpeft/errors.hpp"

namespace bhpeft {

namespace {
constexpr double kSigmaFloor = 1e-12;
}

Tensor GaussianParameter::sigma() const { return tmul(g.value, g.value); }

GaussianParameter init_gaussian_param(const std::string& name, std::vector<std::size_t> shape,
                                      std::size_t d, double delta, double sigma0, Rng& rng) {
  if (d < 1) throw config_error("init_gaussian_param: hidden dim must be >= 1");
  if (delta <= 0.0) throw config_error("init_gaussian_param: delta must be positive");
  if (sigma0 <= 0.0) throw config_error("init_gaussian_param: sigma0 must be positive");
  GaussianParameter p;
  p.name = name;
  const double mu_bound = std::sqrt(6.0 / static_cast<double>(d));
  Tensor mu(shape);
  for (std::size_t i = 0; i < mu.numel(); ++i) mu[i] = rng.uniform(-mu_bound, mu_bound);
  Tensor g(shape);
  for (std::size_t i = 0; i < g.numel(); ++i) g[i] = rng.uniform(delta / std::sqrt(2.0), delta);
  p.mu = Parameter{name + ".mu", std::move(mu)};
  p.g = Parameter{name + ".g", std::move(g)};
  p.prior = PriorSpec{Tensor::zeros(shape), Tensor::filled(shape, sigma0)};
  return p;
}

Tensor draw_eps(const std::vector<std::size_t>& shape, Rng& rng) {
  Tensor e(shape);
  for (std::size_t i = 0; i < e.numel(); ++i) e[i] = rng.normal();
  return e;
}

std::pair<Tensor, Tensor> sample(const GaussianParameter& p, Rng& rng) {
  Tensor eps = draw_eps(p.shape(), rng);
  return {sample_with_eps(p, eps), std::move(eps)};
}

Tensor sample_with_eps(const GaussianParameter& p, const Tensor& eps) {
  if (!eps.same_shape(p.mu.value)) {
    throw shape_error("sample eps shape " + eps.shape_str() + " does not match parameter " +
                      p.mu.value.shape_str());
  }
  Tensor w(p.shape());
  for (std::size_t i = 0; i < w.numel(); ++i) {
    double s = p.g.value[i] * p.g.value[i];
    w[i] = p.mu.value[i] + s * eps[i];
  }
  return w;
}

Var reparam_node(Tape& tape, const GaussianParameter& p, const Tensor& eps) {
  Var mu = tape.leaf(p.mu);
  Var g = tape.leaf(p.g);
  Var sigma = mul(g, g);
  return add(mu, mul(sigma, tape.constant(eps)));
}

Var kl_node(Tape& tape, const GaussianParameter& p) {
  const PriorSpec& prior = p.prior;
  if (!prior.mu0.same_shape(p.mu.value) || !prior.sigma0.same_shape(p.mu.value)) {
    throw shape_error("prior shape " + prior.mu0.shape_str() + " does not match parameter " +
                      p.mu.value.shape_str());
  }
  Tensor log_sigma0(prior.sigma0.shape());
  Tensor inv_two_var0(prior.sigma0.shape());
  for (std::size_t i = 0; i < prior.sigma0.numel(); ++i) {
    if (prior.sigma0[i] <= 0.0) {
      throw config_error("prior sigma0 must be strictly positive (parameter " + p.name + ")");
    }
    log_sigma0[i] = std::log(prior.sigma0[i]);
    inv_two_var0[i] = 1.0 / (2.0 * prior.sigma0[i] * prior.sigma0[i]);
  }
  Var mu = tape.leaf(p.mu);
  Var g = tape.leaf(p.g);
  Var sigma = mul(g, g);
  Var diff = sub(mu, tape.constant(prior.mu0));
  Var quad = mul(add(mul(sigma, sigma), mul(diff, diff)), tape.constant(inv_two_var0));
  Var logs = sub(tape.constant(log_sigma0), log_floored(sigma, kSigmaFloor));
  return sum_all(add_scalar(add(logs, quad), -0.5));
}

double kl_to_prior(const GaussianParameter& p, const PriorSpec& prior) {
  GaussianParameter q = p;  // shares tensors by value; prior swapped in
  q.prior = prior;
  Tape scratch;
  return kl_node(scratch, q).value()[0];
}

PriorSpec posterior_snapshot(const GaussianParameter& p) {
  return PriorSpec{p.mu.value, p.sigma()};
}

Tensor RngEps::eps(const std::string& key, const std::vector<std::size_t>& shape) {
  Tensor e = draw_eps(shape, rng_);
  if (capture_) (*capture_)[key] = e;
  return e;
}

Tensor ReplayEps::eps(const std::string& key, const std::vector<std::size_t>& shape) {
  auto it = set_.find(key);
  if (it == set_.end()) throw input_error("no recorded noise for key '" + key + "'");
  if (it->second.shape() != shape) {
    throw shape_error("recorded noise for '" + key + "' has shape " + it->second.shape_str() +
                      ", expected " + shape_str(shape));
  }
  return it->second;
}

}  // namespace bhpeft
