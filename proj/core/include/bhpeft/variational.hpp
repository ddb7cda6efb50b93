#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "bhpeft/rng.hpp"
#include "bhpeft/tape.hpp"
#include "bhpeft/tensor.hpp"

namespace bhpeft {

/// Elementwise Gaussian prior. Round 1 uses (0, 0.1); later rounds chain in
/// the previous posterior.
struct PriorSpec {
  Tensor mu0;
  Tensor sigma0;  // strictly positive elementwise
};

/// Factorized-Gaussian variational weight matrix. The standard deviation is
/// parameterized as sigma = g^2 elementwise, which keeps it non-negative
/// without constraints on g.
struct GaussianParameter {
  std::string name;
  Parameter mu;  // named "<name>.mu"
  Parameter g;   // named "<name>.g"
  PriorSpec prior;

  const std::vector<std::size_t>& shape() const { return mu.value.shape(); }

  /// sigma = g^2, materialized.
  Tensor sigma() const;
};

/// Draws mu ~ uniform(-sqrt(6/d), sqrt(6/d)) and g ~ uniform(delta/sqrt(2),
/// delta), with the default round-1 prior attached. d is the model hidden
/// dimension. mu is filled first, then g, both row-major.
GaussianParameter init_gaussian_param(const std::string& name, std::vector<std::size_t> shape,
                                      std::size_t d, double delta, double sigma0, Rng& rng);

/// Standard-normal noise of the given shape.
Tensor draw_eps(const std::vector<std::size_t>& shape, Rng& rng);

/// Reparameterized draw W = mu + g^2 (.) eps together with the noise used,
/// so the draw can be replayed exactly.
std::pair<Tensor, Tensor> sample(const GaussianParameter& p, Rng& rng);

/// Replays a draw with fixed noise.
Tensor sample_with_eps(const GaussianParameter& p, const Tensor& eps);

/// Records W = mu + g^2 (.) eps on the tape; gradients reach mu and g with
/// eps held fixed.
Var reparam_node(Tape& tape, const GaussianParameter& p, const Tensor& eps);

/// Closed-form KL(q || prior) for diagonal Gaussians, recorded on the tape:
///   sum_ij [ ln(sigma0/sigma) + (sigma^2 + (mu - mu0)^2) / (2 sigma0^2) - 1/2 ]
/// with sigma = g^2 floored at 1e-12 inside the logarithm.
Var kl_node(Tape& tape, const GaussianParameter& p);

/// Value of the closed-form KL against an explicit prior.
double kl_to_prior(const GaussianParameter& p, const PriorSpec& prior);

/// Deep-copied (mu, g^2) of the current variational state, usable as the
/// next round's prior.
PriorSpec posterior_snapshot(const GaussianParameter& p);

// ---- Noise plumbing for Monte Carlo objectives ----------------------------

/// Keyed noise tensors; keys identify (sample index, parameter).
using EpsSet = std::map<std::string, Tensor>;

/// Supplies reparameterization noise by key. Implementations draw fresh noise
/// or replay a recorded set.
struct EpsSource {
  virtual ~EpsSource() = default;
  virtual Tensor eps(const std::string& key, const std::vector<std::size_t>& shape) = 0;
};

/// Fresh draws from an Rng, optionally recorded for later replay.
class RngEps : public EpsSource {
 public:
  explicit RngEps(Rng& rng, EpsSet* capture = nullptr) : rng_(rng), capture_(capture) {}
  Tensor eps(const std::string& key, const std::vector<std::size_t>& shape) override;

 private:
  Rng& rng_;
  EpsSet* capture_;
};

/// Replays a recorded set; a missing key is a contract violation.
class ReplayEps : public EpsSource {
 public:
  explicit ReplayEps(const EpsSet& set) : set_(set) {}
  Tensor eps(const std::string& key, const std::vector<std::size_t>& shape) override;

 private:
  const EpsSet& set_;
};

}  // namespace bhpeft
