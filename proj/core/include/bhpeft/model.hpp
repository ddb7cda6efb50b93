#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "bhpeft/data.hpp"
#include "bhpeft/tape.hpp"
#include "bhpeft/variational.hpp"

namespace bhpeft {

struct ModelConfig {
  std::size_t d = 32;       // hidden dimension
  std::size_t h = 4;        // attention heads; d % h == 0
  std::size_t layers = 2;   // transformer blocks
  std::size_t n_max = 32;   // maximum sequence length
  std::size_t vocab = 512;
  std::size_t prefix_len = 4;     // l; 0 disables prefix tuning
  std::size_t r_prefix = 8;       // prefix encoder bottleneck
  std::size_t r_adapter = 8;      // adapter bottleneck
  double adapter_scale = 4.0;     // s; 0 disables the adapter branch
  std::size_t d_ff = 0;           // feedforward width; 0 means 4*d
  double ln_eps = 1e-5;
  double delta = 0.1;             // init scale for g
  double sigma0 = 0.1;            // round-1 prior standard deviation
  TaskKind task = TaskKind::classification;
  std::size_t classes = 2;

  std::size_t ff_dim() const { return d_ff ? d_ff : 4 * d; }
  std::size_t head_dim() const { return d / h; }
  std::size_t out_dim() const { return task == TaskKind::classification ? classes : 1; }
  void validate() const;
};

/// Frozen weights of one transformer block.
struct BlockWeights {
  Tensor wq, wk, wv, wo;            // [d,d]; heads are column blocks
  Tensor w1, b1, w2, b2;            // [d,dff],[dff],[dff,d],[d]
  Tensor ln1_gamma, ln1_beta;       // [d]
  Tensor ln2_gamma, ln2_beta;       // [d]
};

struct FrozenBackbone {
  Tensor embedding;   // [vocab,d]
  Tensor positional;  // [n_max,d], parameter-free sinusoids
  std::vector<BlockWeights> blocks;
};

/// Bayesian prefix encoder of one block. The encoder inputs are fixed
/// standard-normal draws made at model creation; only the projections are
/// variational, and they are shared between the key and value paths.
struct PrefixModule {
  Tensor pk_input, pv_input;  // [l,d]
  GaussianParameter wd;       // [d,r_prefix]
  GaussianParameter wu;       // [r_prefix,d]
};

/// Bayesian scaled parallel adapter of one block.
struct AdapterModule {
  GaussianParameter wd;  // [d,r_adapter]
  GaussianParameter wu;  // [r_adapter,d]
};

/// Deterministic task head; trainable, excluded from all KL terms.
struct TaskHead {
  Parameter w;  // [d,out]
  Parameter b;  // [out]
};

/// Captures per-head attention weights for inspection in tests.
struct ForwardProbe {
  std::vector<Tensor> attention;  // one [n, l+n] matrix per (block, head)
};

/// Model weights realized on a tape: frozen constants, the task head leaves,
/// the PEFT weight matrices (sampled or at their means), and the generated
/// prefixes. Built once per tape and shared by every forward pass on it.
struct TapedWeights {
  struct BlockVars {
    Var wq, wk, wv, wo, w1, b1, w2, b2;
  };
  std::vector<BlockVars> blocks;
  Var head_w, head_b;
  std::unordered_map<const GaussianParameter*, Var> peft;
  std::vector<std::optional<std::pair<Var, Var>>> prefix_kv;  // per block
};

// The two PEFT computations, exposed for direct testing.

/// P = tanh(P_input * Wd) * Wu for the key and value encoder inputs.
std::pair<Var, Var> generate_prefixes(Tape& tape, const PrefixModule& pm, Var wd, Var wu);

/// Multi-head attention with optional key/value prefixes; queries always come
/// from the sequence, keys and values are prefix rows followed by sequence
/// rows, scaled by 1/sqrt(d_k) over all l+n keys.
Var prefixed_attention(Tape& tape, Var x_in, const TapedWeights::BlockVars& bw,
                       const ModelConfig& cfg,
                       const std::optional<std::pair<Var, Var>>& prefix_kv,
                       ForwardProbe* probe = nullptr);

/// x_out = LayerNorm(x_rc + FFN(x_rc) + s * relu(x_rc * WdA) * WuA).
/// The adapter branch reads x_rc, in parallel with the feedforward. With
/// s == 0 or no adapter weights the branch is skipped entirely and the result
/// is the unmodified block tail.
Var adapter_block_tail(Tape& tape, Var x_rc, const TapedWeights::BlockVars& bw,
                       const BlockWeights& frozen, const ModelConfig& cfg,
                       const std::optional<std::pair<Var, Var>>& adapter_ws);

class Model {
 public:
  /// Random initialization: frozen backbone, prefix inputs, variational
  /// parameters and head all derive from the seed.
  static Model create(const ModelConfig& cfg, std::uint64_t seed);

  /// Rebuilds a model from checkpoint arrays keyed by canonical names.
  static Model from_arrays(const ModelConfig& cfg, const std::map<std::string, Tensor>& arrays);

  const ModelConfig& config() const { return cfg_; }
  const FrozenBackbone& backbone() const { return backbone_; }
  std::vector<PrefixModule>& prefixes() { return prefixes_; }
  std::vector<AdapterModule>& adapters() { return adapters_; }
  const std::vector<PrefixModule>& prefixes() const { return prefixes_; }
  const std::vector<AdapterModule>& adapters() const { return adapters_; }
  TaskHead& head() { return head_; }
  const TaskHead& head() const { return head_; }

  /// All variational parameters in canonical order.
  std::vector<GaussianParameter*> gaussians();
  std::vector<const GaussianParameter*> gaussians() const;

  /// Everything the optimizer may touch: each Gaussian's mu and g, then the
  /// task head.
  std::vector<Parameter*> trainable();

  /// FNV-1a over the raw bytes of every frozen array; fine-tuning must never
  /// change this.
  std::uint64_t backbone_digest() const;

  // --- weight realization on a tape ---
  /// Differentiable sampled weights: W = mu + g^2 (.) eps with fresh or
  /// replayed noise keyed "<key_prefix><gaussian name>".
  TapedWeights realize_sampled(Tape& tape, EpsSource& eps, const std::string& key_prefix) const;
  /// Every Gaussian at its mean, as constants (evaluation).
  TapedWeights realize_mean(Tape& tape) const;
  /// Non-differentiable sampled weights from an explicit noise set
  /// (prediction-time draws), keys are the gaussian names.
  TapedWeights realize_with_eps(Tape& tape, const EpsSet& eps) const;

  /// Embeds tokens, runs every block, mean-pools over positions and applies
  /// the head. Output is [1, classes] logits or a [1,1] regression value.
  Var forward_on_tape(Tape& tape, const std::vector<int>& tokens, const TapedWeights& tw,
                      ForwardProbe* probe = nullptr) const;

  // --- plain evaluation (scratch tape inside) ---
  Tensor forward_mean(const std::vector<int>& tokens) const;
  Tensor forward_sampled(const std::vector<int>& tokens, Rng& rng) const;
  Tensor forward_sampled_with(const std::vector<int>& tokens, const EpsSet& eps) const;
  /// One standard-normal tensor per Gaussian, drawn in canonical order.
  EpsSet draw_eps_set(Rng& rng) const;

  /// Canonical (name, tensor) list for serialization; order is stable.
  std::vector<std::pair<std::string, const Tensor*>> named_arrays() const;

 private:
  Model() = default;
  ModelConfig cfg_;
  FrozenBackbone backbone_;
  std::vector<PrefixModule> prefixes_;  // empty when prefix_len == 0
  std::vector<AdapterModule> adapters_;
  TaskHead head_;

  TapedWeights realize_common(Tape& tape,
                              std::unordered_map<const GaussianParameter*, Var> peft) const;
  Tensor embed(const std::vector<int>& tokens) const;
};

}  // namespace bhpeft
