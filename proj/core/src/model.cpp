#include "bhpeft/model.hpp"

#include <bit>
#include <cmath>

#include "bhpeft/errors.hpp"

namespace bhpeft {

void ModelConfig::validate() const {
  if (d < 1 || h < 1) throw config_error("model dims must be positive");
  if (d % h != 0) throw config_error("hidden dim " + std::to_string(d) +
                                     " not divisible by head count " + std::to_string(h));
  if (layers < 1) throw config_error("need at least one block");
  if (n_max < 1) throw config_error("n_max must be positive");
  if (vocab < 2) throw config_error("vocab must be at least 2");
  if (r_prefix < 1 || r_adapter < 1) throw config_error("bottleneck dims must be >= 1");
  if (adapter_scale < 0.0) throw config_error("adapter scale must be >= 0");
  if (task == TaskKind::classification && classes < 2) {
    throw config_error("classification needs at least 2 classes");
  }
  if (ln_eps <= 0.0) throw config_error("layer-norm eps must be positive");
  if (delta <= 0.0) throw config_error("delta must be positive");
  if (sigma0 <= 0.0) throw config_error("sigma0 must be positive");
}

namespace {

Tensor xavier_uniform(std::size_t rows, std::size_t cols, Rng& rng) {
  double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Tensor t({rows, cols});
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-bound, bound);
  return t;
}

Tensor normal_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
  Tensor t({rows, cols});
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.normal();
  return t;
}

Tensor sinusoidal_table(std::size_t n_max, std::size_t d) {
  Tensor t({n_max, d});
  for (std::size_t pos = 0; pos < n_max; ++pos) {
    for (std::size_t j = 0; j < d; ++j) {
      double exponent = static_cast<double>(2 * (j / 2)) / static_cast<double>(d);
      double angle = static_cast<double>(pos) / std::pow(10000.0, exponent);
      t.at(pos, j) = (j % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return t;
}

void digest_tensor(std::uint64_t& h, const Tensor& t) {
  for (std::size_t i = 0; i < t.numel(); ++i) {
    std::uint64_t bits = std::bit_cast<std::uint64_t>(t[i]);
    for (int b = 0; b < 8; ++b) {
      h ^= (bits >> (8 * b)) & 0xFF;
      h *= 1099511628211ULL;
    }
  }
}

}  // namespace

Model Model::create(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Model m;
  m.cfg_ = cfg;
  Rng root(seed);

  Rng rb = root.child(0);
  m.backbone_.embedding = normal_matrix(cfg.vocab, cfg.d, rb);
  m.backbone_.positional = sinusoidal_table(cfg.n_max, cfg.d);
  for (std::size_t b = 0; b < cfg.layers; ++b) {
    BlockWeights bw;
    bw.wq = xavier_uniform(cfg.d, cfg.d, rb);
    bw.wk = xavier_uniform(cfg.d, cfg.d, rb);
    bw.wv = xavier_uniform(cfg.d, cfg.d, rb);
    bw.wo = xavier_uniform(cfg.d, cfg.d, rb);
    bw.w1 = xavier_uniform(cfg.d, cfg.ff_dim(), rb);
    bw.b1 = Tensor::zeros({cfg.ff_dim()});
    bw.w2 = xavier_uniform(cfg.ff_dim(), cfg.d, rb);
    bw.b2 = Tensor::zeros({cfg.d});
    bw.ln1_gamma = Tensor::filled({cfg.d}, 1.0);
    bw.ln1_beta = Tensor::zeros({cfg.d});
    bw.ln2_gamma = Tensor::filled({cfg.d}, 1.0);
    bw.ln2_beta = Tensor::zeros({cfg.d});
    m.backbone_.blocks.push_back(std::move(bw));
  }

  Rng rp = root.child(1);
  Rng rg = root.child(2);
  for (std::size_t b = 0; b < cfg.layers; ++b) {
    std::string base = "block" + std::to_string(b);
    if (cfg.prefix_len > 0) {
      PrefixModule pm;
      pm.pk_input = normal_matrix(cfg.prefix_len, cfg.d, rp);
      pm.pv_input = normal_matrix(cfg.prefix_len, cfg.d, rp);
      pm.wd = init_gaussian_param(base + ".prefix.down", {cfg.d, cfg.r_prefix}, cfg.d, cfg.delta,
                                  cfg.sigma0, rg);
      pm.wu = init_gaussian_param(base + ".prefix.up", {cfg.r_prefix, cfg.d}, cfg.d, cfg.delta,
                                  cfg.sigma0, rg);
      m.prefixes_.push_back(std::move(pm));
    }
    AdapterModule am;
    am.wd = init_gaussian_param(base + ".adapter.down", {cfg.d, cfg.r_adapter}, cfg.d, cfg.delta,
                                cfg.sigma0, rg);
    am.wu = init_gaussian_param(base + ".adapter.up", {cfg.r_adapter, cfg.d}, cfg.d, cfg.delta,
                                cfg.sigma0, rg);
    m.adapters_.push_back(std::move(am));
  }

  Rng rh = root.child(3);
  m.head_.w = Parameter{"head.w", xavier_uniform(cfg.d, cfg.out_dim(), rh)};
  m.head_.b = Parameter{"head.b", Tensor::zeros({cfg.out_dim()})};
  return m;
}

std::vector<GaussianParameter*> Model::gaussians() {
  std::vector<GaussianParameter*> out;
  for (std::size_t b = 0; b < cfg_.layers; ++b) {
    if (cfg_.prefix_len > 0) {
      out.push_back(&prefixes_[b].wd);
      out.push_back(&prefixes_[b].wu);
    }
    out.push_back(&adapters_[b].wd);
    out.push_back(&adapters_[b].wu);
  }
  return out;
}

std::vector<const GaussianParameter*> Model::gaussians() const {
  std::vector<const GaussianParameter*> out;
  for (auto* g : const_cast<Model*>(this)->gaussians()) out.push_back(g);
  return out;
}

std::vector<Parameter*> Model::trainable() {
  std::vector<Parameter*> out;
  for (GaussianParameter* g : gaussians()) {
    out.push_back(&g->mu);
    out.push_back(&g->g);
  }
  out.push_back(&head_.w);
  out.push_back(&head_.b);
  return out;
}

std::uint64_t Model::backbone_digest() const {
  std::uint64_t h = 14695981039346656037ULL;
  digest_tensor(h, backbone_.embedding);
  digest_tensor(h, backbone_.positional);
  for (const BlockWeights& bw : backbone_.blocks) {
    digest_tensor(h, bw.wq);
    digest_tensor(h, bw.wk);
    digest_tensor(h, bw.wv);
    digest_tensor(h, bw.wo);
    digest_tensor(h, bw.w1);
    digest_tensor(h, bw.b1);
    digest_tensor(h, bw.w2);
    digest_tensor(h, bw.b2);
    digest_tensor(h, bw.ln1_gamma);
    digest_tensor(h, bw.ln1_beta);
    digest_tensor(h, bw.ln2_gamma);
    digest_tensor(h, bw.ln2_beta);
  }
  // The fixed prefix-encoder inputs are frozen too.
  for (const PrefixModule& pm : prefixes_) {
    digest_tensor(h, pm.pk_input);
    digest_tensor(h, pm.pv_input);
  }
  return h;
}

std::pair<Var, Var> generate_prefixes(Tape& tape, const PrefixModule& pm, Var wd, Var wu) {
  Var pk = matmul(tanh(matmul(tape.constant(pm.pk_input), wd)), wu);
  Var pv = matmul(tanh(matmul(tape.constant(pm.pv_input), wd)), wu);
  return {pk, pv};
}

Var prefixed_attention(Tape&, Var x_in, const TapedWeights::BlockVars& bw,
                       const ModelConfig& cfg,
                       const std::optional<std::pair<Var, Var>>& prefix_kv, ForwardProbe* probe) {
  const std::size_t dk = cfg.head_dim();
  Var q = matmul(x_in, bw.wq);
  Var k = matmul(x_in, bw.wk);
  Var v = matmul(x_in, bw.wv);
  Var heads;
  for (std::size_t i = 0; i < cfg.h; ++i) {
    const std::size_t c0 = i * dk, c1 = (i + 1) * dk;
    Var qi = slice_cols(q, c0, c1);
    Var ki = slice_cols(k, c0, c1);
    Var vi = slice_cols(v, c0, c1);
    if (prefix_kv) {
      ki = concat_rows(slice_cols(prefix_kv->first, c0, c1), ki);
      vi = concat_rows(slice_cols(prefix_kv->second, c0, c1), vi);
    }
    Var attn = softmax_rows(scale(matmul(qi, transpose(ki)), 1.0 / std::sqrt(static_cast<double>(dk))));
    if (probe) probe->attention.push_back(attn.value());
    Var head = matmul(attn, vi);
    heads = (i == 0) ? head : concat_cols(heads, head);
  }
  return matmul(heads, bw.wo);
}

Var adapter_block_tail(Tape&, Var x_rc, const TapedWeights::BlockVars& bw,
                       const BlockWeights& frozen, const ModelConfig& cfg,
                       const std::optional<std::pair<Var, Var>>& adapter_ws) {
  Var hidden = relu(add_row(matmul(x_rc, bw.w1), bw.b1));
  Var ffn = add_row(matmul(hidden, bw.w2), bw.b2);
  Var tail = add(x_rc, ffn);
  if (adapter_ws && cfg.adapter_scale != 0.0) {
    Var branch = matmul(relu(matmul(x_rc, adapter_ws->first)), adapter_ws->second);
    tail = add(tail, scale(branch, cfg.adapter_scale));
  }
  return layer_norm(tail, frozen.ln2_gamma, frozen.ln2_beta, cfg.ln_eps);
}

TapedWeights Model::realize_common(Tape& tape,
                                   std::unordered_map<const GaussianParameter*, Var> peft) const {
  TapedWeights tw;
  tw.peft = std::move(peft);
  for (const BlockWeights& bw : backbone_.blocks) {
    TapedWeights::BlockVars bv;
    bv.wq = tape.constant(bw.wq);
    bv.wk = tape.constant(bw.wk);
    bv.wv = tape.constant(bw.wv);
    bv.wo = tape.constant(bw.wo);
    bv.w1 = tape.constant(bw.w1);
    bv.b1 = tape.constant(bw.b1);
    bv.w2 = tape.constant(bw.w2);
    bv.b2 = tape.constant(bw.b2);
    tw.blocks.push_back(bv);
  }
  tw.head_w = tape.leaf(head_.w);
  tw.head_b = tape.leaf(head_.b);
  for (std::size_t b = 0; b < cfg_.layers; ++b) {
    if (cfg_.prefix_len > 0) {
      const PrefixModule& pm = prefixes_[b];
      tw.prefix_kv.push_back(
          generate_prefixes(tape, pm, tw.peft.at(&pm.wd), tw.peft.at(&pm.wu)));
    } else {
      tw.prefix_kv.push_back(std::nullopt);
    }
  }
  return tw;
}

TapedWeights Model::realize_sampled(Tape& tape, EpsSource& eps,
                                    const std::string& key_prefix) const {
  std::unordered_map<const GaussianParameter*, Var> peft;
  for (const GaussianParameter* g : gaussians()) {
    Tensor e = eps.eps(key_prefix + g->name, g->shape());
    peft.emplace(g, reparam_node(tape, *g, e));
  }
  return realize_common(tape, std::move(peft));
}

TapedWeights Model::realize_mean(Tape& tape) const {
  std::unordered_map<const GaussianParameter*, Var> peft;
  for (const GaussianParameter* g : gaussians()) peft.emplace(g, tape.constant(g->mu.value));
  return realize_common(tape, std::move(peft));
}

TapedWeights Model::realize_with_eps(Tape& tape, const EpsSet& eps) const {
  std::unordered_map<const GaussianParameter*, Var> peft;
  for (const GaussianParameter* g : gaussians()) {
    auto it = eps.find(g->name);
    if (it == eps.end()) throw input_error("missing noise for parameter '" + g->name + "'");
    peft.emplace(g, tape.constant(sample_with_eps(*g, it->second)));
  }
  return realize_common(tape, std::move(peft));
}

Tensor Model::embed(const std::vector<int>& tokens) const {
  if (tokens.empty()) throw input_error("empty token sequence");
  if (tokens.size() > cfg_.n_max) {
    throw input_error("sequence length " + std::to_string(tokens.size()) + " exceeds n_max " +
                      std::to_string(cfg_.n_max));
  }
  // Token embeddings are scaled by sqrt(d) before the positional encodings
  // are added, the usual transformer convention.
  const double scale = std::sqrt(static_cast<double>(cfg_.d));
  Tensor x({tokens.size(), cfg_.d});
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    int t = tokens[i];
    if (t < 0 || static_cast<std::size_t>(t) >= cfg_.vocab) {
      throw input_error("token id " + std::to_string(t) + " out of range for vocab " +
                        std::to_string(cfg_.vocab));
    }
    for (std::size_t j = 0; j < cfg_.d; ++j) {
      x.at(i, j) = backbone_.embedding.at(static_cast<std::size_t>(t), j) * scale +
                   backbone_.positional.at(i, j);
    }
  }
  return x;
}

Var Model::forward_on_tape(Tape& tape, const std::vector<int>& tokens, const TapedWeights& tw,
                           ForwardProbe* probe) const {
  Var x = tape.constant(embed(tokens));
  for (std::size_t b = 0; b < cfg_.layers; ++b) {
    const BlockWeights& frozen = backbone_.blocks[b];
    Var x_attn = prefixed_attention(tape, x, tw.blocks[b], cfg_, tw.prefix_kv[b], probe);
    Var x_rc = layer_norm(add(x, x_attn), frozen.ln1_gamma, frozen.ln1_beta, cfg_.ln_eps);
    std::optional<std::pair<Var, Var>> adapter_ws;
    if (cfg_.adapter_scale != 0.0) {
      const AdapterModule& am = adapters_[b];
      adapter_ws = std::make_pair(tw.peft.at(&am.wd), tw.peft.at(&am.wu));
    }
    x = adapter_block_tail(tape, x_rc, tw.blocks[b], frozen, cfg_, adapter_ws);
  }
  Var pooled = mean_rows(x);
  return add_row(matmul(pooled, tw.head_w), tw.head_b);
}

Tensor Model::forward_mean(const std::vector<int>& tokens) const {
  Tape tape;
  TapedWeights tw = realize_mean(tape);
  return forward_on_tape(tape, tokens, tw).value();
}

Tensor Model::forward_sampled(const std::vector<int>& tokens, Rng& rng) const {
  return forward_sampled_with(tokens, draw_eps_set(rng));
}

Tensor Model::forward_sampled_with(const std::vector<int>& tokens, const EpsSet& eps) const {
  Tape tape;
  TapedWeights tw = realize_with_eps(tape, eps);
  return forward_on_tape(tape, tokens, tw).value();
}

EpsSet Model::draw_eps_set(Rng& rng) const {
  EpsSet set;
  for (const GaussianParameter* g : gaussians()) set[g->name] = draw_eps(g->shape(), rng);
  return set;
}

std::vector<std::pair<std::string, const Tensor*>> Model::named_arrays() const {
  std::vector<std::pair<std::string, const Tensor*>> out;
  out.emplace_back("backbone.embedding", &backbone_.embedding);
  out.emplace_back("backbone.positional", &backbone_.positional);
  for (std::size_t b = 0; b < cfg_.layers; ++b) {
    std::string base = "backbone.block" + std::to_string(b) + ".";
    const BlockWeights& bw = backbone_.blocks[b];
    out.emplace_back(base + "wq", &bw.wq);
    out.emplace_back(base + "wk", &bw.wk);
    out.emplace_back(base + "wv", &bw.wv);
    out.emplace_back(base + "wo", &bw.wo);
    out.emplace_back(base + "w1", &bw.w1);
    out.emplace_back(base + "b1", &bw.b1);
    out.emplace_back(base + "w2", &bw.w2);
    out.emplace_back(base + "b2", &bw.b2);
    out.emplace_back(base + "ln1_gamma", &bw.ln1_gamma);
    out.emplace_back(base + "ln1_beta", &bw.ln1_beta);
    out.emplace_back(base + "ln2_gamma", &bw.ln2_gamma);
    out.emplace_back(base + "ln2_beta", &bw.ln2_beta);
  }
  auto add_gaussian = [&out](const GaussianParameter& g) {
    out.emplace_back(g.name + ".mu", &g.mu.value);
    out.emplace_back(g.name + ".g", &g.g.value);
    out.emplace_back(g.name + ".prior.mu0", &g.prior.mu0);
    out.emplace_back(g.name + ".prior.sigma0", &g.prior.sigma0);
  };
  for (std::size_t b = 0; b < cfg_.layers; ++b) {
    std::string base = "block" + std::to_string(b) + ".";
    if (cfg_.prefix_len > 0) {
      const PrefixModule& pm = prefixes_[b];
      out.emplace_back(base + "prefix.pk_input", &pm.pk_input);
      out.emplace_back(base + "prefix.pv_input", &pm.pv_input);
      add_gaussian(pm.wd);
      add_gaussian(pm.wu);
    }
    add_gaussian(adapters_[b].wd);
    add_gaussian(adapters_[b].wu);
  }
  out.emplace_back("head.w", &head_.w.value);
  out.emplace_back("head.b", &head_.b.value);
  return out;
}

Model Model::from_arrays(const ModelConfig& cfg, const std::map<std::string, Tensor>& arrays) {
  // Build the structure with a throwaway seed, then overwrite every array.
  Model m = Model::create(cfg, 0);
  auto slots = m.named_arrays();
  for (auto& [name, tensor_ptr] : slots) {
    auto it = arrays.find(name);
    if (it == arrays.end()) throw io_error("checkpoint missing array '" + name + "'");
    if (it->second.shape() != tensor_ptr->shape()) {
      throw io_error("checkpoint array '" + name + "' has shape " + it->second.shape_str() +
                     ", expected " + tensor_ptr->shape_str());
    }
    *const_cast<Tensor*>(tensor_ptr) = it->second;
  }
  if (arrays.size() != slots.size()) {
    throw io_error("checkpoint holds " + std::to_string(arrays.size()) + " arrays, expected " +
                   std::to_string(slots.size()));
  }
  return m;
}

}  // namespace bhpeft
