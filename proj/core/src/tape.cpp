#include "bhpeft/tape.hpp"

#include <algorithm>
#include <cmath>

#include "bhpeft/errors.hpp"

namespace bhpeft {

const Tensor& Var::value() const { return tape->value_of(id); }

Var Tape::make(Tensor value, BackFn back) {
  nodes_.push_back(Node{std::move(value), std::move(back)});
  return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::constant(Tensor value) { return make(std::move(value), BackFn{}); }

Var Tape::leaf(const Parameter& p) {
  auto it = leaves_.find(&p);
  if (it != leaves_.end()) return Var{this, it->second};
  Var v = make(p.value, BackFn{});
  leaves_.emplace(&p, v.id);
  return v;
}

void Tape::accumulate(std::uint32_t id, const Tensor& delta) {
  Tensor& g = grads_[id];
  if (g.empty()) {
    g = delta;
    return;
  }
  for (std::size_t i = 0; i < g.numel(); ++i) g[i] += delta[i];
}

void Tape::backward(const Var& loss) {
  if (loss.tape != this) throw input_error("backward: loss belongs to a different tape");
  if (loss.value().numel() != 1) {
    throw input_error("backward requires a scalar loss, got shape " + loss.value().shape_str());
  }
  grads_.assign(nodes_.size(), Tensor{});
  grads_[loss.id] = Tensor::filled(loss.value().shape(), 1.0);
  for (std::uint32_t i = loss.id + 1; i-- > 0;) {
    if (grads_[i].empty() || !nodes_[i].back) continue;
    nodes_[i].back(*this, grads_[i], i);
  }
  ran_backward_ = true;
}

Tensor Tape::grad(const Parameter& p) const {
  auto it = leaves_.find(&p);
  if (it == leaves_.end() || !ran_backward_ || grads_[it->second].empty()) {
    return Tensor::zeros(p.value.shape());
  }
  return grads_[it->second];
}

namespace {

void require_same_tape(Var a, Var b, const char* op) {
  if (a.tape != b.tape) throw input_error(std::string(op) + ": operands from different tapes");
}

}  // namespace

Var add(Var a, Var b) {
  require_same_tape(a, b, "add");
  Tensor out = tadd(a.value(), b.value());
  auto ia = a.id, ib = b.id;
  return a.tape->make(std::move(out), [ia, ib](Tape& t, const Tensor& g, std::uint32_t) {
    t.accumulate(ia, g);
    t.accumulate(ib, g);
  });
}

Var sub(Var a, Var b) {
  require_same_tape(a, b, "sub");
  Tensor out = tsub(a.value(), b.value());
  auto ia = a.id, ib = b.id;
  return a.tape->make(std::move(out), [ia, ib](Tape& t, const Tensor& g, std::uint32_t) {
    t.accumulate(ia, g);
    t.accumulate(ib, tscale(g, -1.0));
  });
}

Var mul(Var a, Var b) {
  require_same_tape(a, b, "mul");
  Tensor out = tmul(a.value(), b.value());
  auto ia = a.id, ib = b.id;
  return a.tape->make(std::move(out), [ia, ib](Tape& t, const Tensor& g, std::uint32_t) {
    t.accumulate(ia, tmul(g, t.value_of(ib)));
    t.accumulate(ib, tmul(g, t.value_of(ia)));
  });
}

Var scale(Var a, double c) {
  Tensor out = tscale(a.value(), c);
  auto ia = a.id;
  return a.tape->make(std::move(out), [ia, c](Tape& t, const Tensor& g, std::uint32_t) {
    t.accumulate(ia, tscale(g, c));
  });
}

Var add_scalar(Var a, double c) {
  Tensor out(a.value().shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] + c;
  auto ia = a.id;
  return a.tape->make(std::move(out), [ia](Tape& t, const Tensor& g, std::uint32_t) {
    t.accumulate(ia, g);
  });
}

Var matmul(Var a, Var b) {
  require_same_tape(a, b, "matmul");
  Tensor out = tmatmul(a.value(), b.value());
  auto ia = a.id, ib = b.id;
  return a.tape->make(std::move(out), [ia, ib](Tape& t, const Tensor& g, std::uint32_t) {
    t.accumulate(ia, tmatmul_nt(g, t.value_of(ib)));
    t.accumulate(ib, tmatmul_tn(t.value_of(ia), g));
  });
}

Var transpose(Var a) {
  Tensor out = ttranspose(a.value());
  auto ia = a.id;
  return a.tape->make(std::move(out), [ia](Tape& t, const Tensor& g, std::uint32_t) {
    t.accumulate(ia, ttranspose(g));
  });
}

Var relu(Var a) {
  Tensor out(a.value().shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] > 0.0 ? a.value()[i] : 0.0;
  auto ia = a.id;
  return a.tape->make(std::move(out), [ia](Tape& t, const Tensor& g, std::uint32_t) {
    const Tensor& x = t.value_of(ia);
    Tensor d(g.shape());
    for (std::size_t i = 0; i < g.numel(); ++i) d[i] = x[i] > 0.0 ? g[i] : 0.0;
    t.accumulate(ia, d);
  });
}

Var tanh(Var a) {
  Tensor out(a.value().shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::tanh(a.value()[i]);
  auto ia = a.id;
  return a.tape->make(std::move(out), [ia](Tape& t, const Tensor& g, std::uint32_t self) {
    const Tensor& y = t.value_of(self);
    Tensor d(g.shape());
    for (std::size_t i = 0; i < g.numel(); ++i) d[i] = g[i] * (1.0 - y[i] * y[i]);
    t.accumulate(ia, d);
  });
}

Var log_floored(Var a, double floor_value) {
  Tensor out(a.value().shape());
  for (std::size_t i = 0; i < out.numel(); ++i) {
    out[i] = std::log(std::max(a.value()[i], floor_value));
  }
  auto ia = a.id;
  return a.tape->make(std::move(out), [ia, floor_value](Tape& t, const Tensor& g, std::uint32_t) {
    const Tensor& x = t.value_of(ia);
    Tensor d(g.shape());
    for (std::size_t i = 0; i < g.numel(); ++i) d[i] = x[i] > floor_value ? g[i] / x[i] : 0.0;
    t.accumulate(ia, d);
  });
}

Var softmax_rows(Var a) {
  const Tensor& x = a.value();
  if (x.rank() != 2) throw shape_error("softmax_rows requires rank 2, got " + x.shape_str());
  const std::size_t n = x.rows(), m = x.cols();
  Tensor out({n, m});
  for (std::size_t i = 0; i < n; ++i) {
    double mx = x.at(i, 0);
    for (std::size_t j = 1; j < m; ++j) mx = std::max(mx, x.at(i, j));
    double sum = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      out.at(i, j) = std::exp(x.at(i, j) - mx);
      sum += out.at(i, j);
    }
    for (std::size_t j = 0; j < m; ++j) out.at(i, j) /= sum;
  }
  auto ia = a.id;
  return a.tape->make(std::move(out), [ia](Tape& t, const Tensor& g, std::uint32_t self) {
    const Tensor& p = t.value_of(self);
    Tensor d(g.shape());
    for (std::size_t i = 0; i < p.rows(); ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < p.cols(); ++j) dot += g.at(i, j) * p.at(i, j);
      for (std::size_t j = 0; j < p.cols(); ++j) d.at(i, j) = p.at(i, j) * (g.at(i, j) - dot);
    }
    t.accumulate(ia, d);
  });
}

Var layer_norm(Var x, const Tensor& gamma, const Tensor& beta, double eps) {
  const Tensor& v = x.value();
  if (v.rank() != 2) throw shape_error("layer_norm requires rank 2, got " + v.shape_str());
  const std::size_t n = v.rows(), d = v.cols();
  if (gamma.numel() != d || beta.numel() != d) {
    throw shape_error("layer_norm gamma/beta length must match " + std::to_string(d));
  }
  // Population variance (divide by d). Saved normalized values and inverse
  // standard deviations feed the backward pass.
  Tensor out({n, d});
  Tensor xhat({n, d});
  Tensor inv({n, 1});
  for (std::size_t i = 0; i < n; ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += v.at(i, j);
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      double c = v.at(i, j) - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    double is = 1.0 / std::sqrt(var + eps);
    inv.at(i, 0) = is;
    for (std::size_t j = 0; j < d; ++j) {
      xhat.at(i, j) = (v.at(i, j) - mean) * is;
      out.at(i, j) = gamma[j] * xhat.at(i, j) + beta[j];
    }
  }
  auto ix = x.id;
  return x.tape->make(std::move(out),
                      [ix, gamma, xhat, inv](Tape& t, const Tensor& g, std::uint32_t) {
    const std::size_t n = g.rows(), d = g.cols();
    Tensor dx({n, d});
    for (std::size_t i = 0; i < n; ++i) {
      double m1 = 0.0, m2 = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        double dh = g.at(i, j) * gamma[j];
        m1 += dh;
        m2 += dh * xhat.at(i, j);
      }
      m1 /= static_cast<double>(d);
      m2 /= static_cast<double>(d);
      for (std::size_t j = 0; j < d; ++j) {
        double dh = g.at(i, j) * gamma[j];
        dx.at(i, j) = inv.at(i, 0) * (dh - m1 - xhat.at(i, j) * m2);
      }
    }
    t.accumulate(ix, dx);
  });
}

Var concat_rows(Var a, Var b) {
  require_same_tape(a, b, "concat_rows");
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.rank() != 2 || y.rank() != 2 || x.cols() != y.cols()) {
    throw shape_error("concat_rows shape mismatch: " + x.shape_str() + " vs " + y.shape_str());
  }
  Tensor out({x.rows() + y.rows(), x.cols()});
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) out.at(i, j) = x.at(i, j);
  for (std::size_t i = 0; i < y.rows(); ++i)
    for (std::size_t j = 0; j < y.cols(); ++j) out.at(x.rows() + i, j) = y.at(i, j);
  auto ia = a.id, ib = b.id;
  std::size_t split = x.rows();
  return a.tape->make(std::move(out), [ia, ib, split](Tape& t, const Tensor& g, std::uint32_t) {
    Tensor da({split, g.cols()});
    Tensor db({g.rows() - split, g.cols()});
    for (std::size_t i = 0; i < split; ++i)
      for (std::size_t j = 0; j < g.cols(); ++j) da.at(i, j) = g.at(i, j);
    for (std::size_t i = split; i < g.rows(); ++i)
      for (std::size_t j = 0; j < g.cols(); ++j) db.at(i - split, j) = g.at(i, j);
    t.accumulate(ia, da);
    t.accumulate(ib, db);
  });
}

Var concat_cols(Var a, Var b) {
  require_same_tape(a, b, "concat_cols");
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.rank() != 2 || y.rank() != 2 || x.rows() != y.rows()) {
    throw shape_error("concat_cols shape mismatch: " + x.shape_str() + " vs " + y.shape_str());
  }
  Tensor out({x.rows(), x.cols() + y.cols()});
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t j = 0; j < x.cols(); ++j) out.at(i, j) = x.at(i, j);
    for (std::size_t j = 0; j < y.cols(); ++j) out.at(i, x.cols() + j) = y.at(i, j);
  }
  auto ia = a.id, ib = b.id;
  std::size_t split = x.cols();
  return a.tape->make(std::move(out), [ia, ib, split](Tape& t, const Tensor& g, std::uint32_t) {
    Tensor da({g.rows(), split});
    Tensor db({g.rows(), g.cols() - split});
    for (std::size_t i = 0; i < g.rows(); ++i) {
      for (std::size_t j = 0; j < split; ++j) da.at(i, j) = g.at(i, j);
      for (std::size_t j = split; j < g.cols(); ++j) db.at(i, j - split) = g.at(i, j);
    }
    t.accumulate(ia, da);
    t.accumulate(ib, db);
  });
}

Var slice_cols(Var a, std::size_t c0, std::size_t c1) {
  const Tensor& x = a.value();
  if (x.rank() != 2) throw shape_error("slice_cols requires rank 2, got " + x.shape_str());
  if (c0 >= c1 || c1 > x.cols()) {
    throw shape_error("slice_cols range [" + std::to_string(c0) + "," + std::to_string(c1) +
                      ") out of bounds for " + x.shape_str());
  }
  Tensor out({x.rows(), c1 - c0});
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = c0; j < c1; ++j) out.at(i, j - c0) = x.at(i, j);
  auto ia = a.id;
  std::size_t cols = x.cols();
  return a.tape->make(std::move(out), [ia, c0, cols](Tape& t, const Tensor& g, std::uint32_t) {
    Tensor d({g.rows(), cols});
    for (std::size_t i = 0; i < g.rows(); ++i)
      for (std::size_t j = 0; j < g.cols(); ++j) d.at(i, c0 + j) = g.at(i, j);
    t.accumulate(ia, d);
  });
}

Var add_row(Var x, Var b) {
  require_same_tape(x, b, "add_row");
  const Tensor& m = x.value();
  const Tensor& r = b.value();
  if (m.rank() != 2 || r.rank() != 1 || r.numel() != m.cols()) {
    throw shape_error("add_row shape mismatch: " + m.shape_str() + " + " + r.shape_str());
  }
  Tensor out({m.rows(), m.cols()});
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) out.at(i, j) = m.at(i, j) + r[j];
  auto ix = x.id, ib = b.id;
  return x.tape->make(std::move(out), [ix, ib](Tape& t, const Tensor& g, std::uint32_t) {
    t.accumulate(ix, g);
    Tensor db({g.cols()});
    for (std::size_t j = 0; j < g.cols(); ++j) {
      double acc = 0.0;
      for (std::size_t i = 0; i < g.rows(); ++i) acc += g.at(i, j);
      db[j] = acc;
    }
    t.accumulate(ib, db);
  });
}

Var mean_rows(Var a) {
  const Tensor& x = a.value();
  if (x.rank() != 2) throw shape_error("mean_rows requires rank 2, got " + x.shape_str());
  const std::size_t n = x.rows(), m = x.cols();
  Tensor out({1, m});
  for (std::size_t j = 0; j < m; ++j) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += x.at(i, j);
    out.at(0, j) = acc / static_cast<double>(n);
  }
  auto ia = a.id;
  return a.tape->make(std::move(out), [ia, n](Tape& t, const Tensor& g, std::uint32_t) {
    Tensor d({n, g.cols()});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < g.cols(); ++j) d.at(i, j) = g.at(0, j) / static_cast<double>(n);
    t.accumulate(ia, d);
  });
}

Var sum_all(Var a) {
  const Tensor& x = a.value();
  double acc = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) acc += x[i];
  auto ia = a.id;
  return a.tape->make(Tensor::scalar(acc), [ia](Tape& t, const Tensor& g, std::uint32_t) {
    t.accumulate(ia, Tensor::filled(t.value_of(ia).shape(), g[0]));
  });
}

Var log_softmax_pick(Var logits, std::size_t index) {
  const Tensor& x = logits.value();
  if (x.rank() != 2 || x.rows() != 1) {
    throw shape_error("log_softmax_pick expects a [1,C] row, got " + x.shape_str());
  }
  if (index >= x.cols()) {
    throw input_error("class index " + std::to_string(index) + " out of range for " +
                      std::to_string(x.cols()) + " classes");
  }
  double mx = x.at(0, 0);
  for (std::size_t j = 1; j < x.cols(); ++j) mx = std::max(mx, x.at(0, j));
  double sum = 0.0;
  for (std::size_t j = 0; j < x.cols(); ++j) sum += std::exp(x.at(0, j) - mx);
  double lse = mx + std::log(sum);
  auto ia = logits.id;
  return logits.tape->make(Tensor::scalar(x.at(0, index) - lse),
                           [ia, index](Tape& t, const Tensor& g, std::uint32_t) {
    const Tensor& x = t.value_of(ia);
    double mx = x.at(0, 0);
    for (std::size_t j = 1; j < x.cols(); ++j) mx = std::max(mx, x.at(0, j));
    double sum = 0.0;
    for (std::size_t j = 0; j < x.cols(); ++j) sum += std::exp(x.at(0, j) - mx);
    Tensor d({1, x.cols()});
    for (std::size_t j = 0; j < x.cols(); ++j) {
      double p = std::exp(x.at(0, j) - mx) / sum;
      d.at(0, j) = g[0] * ((j == index ? 1.0 : 0.0) - p);
    }
    t.accumulate(ia, d);
  });
}

ActKind parse_activation(const std::string& name) {
  if (name == "relu") return ActKind::relu;
  if (name == "tanh") return ActKind::tanh;
  throw config_error("unknown activation '" + name + "' (expected relu or tanh)");
}

Var activation(ActKind kind, Var a) {
  switch (kind) {
    case ActKind::relu:
      return relu(a);
    case ActKind::tanh:
      return tanh(a);
  }
  throw config_error("unknown activation kind");
}

}  // namespace bhpeft
