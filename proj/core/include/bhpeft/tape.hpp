#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "bhpeft/tensor.hpp"

namespace bhpeft {

/// A named trainable array. Identity (the object address) ties gradients and
/// optimizer state to the parameter across steps.
struct Parameter {
  std::string name;
  Tensor value;
};

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  std::uint32_t id = 0;
  const Tensor& value() const;
};

/// Reverse-mode gradient tape. Records every operation applied to its Vars;
/// backward() walks the record once and accumulates gradients for all
/// parameter leaves that participated. One tape per training step; a tape is
/// single-threaded.
class Tape {
 public:
  using BackFn = std::function<void(Tape&, const Tensor& out_grad, std::uint32_t self)>;

  /// Non-differentiable input (frozen weights, data, sampled noise).
  Var constant(Tensor value);

  /// Differentiable leaf. Calling again with the same parameter returns the
  /// same node, so gradients from every use accumulate together.
  Var leaf(const Parameter& p);

  /// Runs reverse accumulation from a scalar loss.
  void backward(const Var& loss);

  /// Accumulated gradient of a leaf after backward(). Parameters that never
  /// participated get a zero tensor of their own shape.
  Tensor grad(const Parameter& p) const;

  std::size_t node_count() const { return nodes_.size(); }

  // --- used by operation implementations ---
  Var make(Tensor value, BackFn back);
  const Tensor& value_of(std::uint32_t id) const { return nodes_[id].value; }
  void accumulate(std::uint32_t id, const Tensor& delta);

 private:
  struct Node {
    Tensor value;
    BackFn back;  // empty for leaves/constants
  };
  // Deque keeps node addresses stable while the tape grows, so value()
  // references stay valid across subsequent recordings.
  std::deque<Node> nodes_;
  std::vector<Tensor> grads_;  // parallel to nodes_, filled by backward()
  std::unordered_map<const Parameter*, std::uint32_t> leaves_;
  bool ran_backward_ = false;
};

// ---- Recorded operations -------------------------------------------------
// All operate elementwise or on rank-2 tensors as noted; shape mismatches
// raise shape_error naming both shapes.

Var add(Var a, Var b);             // same shape
Var sub(Var a, Var b);             // same shape
Var mul(Var a, Var b);             // elementwise, same shape
Var scale(Var a, double c);
Var add_scalar(Var a, double c);
Var matmul(Var a, Var b);          // [m,k] x [k,n]
Var transpose(Var a);              // rank 2
Var relu(Var a);
Var tanh(Var a);
Var log_floored(Var a, double floor_value);  // ln(max(x, floor))
Var softmax_rows(Var a);           // rank 2; max-subtracted, rows sum to 1
Var layer_norm(Var x, const Tensor& gamma, const Tensor& beta, double eps);
Var concat_rows(Var a, Var b);     // [p,m] + [q,m] -> [p+q,m]
Var concat_cols(Var a, Var b);     // [n,p] + [n,q] -> [n,p+q]
Var slice_cols(Var a, std::size_t c0, std::size_t c1);  // columns [c0, c1)
Var add_row(Var x, Var b);         // [n,m] + broadcast rank-1 [m]
Var mean_rows(Var a);              // [n,m] -> [1,m]
Var sum_all(Var a);                // -> scalar [1]
Var log_softmax_pick(Var logits, std::size_t index);  // [1,C] -> scalar

enum class ActKind { relu, tanh };
ActKind parse_activation(const std::string& name);  // config_error on unknown
Var activation(ActKind kind, Var a);

}  // namespace bhpeft
