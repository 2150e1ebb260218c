#pragma once

#include <deque>
#include <functional>
#include <string>
#include <vector>

#include "pisr/tensor.hpp"

namespace pisr {

class Tape;

// Handle to one node on a tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::int64_t index) : tape_(tape), index_(index) {}

  Tape* tape() const { return tape_; }
  std::int64_t index() const { return index_; }
  bool valid() const { return tape_ != nullptr; }

  const Tensor& value() const;
  const Tensor& grad() const;

 private:
  Tape* tape_ = nullptr;
  std::int64_t index_ = -1;
};

// Reverse-mode tape. Nodes are appended in execution order; backward() walks
// them in reverse, so creation order doubles as the topological order.
// Recording is single-threaded by design.
class Tape {
 public:
  // tape, out_value, out_grad, parents
  using BackwardFn =
      std::function<void(Tape&, const Tensor&, const Tensor&, const std::vector<Var>&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value);       // differentiable input
  Var constant(Tensor value);   // input without gradient

  Var make_node(Tensor value, std::vector<Var> parents, std::string op_name,
                BackwardFn backward);

  const Tensor& value(Var v) const;
  const Tensor& grad(Var v) const;   // throws if backward has not reached v
  bool has_grad(Var v) const;
  Tensor grad_or_zero(Var v) const;
  bool requires_grad(Var v) const;
  const std::string& op_name(Var v) const;

  void accum_grad(Var v, Tensor g);

  // Seeds d(loss)/d(loss) = 1 and propagates to every reachable leaf.
  void backward(Var loss);

  void clear();
  std::int64_t node_count() const { return static_cast<std::int64_t>(nodes_.size()); }

  void set_check_finite(bool on) { check_finite_ = on; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::vector<Var> parents;
    std::string op;
    BackwardFn backward;
  };

  Node& node(Var v);
  const Node& node(Var v) const;

  // deque: node references handed out via value()/grad() stay valid while
  // later ops append nodes.
  std::deque<Node> nodes_;
  bool check_finite_ = false;
};

// ---- differentiable operations -------------------------------------------
// All take node handles on the same tape and append one node.

Var matmul(Var a, Var b);
// Same-padding cross-correlation, square kernel k in {1,3}. x: [Cin x H x W],
// kernel: [Cout x Cin x k x k], bias: optional [Cout].
Var conv2d(Var x, Var kernel);
Var conv2d(Var x, Var kernel, Var bias);
Var softmax(Var x, std::int64_t axis);
Var sigmoid(Var x);
Var relu(Var x);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var concat_rows(const std::vector<Var>& parts);
Var transpose(Var a);
Var sum(Var a);
Var sum_axis(Var a, std::int64_t axis);
Var reshape(Var a, std::vector<std::int64_t> shape);
// y[p, c] = m[p, c] * w[p]; w is [P] or [P x 1].
Var row_scale(Var m, Var w);
// y[p, d] = x[p, d] + b[d]
Var add_row_bias(Var x, Var b);
// y[p, n] = x[p, n] + b[p]
Var add_col_bias(Var x, Var b);
// y[k, n] = x[k, n] * mask[n]; mask is a constant [N] or [1 x N].
Var mask_cols(Var x, const Tensor& mask);

// ---- losses (targets are constants) --------------------------------------

Var mse(Var pred, const Tensor& target);
Var l1(Var pred, const Tensor& target);
// Mean |pred - target| over masked positions; mask is [H x W] or [1 x H x W]
// broadcast across pred's leading channel axis. Denominator is
// max(1, channels * sum(mask)).
Var l1_masked(Var pred, const Tensor& target, const Tensor& mask);
// logits: [N_cls x HW] or [N_cls x H x W]; targets: integer-valued map with
// HW entries. Mean negative log-likelihood over pixels whose target is not
// ignore_label.
Var cross_entropy(Var logits, const Tensor& targets, std::int64_t ignore_label = -1);

}  // namespace pisr
