#pragma once

#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "spe/rng.hpp"
#include "spe/tensor.hpp"

namespace spe {

// A named trainable tensor. Owned by a model, referenced by tapes.
struct Parameter {
  std::string name;
  Tensor value;

  Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)) {}
};

namespace detail {
struct Node {
  Tensor value;
  Tensor grad;  // allocated on first accumulation
  bool requires_grad = false;
  bool has_grad = false;
  Parameter* param = nullptr;

  void accumulate(const Tensor& g);
  Tensor& grad_ref();  // zero-initialized on demand
};
}  // namespace detail

// Lightweight handle to a node in the computation graph.
class Var {
 public:
  Var() = default;

  const Tensor& value() const { return node_->value; }
  const Tensor& grad() const;
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool valid() const { return node_ != nullptr; }

 private:
  friend class Tape;
  explicit Var(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}
  std::shared_ptr<detail::Node> node_;
};

// Gradients keyed by parameter, in tape registration order.
struct GradMap {
  std::vector<std::pair<Parameter*, Tensor>> entries;

  Tensor* find(const Parameter& p);
  const Tensor* find(const Parameter& p) const;
  double global_norm() const;
  void scale(double s);
};

// Define-by-run reverse-mode tape. One forward pass per tape; backward may
// be replayed exactly once.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // --- graph inputs -------------------------------------------------------
  Var param(Parameter& p);     // trainable leaf; gradient is collected
  Var input(Tensor v);         // constant leaf, no gradient
  Var scalar(double v) { return input(Tensor::scalar(v)); }

  // --- elementwise --------------------------------------------------------
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double s);
  Var add_const(Var a, double c);
  Var neg(Var a) { return scale(a, -1.0); }
  Var sigmoid(Var a);
  Var tanh(Var a);
  Var softplus(Var a);
  Var detach(Var a);  // value passes, gradient stops

  // --- matrix -------------------------------------------------------------
  Var matmul(Var a, Var b, bool trans_a = false, bool trans_b = false);
  Var add_row(Var a, Var bias);            // bias broadcast over rows
  Var linear2(Var x, Var wx, Var h, Var wh, Var bias);  // x*wx + h*wh + bias, fused
  // Fused gated memory cell: preactivations [R x 4H] in (input, forget,
  // cell, output) order plus the previous cell state; returns (h, c).
  std::pair<Var, Var> lstm_cell(Var gates, Var c_prev);
  Var slice_cols(Var a, int64_t c0, int64_t c1);
  Var concat_rows(const std::vector<Var>& parts);
  Var gather_rows(Var a, std::vector<int64_t> rows);
  Var concat_vec(const std::vector<Var>& parts);       // rank-1 concat
  Var gather_vec(Var v, std::vector<int64_t> idx);     // rank-1 gather
  Var div_by_col(Var a, Var col);          // a[r, :] / col[r]
  Var log_softmax_rows(Var a);
  Var dropout(Var a, double rate, Rng& rng);

  // --- reductions / indexing ---------------------------------------------
  Var pick(Var a, std::vector<std::pair<int64_t, int64_t>> entries);  // -> [K]
  Var sum(Var a);                                                      // -> scalar
  Var mean(Var a);                                                     // -> scalar
  Var segment_sum(Var v, std::vector<int64_t> seg, int64_t nseg);      // -> [nseg]
  Var logsumexp_segments(Var v, std::vector<int64_t> seg, int64_t nseg);

  // --- backward -----------------------------------------------------------
  // Computes gradients of a scalar loss for every registered parameter.
  // Throws if the loss is not scalar or the tape was already consumed.
  GradMap backward(const Var& loss);

  size_t num_ops() const { return ops_.size(); }

 private:
  using NodePtr = std::shared_ptr<detail::Node>;

  NodePtr make_node(Tensor value, bool requires_grad);
  Var unary(Var a, Tensor value, std::function<void(detail::Node&, detail::Node&)> back);
  Var binary(Var a, Var b, Tensor value,
             std::function<void(detail::Node&, detail::Node&, detail::Node&)> back);

  std::vector<std::function<void()>> ops_;
  std::vector<NodePtr> leaves_;
  bool consumed_ = false;
};

}  // namespace spe
