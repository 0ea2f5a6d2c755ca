#pragma once

// Reverse-mode automatic differentiation over dense tensors.
//
// A Tape records every op of one forward evaluation in execution order,
// which is already a topological order; backward() walks it in reverse and
// visits each node once. Vars are cheap handles (tape pointer + node index).
// Parameters live outside the tape in a ParamRegistry and are bound into a
// tape as leaves; backward() accumulates their gradients into Parameter::grad.

#include <cstdint>
#include <functional>
#include <deque>
#include <string>
#include <vector>

#include "meses/params.hpp"
#include "meses/tensor.hpp"

namespace meses::ag {

class Tape;

struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t dim(std::size_t i) const { return value().dim(i); }
  std::size_t size() const { return value().size(); }
  double item() const;
};

using Mask = std::vector<std::uint8_t>;

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  /// Binds a parameter as a leaf. Repeated binds of the same parameter
  /// return the same node.
  Var param(Parameter& p);

  /// Records a computed node. `fn` runs during backward only when some
  /// input requires grad, which the caller signals through `requires_grad`.
  Var record(Tensor value, bool requires_grad, BackwardFn fn);

  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
  bool grad_enabled() const { return grad_enabled_; }

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  /// Gradient buffer of a node, allocated as zeros on first access.
  Tensor& grad(std::size_t id);
  bool has_grad(std::size_t id) const { return !nodes_[id].grad.storage().empty(); }

  /// Seeds d loss / d loss = 1 and propagates to every parameter leaf.
  /// Throws ShapeError if the loss is not a scalar.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

  /// When enabled, relu() appends its pre-activations here. Used by the
  /// finite-difference oracle to detect kink crossings.
  void enable_relu_log(bool on) { log_relu_ = on; }
  bool relu_log_enabled() const { return log_relu_; }
  std::vector<double>& relu_log() { return relu_log_; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    Parameter* param = nullptr;
    BackwardFn backward;
  };
  std::deque<Node> nodes_;
  std::vector<std::pair<Parameter*, std::size_t>> bound_;
  bool grad_enabled_;
  bool log_relu_ = false;
  std::vector<double> relu_log_;
};

// ---- core ops -------------------------------------------------------------
// Shapes follow the row-major convention: "rows" means every leading axis
// flattened, "cols" the last axis.

Var matmul(Var a, Var b);                       // (n,k) x (k,m)
Var matmul_nt(Var a, Var b);                    // (n,k) x (m,k)^T
Var add(Var a, Var b);                          // same shape
Var sub(Var a, Var b);
Var mul(Var a, Var b);                          // elementwise
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var add_bias(Var x, Var b);                     // x (..., m) + b (m)
Var mul_col(Var x, Var c);                      // x (n, m) * c (n) per row
Var linear(Var x, Var w, Var b);                // x (n,in) W (in,out) + b
Var relu(Var x);
Var sin(Var x);
Var exp(Var x);
Var log(Var x);
Var softplus(Var x);
Var sigmoid(Var x);
Var square(Var x);
Var sqrt(Var x);
/// max(x, lo) elementwise; zero gradient where clamped.
Var clamp_min(Var x, double lo);

/// Softmax over the last axis. mask (optional) has one entry per element;
/// non-zero entries get probability exactly 0. Throws if a row is fully masked.
Var softmax(Var x, const Mask* mask = nullptr);
Var log_softmax(Var x, const Mask* mask = nullptr);
/// log sum exp over the last axis -> leading shape.
Var logsumexp(Var x);
/// LayerNorm over the last axis with affine gamma, beta (width of last axis).
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
/// Rows (last axis) scaled to unit l2 norm.
Var l2_normalize(Var x, double eps = 1e-12);

Var reshape(Var x, Shape s);
Var transpose(Var x);                           // 2-D
Var permute(Var x, const std::vector<std::size_t>& axes);
Var slice(Var x, std::size_t axis, std::size_t start, std::size_t len);
Var concat(const std::vector<Var>& xs, std::size_t axis);

/// Rows of x (viewed as (n, cols)) selected by idx -> (idx.size(), cols).
Var gather_rows(Var x, const std::vector<std::size_t>& idx);
/// Places row i of x at output row idx[i] of an (n_out, cols) zero tensor.
Var scatter_rows(Var x, const std::vector<std::size_t>& idx, std::size_t n_out);
/// Picks x[i, idx[i]] from an (n, m) tensor -> (n).
Var pick(Var x, const std::vector<std::size_t>& idx);

Var sum(Var x);
Var mean(Var x);
/// Sum over the last axis -> leading shape.
Var sum_cols(Var x);
/// sum_i w_i x_i for constant weights.
Var weighted_sum(Var x, const std::vector<double>& w);

/// Multi-head scaled dot-product attention. q: (groups*nq, H*dh),
/// k, v: (groups*nk, H*dh), key_masked: groups*nk entries or empty.
Var attention(Var q, Var k, Var v, std::size_t groups, std::size_t nq, std::size_t nk, std::size_t heads,
              const Mask& key_masked);

}  // namespace meses::ag
