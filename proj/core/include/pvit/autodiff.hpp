#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <string>
#include <vector>

#include "pvit/tensor.hpp"

namespace pvit {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; only valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }
};

/// Define-by-run reverse-mode tape.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order. backward() walks it once in reverse. A tape and its
/// values belong to one thread.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

  /// Gradient of the last backward() loss with respect to v; zeros when v was unreached.
  Tensor grad(Var v) const;

  /// Seeds d(loss)/d(loss) = 1 and propagates. Throws on a non-scalar loss or a consumed tape.
  void backward(Var loss);
  bool consumed() const noexcept { return consumed_; }
  void reset();

  std::size_t size() const noexcept { return nodes_.size(); }

  /// Label attached to NaN/Inf errors raised while recording, e.g. "block 3".
  void set_scope(std::string scope) { scope_ = std::move(scope); }
  const std::string& scope() const noexcept { return scope_; }

  // Interface used by operation implementations.
  Var record(const char* op, Tensor value, std::initializer_list<Var> inputs, BackwardFn backward);
  Var record(const char* op, Tensor value, const std::vector<Var>& inputs, BackwardFn backward);
  const Tensor& value_of(std::size_t id) const { return nodes_[id].value; }
  const Tensor& grad_of(std::size_t id) const { return nodes_[id].grad; }
  bool needs_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  /// Accumulation buffer for node id, allocated as zeros on first use.
  Tensor& grad_accumulator(std::size_t id);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Var append(const char* op, Tensor value, bool requires_grad, BackwardFn backward);
  void check_owner(Var v) const;

  std::deque<Node> nodes_;  // stable element addresses: outstanding value() references survive appends
  std::string scope_;
  bool consumed_ = false;
};

// Elementwise and broadcasting arithmetic.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var add_scalar(Var a, double offset);
/// x[m×n] + bias[n] broadcast over rows.
Var add_bias(Var x, Var bias);

// Linear algebra.
Var matmul(Var a, Var b);
/// a[m×k] · b[n×k]ᵀ without materializing the transpose.
Var matmul_nt(Var a, Var b);
Var transpose(Var a);

// Nonlinearities.
Var softmax(Var x, std::size_t axis);
Var log_softmax(Var x, std::size_t axis);
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-6);
/// Exact Gaussian-CDF GELU, x·Φ(x).
Var gelu(Var x);
Var relu(Var x);
Var exp(Var x);
Var log(Var x);
/// Square root with derivative taken as 0 at 0.
Var sqrt(Var x);

// Reductions.
Var sum(Var x);
Var mean(Var x);
/// Column means of x[m×n] → [n].
Var mean_rows(Var x);

// Structural.
Var reshape(Var x, Shape shape);
Var slice_rows(Var x, std::size_t start, std::size_t count);
Var slice_cols(Var x, std::size_t start, std::size_t count);
Var concat_rows(const std::vector<Var>& parts);
Var concat_cols(const std::vector<Var>& parts);
/// Row i of x[m×n] as a rank-1 tensor [n].
Var row(Var x, std::size_t i);
/// Stacks equal-length vectors into a [count×n] matrix.
Var stack(const std::vector<Var>& rows);
/// Single element as a scalar.
Var element(Var x, std::size_t index);
/// Flattens and concatenates any inputs into one rank-1 tensor.
Var concat(const std::vector<Var>& parts);

/// Sum of squares, a scalar.
Var squared_norm(Var x);

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

using ScalarFn = std::function<Var(Tape&, Var)>;

/// Central finite differences against backward(). Relative error per element uses
/// max(|analytic|, |numeric|, floor) as the denominator.
GradCheckResult grad_check(const ScalarFn& f, const Tensor& x, double eps = 1e-6, double floor = 1e-12);

}  // namespace pvit
