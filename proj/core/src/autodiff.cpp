#include "pvit/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "kernels.hpp"

namespace pvit {

const Tensor& Var::value() const {
  if (!tape) throw std::logic_error("Var is not bound to a tape");
  return tape->value(*this);
}

// ---------------------------------------------------------------------------
// Tape

Var Tape::leaf(Tensor value, bool requires_grad) { return append("leaf", std::move(value), requires_grad, {}); }

Var Tape::append(const char* op, Tensor value, bool requires_grad, BackwardFn backward) {
  if (consumed_) throw std::logic_error("tape already consumed by backward(); call reset()");
  if (!value.all_finite()) {
    std::string where = scope_.empty() ? std::string() : " in " + scope_;
    throw NonFiniteError(std::string("non-finite value produced by ") + op + where);
  }
  Node node;
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  if (requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

void Tape::check_owner(Var v) const {
  if (v.tape != this) throw std::logic_error("Var belongs to a different tape");
  if (v.id >= nodes_.size()) throw std::logic_error("Var id out of range");
}

Var Tape::record(const char* op, Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
  bool any = false;
  for (Var v : inputs) {
    check_owner(v);
    any = any || nodes_[v.id].requires_grad;
  }
  return append(op, std::move(value), any, std::move(backward));
}

Var Tape::record(const char* op, Tensor value, const std::vector<Var>& inputs, BackwardFn backward) {
  bool any = false;
  for (Var v : inputs) {
    check_owner(v);
    any = any || nodes_[v.id].requires_grad;
  }
  return append(op, std::move(value), any, std::move(backward));
}

Tensor& Tape::grad_accumulator(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.size() != n.value.size()) n.grad = Tensor(n.value.shape(), 0.0);
  return n.grad;
}

Tensor Tape::grad(Var v) const {
  check_owner(v);
  const Node& n = nodes_[v.id];
  if (n.grad.size() != n.value.size()) return Tensor(n.value.shape(), 0.0);
  return n.grad;
}

void Tape::backward(Var loss) {
  check_owner(loss);
  if (consumed_) throw std::logic_error("backward() called twice without reset()");
  if (nodes_[loss.id].value.size() != 1) {
    throw DimensionError("backward() requires a scalar loss, got shape " +
                         shape_string(nodes_[loss.id].value.shape()));
  }
  consumed_ = true;
  if (!nodes_[loss.id].requires_grad) return;
  grad_accumulator(loss.id)[0] = 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.backward && n.grad.size() == n.value.size()) n.backward(*this, i);
  }
}

void Tape::reset() {
  nodes_.clear();
  consumed_ = false;
}

// ---------------------------------------------------------------------------
// Helpers

namespace {

Tape& tape_of(Var a) {
  if (!a.tape) throw std::logic_error("Var is not bound to a tape");
  return *a.tape;
}

void require_same_shape(const char* op, Var a, Var b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

void require_rank(const char* op, Var a, std::size_t rank) {
  if (a.value().rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_string(a.shape()));
  }
}

// Accumulates g·k into input id when it wants gradients.
void accumulate_scaled(Tape& t, std::size_t id, const Tensor& g, double k) {
  if (!t.needs_grad(id)) return;
  auto& acc = t.grad_accumulator(id);
  for (std::size_t i = 0; i < g.size(); ++i) acc[i] += k * g[i];
}

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise

Var add(Var a, Var b) {
  require_same_shape("add", a, b);
  Tensor out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  const std::size_t ia = a.id, ib = b.id;
  return tape_of(a).record("add", std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t o) {
    accumulate_scaled(t, ia, t.grad_of(o), 1.0);
    accumulate_scaled(t, ib, t.grad_of(o), 1.0);
  });
}

Var sub(Var a, Var b) {
  require_same_shape("sub", a, b);
  Tensor out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  const std::size_t ia = a.id, ib = b.id;
  return tape_of(a).record("sub", std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t o) {
    accumulate_scaled(t, ia, t.grad_of(o), 1.0);
    accumulate_scaled(t, ib, t.grad_of(o), -1.0);
  });
}

Var mul(Var a, Var b) {
  require_same_shape("mul", a, b);
  Tensor out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  const std::size_t ia = a.id, ib = b.id;
  return tape_of(a).record("mul", std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t o) {
    const auto& g = t.grad_of(o);
    const auto& av = t.value_of(ia);
    const auto& bv = t.value_of(ib);
    if (t.needs_grad(ia)) {
      auto& acc = t.grad_accumulator(ia);
      for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i] * bv[i];
    }
    if (t.needs_grad(ib)) {
      auto& acc = t.grad_accumulator(ib);
      for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i] * av[i];
    }
  });
}

Var scale(Var a, double factor) {
  Tensor out = a.value();
  for (double& v : out.storage()) v *= factor;
  const std::size_t ia = a.id;
  return tape_of(a).record("scale", std::move(out), {a}, [ia, factor](Tape& t, std::size_t o) {
    accumulate_scaled(t, ia, t.grad_of(o), factor);
  });
}

Var add_scalar(Var a, double offset) {
  Tensor out = a.value();
  for (double& v : out.storage()) v += offset;
  const std::size_t ia = a.id;
  return tape_of(a).record("add_scalar", std::move(out), {a}, [ia](Tape& t, std::size_t o) {
    accumulate_scaled(t, ia, t.grad_of(o), 1.0);
  });
}

Var add_bias(Var x, Var bias) {
  require_rank("add_bias", x, 2);
  require_rank("add_bias", bias, 1);
  const std::size_t m = x.value().rows(), n = x.value().cols();
  if (bias.size() != n) {
    throw DimensionError("add_bias: bias " + shape_string(bias.shape()) + " vs input " + shape_string(x.shape()));
  }
  Tensor out = x.value();
  const auto& bv = bias.value();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bv[j];
  const std::size_t ix = x.id, ib = bias.id;
  return tape_of(x).record("add_bias", std::move(out), {x, bias}, [ix, ib, m, n](Tape& t, std::size_t o) {
    const auto& g = t.grad_of(o);
    accumulate_scaled(t, ix, g, 1.0);
    if (t.needs_grad(ib)) {
      auto& acc = t.grad_accumulator(ib);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) acc[j] += g[i * n + j];
    }
  });
}

// ---------------------------------------------------------------------------
// Linear algebra

Var matmul(Var a, Var b) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  const std::size_t m = a.value().rows(), k = a.value().cols(), n = b.value().cols();
  if (b.value().rows() != k) {
    throw DimensionError("matmul: inner dimensions disagree " + shape_string(a.shape()) + " · " +
                         shape_string(b.shape()));
  }
  Tensor out(Shape{m, n}, 0.0);
  kernels::gemm_nn(m, k, n, a.value().data().data(), b.value().data().data(), out.data().data());
  const std::size_t ia = a.id, ib = b.id;
  return tape_of(a).record("matmul", std::move(out), {a, b}, [ia, ib, m, k, n](Tape& t, std::size_t o) {
    const double* g = t.grad_of(o).data().data();
    if (t.needs_grad(ia)) {  // dA = dC · Bᵀ
      kernels::gemm_nt(m, n, k, g, t.value_of(ib).data().data(), t.grad_accumulator(ia).data().data());
    }
    if (t.needs_grad(ib)) {  // dB = Aᵀ · dC
      kernels::gemm_tn(m, k, n, t.value_of(ia).data().data(), g, t.grad_accumulator(ib).data().data());
    }
  });
}

Var matmul_nt(Var a, Var b) {
  require_rank("matmul_nt", a, 2);
  require_rank("matmul_nt", b, 2);
  const std::size_t m = a.value().rows(), k = a.value().cols(), n = b.value().rows();
  if (b.value().cols() != k) {
    throw DimensionError("matmul_nt: inner dimensions disagree " + shape_string(a.shape()) + " · " +
                         shape_string(b.shape()) + "ᵀ");
  }
  Tensor out(Shape{m, n}, 0.0);
  kernels::gemm_nt(m, k, n, a.value().data().data(), b.value().data().data(), out.data().data());
  const std::size_t ia = a.id, ib = b.id;
  return tape_of(a).record("matmul_nt", std::move(out), {a, b}, [ia, ib, m, k, n](Tape& t, std::size_t o) {
    const double* g = t.grad_of(o).data().data();
    if (t.needs_grad(ia)) {  // dA = dC · B
      kernels::gemm_nn(m, n, k, g, t.value_of(ib).data().data(), t.grad_accumulator(ia).data().data());
    }
    if (t.needs_grad(ib)) {  // dB = dCᵀ · A
      kernels::gemm_tn(m, n, k, g, t.value_of(ia).data().data(), t.grad_accumulator(ib).data().data());
    }
  });
}

Var transpose(Var a) {
  require_rank("transpose", a, 2);
  const std::size_t m = a.value().rows(), n = a.value().cols();
  Tensor out(Shape{n, m});
  const auto& av = a.value();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = av[i * n + j];
  const std::size_t ia = a.id;
  return tape_of(a).record("transpose", std::move(out), {a}, [ia, m, n](Tape& t, std::size_t o) {
    if (!t.needs_grad(ia)) return;
    const auto& g = t.grad_of(o);
    auto& acc = t.grad_accumulator(ia);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) acc[i * n + j] += g[j * m + i];
  });
}

// ---------------------------------------------------------------------------
// Nonlinearities

namespace {

struct AxisLayout {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisLayout axis_layout(const Shape& shape, std::size_t axis, const char* op) {
  if (axis >= shape.size()) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) + " invalid for " + shape_string(shape));
  }
  AxisLayout l;
  for (std::size_t i = 0; i < axis; ++i) l.outer *= shape[i];
  l.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) l.inner *= shape[i];
  return l;
}

}  // namespace

Var softmax(Var x, std::size_t axis) {
  const AxisLayout l = axis_layout(x.shape(), axis, "softmax");
  Tensor out = x.value();
  for (std::size_t o = 0; o < l.outer; ++o) {
    for (std::size_t in = 0; in < l.inner; ++in) {
      double* base = out.data().data() + o * l.extent * l.inner + in;
      double mx = base[0];
      for (std::size_t e = 1; e < l.extent; ++e) mx = std::max(mx, base[e * l.inner]);
      double total = 0.0;
      for (std::size_t e = 0; e < l.extent; ++e) {
        base[e * l.inner] = std::exp(base[e * l.inner] - mx);
        total += base[e * l.inner];
      }
      for (std::size_t e = 0; e < l.extent; ++e) base[e * l.inner] /= total;
    }
  }
  const std::size_t ix = x.id;
  return tape_of(x).record("softmax", std::move(out), {x}, [ix, l](Tape& t, std::size_t o) {
    if (!t.needs_grad(ix)) return;
    const auto& g = t.grad_of(o);
    const auto& y = t.value_of(o);
    auto& acc = t.grad_accumulator(ix);
    for (std::size_t a = 0; a < l.outer; ++a) {
      for (std::size_t in = 0; in < l.inner; ++in) {
        const std::size_t base = a * l.extent * l.inner + in;
        double dot = 0.0;
        for (std::size_t e = 0; e < l.extent; ++e) dot += g[base + e * l.inner] * y[base + e * l.inner];
        for (std::size_t e = 0; e < l.extent; ++e) {
          const std::size_t i = base + e * l.inner;
          acc[i] += y[i] * (g[i] - dot);
        }
      }
    }
  });
}

Var log_softmax(Var x, std::size_t axis) {
  const AxisLayout l = axis_layout(x.shape(), axis, "log_softmax");
  Tensor out = x.value();
  for (std::size_t o = 0; o < l.outer; ++o) {
    for (std::size_t in = 0; in < l.inner; ++in) {
      double* base = out.data().data() + o * l.extent * l.inner + in;
      double mx = base[0];
      for (std::size_t e = 1; e < l.extent; ++e) mx = std::max(mx, base[e * l.inner]);
      double total = 0.0;
      for (std::size_t e = 0; e < l.extent; ++e) total += std::exp(base[e * l.inner] - mx);
      const double lse = mx + std::log(total);
      for (std::size_t e = 0; e < l.extent; ++e) base[e * l.inner] -= lse;
    }
  }
  const std::size_t ix = x.id;
  return tape_of(x).record("log_softmax", std::move(out), {x}, [ix, l](Tape& t, std::size_t o) {
    if (!t.needs_grad(ix)) return;
    const auto& g = t.grad_of(o);
    const auto& y = t.value_of(o);
    auto& acc = t.grad_accumulator(ix);
    for (std::size_t a = 0; a < l.outer; ++a) {
      for (std::size_t in = 0; in < l.inner; ++in) {
        const std::size_t base = a * l.extent * l.inner + in;
        double gsum = 0.0;
        for (std::size_t e = 0; e < l.extent; ++e) gsum += g[base + e * l.inner];
        for (std::size_t e = 0; e < l.extent; ++e) {
          const std::size_t i = base + e * l.inner;
          acc[i] += g[i] - std::exp(y[i]) * gsum;
        }
      }
    }
  });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("layer_norm: eps must be positive");
  const auto& xv = x.value();
  if (xv.rank() == 0) throw DimensionError("layer_norm: scalar input");
  const std::size_t d = xv.shape().back();
  if (gamma.shape() != Shape{d} || beta.shape() != Shape{d}) {
    throw DimensionError("layer_norm: gamma/beta must be [" + std::to_string(d) + "], got " +
                         shape_string(gamma.shape()) + " / " + shape_string(beta.shape()));
  }
  const std::size_t rows = xv.size() / d;
  Tensor out(xv.shape());
  std::vector<double> xhat(xv.size());
  std::vector<double> inv_std(rows);
  const auto& gv = gamma.value();
  const auto& bv = beta.value();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv.data().data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (xr[j] - mu) * is;
      xhat[r * d + j] = h;
      out[r * d + j] = h * gv[j] + bv[j];
    }
  }
  const std::size_t ix = x.id, ig = gamma.id, ib = beta.id;
  return tape_of(x).record(
      "layer_norm", std::move(out), {x, gamma, beta},
      [ix, ig, ib, d, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t, std::size_t o) {
        const auto& g = t.grad_of(o);
        const auto& gv = t.value_of(ig);
        if (t.needs_grad(ig)) {
          auto& acc = t.grad_accumulator(ig);
          for (std::size_t i = 0; i < rows * d; ++i) acc[i % d] += g[i] * xhat[i];
        }
        if (t.needs_grad(ib)) {
          auto& acc = t.grad_accumulator(ib);
          for (std::size_t i = 0; i < rows * d; ++i) acc[i % d] += g[i];
        }
        if (t.needs_grad(ix)) {
          auto& acc = t.grad_accumulator(ix);
          const double inv_d = 1.0 / static_cast<double>(d);
          for (std::size_t r = 0; r < rows; ++r) {
            double mean_dh = 0.0, mean_dh_h = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              const double dh = g[r * d + j] * gv[j];
              mean_dh += dh;
              mean_dh_h += dh * xhat[r * d + j];
            }
            mean_dh *= inv_d;
            mean_dh_h *= inv_d;
            for (std::size_t j = 0; j < d; ++j) {
              const std::size_t i = r * d + j;
              const double dh = g[i] * gv[j];
              acc[i] += inv_std[r] * (dh - mean_dh - xhat[i] * mean_dh_h);
            }
          }
        }
      });
}

Var gelu(Var x) {
  Tensor out = x.value();
  for (double& v : out.storage()) v = 0.5 * v * std::erfc(-v / std::numbers::sqrt2);
  const std::size_t ix = x.id;
  return tape_of(x).record("gelu", std::move(out), {x}, [ix](Tape& t, std::size_t o) {
    if (!t.needs_grad(ix)) return;
    const auto& g = t.grad_of(o);
    const auto& xv = t.value_of(ix);
    auto& acc = t.grad_accumulator(ix);
    constexpr double inv_sqrt_2pi = 0.3989422804014327;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = xv[i];
      const double cdf = 0.5 * std::erfc(-v / std::numbers::sqrt2);
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
      acc[i] += g[i] * (cdf + v * pdf);
    }
  });
}

Var relu(Var x) {
  Tensor out = x.value();
  for (double& v : out.storage()) v = v > 0.0 ? v : 0.0;
  const std::size_t ix = x.id;
  return tape_of(x).record("relu", std::move(out), {x}, [ix](Tape& t, std::size_t o) {
    if (!t.needs_grad(ix)) return;
    const auto& g = t.grad_of(o);
    const auto& xv = t.value_of(ix);
    auto& acc = t.grad_accumulator(ix);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (xv[i] > 0.0) acc[i] += g[i];
  });
}

Var exp(Var x) {
  Tensor out = x.value();
  for (double& v : out.storage()) v = std::exp(v);
  const std::size_t ix = x.id;
  return tape_of(x).record("exp", std::move(out), {x}, [ix](Tape& t, std::size_t o) {
    if (!t.needs_grad(ix)) return;
    const auto& g = t.grad_of(o);
    const auto& y = t.value_of(o);
    auto& acc = t.grad_accumulator(ix);
    for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i] * y[i];
  });
}

Var log(Var x) {
  Tensor out = x.value();
  for (double& v : out.storage()) v = std::log(v);
  const std::size_t ix = x.id;
  return tape_of(x).record("log", std::move(out), {x}, [ix](Tape& t, std::size_t o) {
    if (!t.needs_grad(ix)) return;
    const auto& g = t.grad_of(o);
    const auto& xv = t.value_of(ix);
    auto& acc = t.grad_accumulator(ix);
    for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i] / xv[i];
  });
}

Var sqrt(Var x) {
  Tensor out = x.value();
  for (double& v : out.storage()) v = std::sqrt(v);
  const std::size_t ix = x.id;
  return tape_of(x).record("sqrt", std::move(out), {x}, [ix](Tape& t, std::size_t o) {
    if (!t.needs_grad(ix)) return;
    const auto& g = t.grad_of(o);
    const auto& y = t.value_of(o);
    auto& acc = t.grad_accumulator(ix);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (y[i] > 0.0) acc[i] += g[i] * 0.5 / y[i];
  });
}

// ---------------------------------------------------------------------------
// Reductions

Var sum(Var x) {
  double total = 0.0;
  for (double v : x.value().data()) total += v;
  const std::size_t ix = x.id;
  return tape_of(x).record("sum", Tensor::scalar(total), {x}, [ix](Tape& t, std::size_t o) {
    if (!t.needs_grad(ix)) return;
    const double g = t.grad_of(o)[0];
    for (double& a : t.grad_accumulator(ix).storage()) a += g;
  });
}

Var mean(Var x) {
  const double n = static_cast<double>(x.size());
  if (x.size() == 0) throw DimensionError("mean of empty tensor");
  return scale(sum(x), 1.0 / n);
}

Var mean_rows(Var x) {
  require_rank("mean_rows", x, 2);
  const std::size_t m = x.value().rows(), n = x.value().cols();
  if (m == 0) throw DimensionError("mean_rows of empty matrix");
  Tensor out(Shape{n}, 0.0);
  const auto& xv = x.value();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j] += xv[i * n + j];
  for (double& v : out.storage()) v /= static_cast<double>(m);
  const std::size_t ix = x.id;
  return tape_of(x).record("mean_rows", std::move(out), {x}, [ix, m, n](Tape& t, std::size_t o) {
    if (!t.needs_grad(ix)) return;
    const auto& g = t.grad_of(o);
    auto& acc = t.grad_accumulator(ix);
    const double inv = 1.0 / static_cast<double>(m);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) acc[i * n + j] += g[j] * inv;
  });
}

Var squared_norm(Var x) { return sum(mul(x, x)); }

// ---------------------------------------------------------------------------
// Structural

Var reshape(Var x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  const std::size_t ix = x.id;
  return tape_of(x).record("reshape", std::move(out), {x}, [ix](Tape& t, std::size_t o) {
    accumulate_scaled(t, ix, t.grad_of(o), 1.0);
  });
}

Var slice_rows(Var x, std::size_t start, std::size_t count) {
  require_rank("slice_rows", x, 2);
  const std::size_t m = x.value().rows(), n = x.value().cols();
  if (start + count > m) throw DimensionError("slice_rows: range exceeds " + shape_string(x.shape()));
  const auto& xv = x.value();
  Tensor out(Shape{count, n},
             std::vector<double>(xv.data().begin() + static_cast<std::ptrdiff_t>(start * n),
                                 xv.data().begin() + static_cast<std::ptrdiff_t>((start + count) * n)));
  const std::size_t ix = x.id;
  return tape_of(x).record("slice_rows", std::move(out), {x}, [ix, start, n](Tape& t, std::size_t o) {
    if (!t.needs_grad(ix)) return;
    const auto& g = t.grad_of(o);
    auto& acc = t.grad_accumulator(ix);
    for (std::size_t i = 0; i < g.size(); ++i) acc[start * n + i] += g[i];
  });
}

Var slice_cols(Var x, std::size_t start, std::size_t count) {
  require_rank("slice_cols", x, 2);
  const std::size_t m = x.value().rows(), n = x.value().cols();
  if (start + count > n) throw DimensionError("slice_cols: range exceeds " + shape_string(x.shape()));
  const auto& xv = x.value();
  Tensor out(Shape{m, count});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < count; ++j) out[i * count + j] = xv[i * n + start + j];
  const std::size_t ix = x.id;
  return tape_of(x).record("slice_cols", std::move(out), {x}, [ix, start, count, m, n](Tape& t, std::size_t o) {
    if (!t.needs_grad(ix)) return;
    const auto& g = t.grad_of(o);
    auto& acc = t.grad_accumulator(ix);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < count; ++j) acc[i * n + start + j] += g[i * count + j];
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const std::size_t n = parts.front().value().cols();
  std::size_t m = 0;
  std::vector<std::size_t> ids, offsets;
  for (Var p : parts) {
    require_rank("concat_rows", p, 2);
    if (p.value().cols() != n) throw DimensionError("concat_rows: column mismatch");
    ids.push_back(p.id);
    offsets.push_back(m * n);
    m += p.value().rows();
  }
  std::vector<double> data;
  data.reserve(m * n);
  for (Var p : parts) data.insert(data.end(), p.value().data().begin(), p.value().data().end());
  return tape_of(parts.front())
      .record("concat_rows", Tensor(Shape{m, n}, std::move(data)), parts, [ids, offsets](Tape& t, std::size_t o) {
        const auto& g = t.grad_of(o);
        for (std::size_t k = 0; k < ids.size(); ++k) {
          if (!t.needs_grad(ids[k])) continue;
          auto& acc = t.grad_accumulator(ids[k]);
          for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g[offsets[k] + i];
        }
      });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t m = parts.front().value().rows();
  std::size_t n = 0;
  std::vector<std::size_t> ids, widths, offsets;
  for (Var p : parts) {
    require_rank("concat_cols", p, 2);
    if (p.value().rows() != m) throw DimensionError("concat_cols: row mismatch");
    ids.push_back(p.id);
    widths.push_back(p.value().cols());
    offsets.push_back(n);
    n += p.value().cols();
  }
  Tensor out(Shape{m, n});
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& pv = parts[k].value();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < widths[k]; ++j) out[i * n + offsets[k] + j] = pv[i * widths[k] + j];
  }
  return tape_of(parts.front())
      .record("concat_cols", std::move(out), parts, [ids, widths, offsets, m, n](Tape& t, std::size_t o) {
        const auto& g = t.grad_of(o);
        for (std::size_t k = 0; k < ids.size(); ++k) {
          if (!t.needs_grad(ids[k])) continue;
          auto& acc = t.grad_accumulator(ids[k]);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < widths[k]; ++j) acc[i * widths[k] + j] += g[i * n + offsets[k] + j];
        }
      });
}

Var row(Var x, std::size_t i) {
  require_rank("row", x, 2);
  const std::size_t n = x.value().cols();
  return reshape(slice_rows(x, i, 1), Shape{n});
}

Var stack(const std::vector<Var>& rows) {
  if (rows.empty()) throw DimensionError("stack: no inputs");
  std::vector<Var> mats;
  mats.reserve(rows.size());
  for (Var r : rows) {
    require_rank("stack", r, 1);
    mats.push_back(reshape(r, Shape{1, r.size()}));
  }
  return concat_rows(mats);
}

Var element(Var x, std::size_t index) {
  if (index >= x.size()) throw DimensionError("element: index out of range");
  const std::size_t ix = x.id;
  return tape_of(x).record("element", Tensor::scalar(x.value()[index]), {x}, [ix, index](Tape& t, std::size_t o) {
    if (!t.needs_grad(ix)) return;
    t.grad_accumulator(ix)[index] += t.grad_of(o)[0];
  });
}

Var concat(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  std::vector<double> data;
  std::vector<std::size_t> ids, offsets;
  for (Var p : parts) {
    ids.push_back(p.id);
    offsets.push_back(data.size());
    data.insert(data.end(), p.value().data().begin(), p.value().data().end());
  }
  const std::size_t total = data.size();
  return tape_of(parts.front())
      .record("concat", Tensor(Shape{total}, std::move(data)), parts, [ids, offsets](Tape& t, std::size_t o) {
        const auto& g = t.grad_of(o);
        for (std::size_t k = 0; k < ids.size(); ++k) {
          if (!t.needs_grad(ids[k])) continue;
          auto& acc = t.grad_accumulator(ids[k]);
          for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g[offsets[k] + i];
        }
      });
}

// ---------------------------------------------------------------------------
// Finite-difference check

GradCheckResult grad_check(const ScalarFn& f, const Tensor& x, double eps, double floor) {
  if (!(eps >= 1e-7 && eps <= 1e-3)) throw std::invalid_argument("grad_check: eps must lie in [1e-7, 1e-3]");
  Tensor analytic;
  {
    Tape tape;
    Var xv = tape.leaf(x);
    Var y = f(tape, xv);
    tape.backward(y);
    analytic = tape.grad(xv);
  }
  auto evaluate = [&](const Tensor& point) {
    Tape tape;
    Var xv = tape.constant(point);
    return f(tape, xv).value().item();
  };
  GradCheckResult result;
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + eps;
    const double up = evaluate(probe);
    probe[i] = orig - eps;
    const double down = evaluate(probe);
    probe[i] = orig;
    const double numeric = (up - down) / (2.0 * eps);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), floor});
    const double rel = std::abs(analytic[i] - numeric) / denom;
    if (i == 0 || rel > result.max_rel_error) {
      result.max_rel_error = rel;
      result.worst_index = i;
      result.analytic = analytic[i];
      result.numeric = numeric;
    }
  }
  return result;
}

}  // namespace pvit
