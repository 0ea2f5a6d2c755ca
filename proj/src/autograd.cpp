#include "meses/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include "meses/kernels.hpp"

namespace meses::ag {

const Tensor& Var::value() const { return tape->value(id); }

double Var::item() const {
  if (size() != 1) throw ShapeError("item() on non-scalar " + shape_str(shape()));
  return value()[0];
}

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), Tensor{}, false, nullptr, {}});
  return Var{this, nodes_.size() - 1};
}

Var Tape::param(Parameter& p) {
  for (const auto& [ptr, id] : bound_)
    if (ptr == &p) return Var{this, id};
  nodes_.push_back(Node{p.value, Tensor{}, grad_enabled_, &p, {}});
  bound_.emplace_back(&p, nodes_.size() - 1);
  return Var{this, nodes_.size() - 1};
}

Var Tape::record(Tensor value, bool requires_grad, BackwardFn fn) {
  const bool rg = grad_enabled_ && requires_grad;
  nodes_.push_back(Node{std::move(value), Tensor{}, rg, nullptr, rg ? std::move(fn) : BackwardFn{}});
  return Var{this, nodes_.size() - 1};
}

Tensor& Tape::grad(std::size_t id) {
  auto& n = nodes_[id];
  if (n.grad.storage().empty()) n.grad = Tensor(n.value.shape());
  return n.grad;
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw std::invalid_argument("loss recorded on another tape");
  if (value(loss.id).size() != 1)
    throw ShapeError("backward() needs a scalar loss, got shape " + shape_str(value(loss.id).shape()));
  if (!nodes_[loss.id].requires_grad) return;
  grad(loss.id)[0] += 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    auto& n = nodes_[i];
    if (!n.requires_grad || n.grad.storage().empty() || !n.backward) continue;
    n.backward(*this, i);
  }
  for (const auto& [p, id] : bound_) {
    if (!has_grad(id)) continue;
    const auto& g = nodes_[id].grad;
    auto& dst = p->grad;
    for (std::size_t j = 0; j < g.size(); ++j) dst[j] += g[j];
  }
}

namespace {

bool any_rg(std::initializer_list<Var> vs) {
  for (auto v : vs)
    if (v.tape->requires_grad(v)) return true;
  return false;
}

void check_same(Var a, Var b, const char* op) {
  if (a.size() != b.size())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

std::size_t last_dim(const Tensor& t) { return t.rank() == 0 ? 1 : t.shape().back(); }

// Elementwise unary op with derivative expressed through input x and output y.
template <class F, class D>
Var unary(Var x, F f, D dfdx) {
  const Tensor& xv = x.value();
  Tensor y(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) y[i] = f(xv[i]);
  return x.tape->record(std::move(y), any_rg({x}), [x, dfdx](Tape& t, std::size_t self) {
    if (!t.requires_grad(x)) return;
    const Tensor& xv = t.value(x.id);
    const Tensor& yv = t.value(self);
    const Tensor& gy = t.grad(self);
    Tensor& gx = t.grad(x.id);
    for (std::size_t i = 0; i < xv.size(); ++i) gx[i] += gy[i] * dfdx(xv[i], yv[i]);
  });
}

Shape with_last(const Shape& s, std::size_t last) {
  Shape out = s;
  if (out.empty()) out.push_back(last);
  else out.back() = last;
  return out;
}

}  // namespace

Var matmul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (bv.rank() != 2) throw ShapeError("matmul: rhs must be 2-D, got " + shape_str(bv.shape()));
  const std::size_t k = last_dim(av);
  if (k != bv.dim(0))
    throw ShapeError("matmul: inner dims differ " + shape_str(av.shape()) + " x " + shape_str(bv.shape()));
  const std::size_t n = av.size() / k, m = bv.dim(1);
  Tensor c(with_last(av.shape(), m));
  kernels::gemm(av.data(), bv.data(), c.data(), n, k, m, false);
  return a.tape->record(std::move(c), any_rg({a, b}), [a, b, n, k, m](Tape& t, std::size_t self) {
    const Tensor& gc = t.grad(self);
    if (t.requires_grad(a)) kernels::gemm_nt(gc.data(), t.value(b.id).data(), t.grad(a.id).data(), n, m, k, true);
    if (t.requires_grad(b)) kernels::gemm_tn(t.value(a.id).data(), gc.data(), t.grad(b.id).data(), n, k, m, true);
  });
}

Var matmul_nt(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const std::size_t k = last_dim(av);
  if (bv.rank() != 2 || bv.dim(1) != k)
    throw ShapeError("matmul_nt: inner dims differ " + shape_str(av.shape()) + " x " + shape_str(bv.shape()) + "^T");
  const std::size_t n = av.size() / k, m = bv.dim(0);
  Tensor c(with_last(av.shape(), m));
  kernels::gemm_nt(av.data(), bv.data(), c.data(), n, k, m, false);
  return a.tape->record(std::move(c), any_rg({a, b}), [a, b, n, k, m](Tape& t, std::size_t self) {
    const Tensor& gc = t.grad(self);
    if (t.requires_grad(a)) kernels::gemm(gc.data(), t.value(b.id).data(), t.grad(a.id).data(), n, m, k, true);
    if (t.requires_grad(b)) kernels::gemm_tn(gc.data(), t.value(a.id).data(), t.grad(b.id).data(), n, m, k, true);
  });
}

Var add(Var a, Var b) {
  check_same(a, b, "add");
  Tensor c = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < c.size(); ++i) c[i] += bv[i];
  return a.tape->record(std::move(c), any_rg({a, b}), [a, b](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    for (Var v : {a, b}) {
      if (!t.requires_grad(v)) continue;
      Tensor& gv = t.grad(v.id);
      for (std::size_t i = 0; i < g.size(); ++i) gv[i] += g[i];
    }
  });
}

Var sub(Var a, Var b) {
  check_same(a, b, "sub");
  Tensor c = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < c.size(); ++i) c[i] -= bv[i];
  return a.tape->record(std::move(c), any_rg({a, b}), [a, b](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(a)) {
      Tensor& ga = t.grad(a.id);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.requires_grad(b)) {
      Tensor& gb = t.grad(b.id);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  check_same(a, b, "mul");
  Tensor c = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < c.size(); ++i) c[i] *= bv[i];
  return a.tape->record(std::move(c), any_rg({a, b}), [a, b](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(a)) {
      Tensor& ga = t.grad(a.id);
      const Tensor& bv = t.value(b.id);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.requires_grad(b)) {
      Tensor& gb = t.grad(b.id);
      const Tensor& av = t.value(a.id);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

Var scale(Var a, double s) {
  return unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var add_scalar(Var a, double s) {
  return unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Var add_bias(Var x, Var b) {
  const std::size_t m = last_dim(x.value());
  if (b.size() != m)
    throw ShapeError("add_bias: bias " + shape_str(b.shape()) + " vs input " + shape_str(x.shape()));
  Tensor y = x.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += bv[i % m];
  return x.tape->record(std::move(y), any_rg({x, b}), [x, b, m](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(x)) {
      Tensor& gx = t.grad(x.id);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (t.requires_grad(b)) {
      Tensor& gb = t.grad(b.id);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % m] += g[i];
    }
  });
}

Var mul_col(Var x, Var c) {
  const std::size_t m = last_dim(x.value());
  const std::size_t n = x.size() / m;
  if (c.size() != n) throw ShapeError("mul_col: " + shape_str(c.shape()) + " vs rows of " + shape_str(x.shape()));
  Tensor y = x.value();
  const Tensor& cv = c.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= cv[i / m];
  return x.tape->record(std::move(y), any_rg({x, c}), [x, c, m](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(x)) {
      Tensor& gx = t.grad(x.id);
      const Tensor& cv = t.value(c.id);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * cv[i / m];
    }
    if (t.requires_grad(c)) {
      Tensor& gc = t.grad(c.id);
      const Tensor& xv = t.value(x.id);
      for (std::size_t i = 0; i < g.size(); ++i) gc[i / m] += g[i] * xv[i];
    }
  });
}

Var linear(Var x, Var w, Var b) { return add_bias(matmul(x, w), b); }

Var relu(Var x) {
  if (x.tape->relu_log_enabled()) {
    auto& log = x.tape->relu_log();
    const auto v = x.value().values();
    log.insert(log.end(), v.begin(), v.end());
  }
  return unary(x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Var sin(Var x) {
  return unary(x, [](double v) { return std::sin(v); }, [](double v, double) { return std::cos(v); });
}

Var exp(Var x) {
  return unary(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Var log(Var x) {
  return unary(x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Var softplus(Var x) {
  return unary(
      x, [](double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); },
      [](double v, double) { return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); });
}

Var sigmoid(Var x) {
  return unary(
      x, [](double v) { return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); },
      [](double, double y) { return y * (1.0 - y); });
}

Var square(Var x) {
  return unary(x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Var sqrt(Var x) {
  return unary(x, [](double v) { return std::sqrt(v); }, [](double, double y) { return 0.5 / y; });
}

Var clamp_min(Var x, double lo) {
  return unary(x, [lo](double v) { return v < lo ? lo : v; }, [lo](double v, double) { return v < lo ? 0.0 : 1.0; });
}

Var logsumexp(Var x) {
  const Tensor& xv = x.value();
  const std::size_t m = last_dim(xv);
  const std::size_t rows = xv.size() / m;
  Shape out = xv.shape();
  if (!out.empty()) out.pop_back();
  Tensor y(out);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv.data() + r * m;
    const double mx = *std::max_element(xr, xr + m);
    double z = 0.0;
    for (std::size_t j = 0; j < m; ++j) z += std::exp(xr[j] - mx);
    y[r] = mx + std::log(z);
  }
  return x.tape->record(std::move(y), any_rg({x}), [x, m, rows](Tape& t, std::size_t self) {
    if (!t.requires_grad(x)) return;
    const Tensor& xv = t.value(x.id);
    const Tensor& yv = t.value(self);
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad(x.id);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < m; ++j) gx[r * m + j] += g[r] * std::exp(xv[r * m + j] - yv[r]);
  });
}

Var softmax(Var x, const Mask* mask) {
  const Tensor& xv = x.value();
  const std::size_t m = last_dim(xv);
  const std::size_t rows = xv.size() / m;
  if (mask && mask->size() != xv.size()) throw ShapeError("softmax: mask size mismatch");
  Tensor y(xv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv.data() + r * m;
    double* yr = y.data() + r * m;
    const std::uint8_t* mr = mask ? mask->data() + r * m : nullptr;
    double mx = -std::numeric_limits<double>::infinity();
    bool any = false;
    for (std::size_t j = 0; j < m; ++j)
      if (!mr || !mr[j]) {
        any = true;
        // NaN must win the max so it propagates to the loss check.
        mx = std::isnan(xr[j]) || xr[j] > mx ? xr[j] : mx;
      }
    if (!any) throw std::domain_error("softmax: fully masked row");
    double z = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      yr[j] = (mr && mr[j]) ? 0.0 : std::exp(xr[j] - mx);
      z += yr[j];
    }
    for (std::size_t j = 0; j < m; ++j) yr[j] /= z;
  }
  return x.tape->record(std::move(y), any_rg({x}), [x, m, rows](Tape& t, std::size_t self) {
    if (!t.requires_grad(x)) return;
    const Tensor& yv = t.value(self);
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad(x.id);
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < m; ++j) dot += yv[r * m + j] * g[r * m + j];
      for (std::size_t j = 0; j < m; ++j) gx[r * m + j] += yv[r * m + j] * (g[r * m + j] - dot);
    }
  });
}

Var log_softmax(Var x, const Mask* mask) {
  const Tensor& xv = x.value();
  const std::size_t m = last_dim(xv);
  const std::size_t rows = xv.size() / m;
  if (mask && mask->size() != xv.size()) throw ShapeError("log_softmax: mask size mismatch");
  Tensor y(xv.shape());
  auto probs = std::make_shared<std::vector<double>>(xv.size(), 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv.data() + r * m;
    const std::uint8_t* mr = mask ? mask->data() + r * m : nullptr;
    double mx = -std::numeric_limits<double>::infinity();
    bool any = false;
    for (std::size_t j = 0; j < m; ++j)
      if (!mr || !mr[j]) {
        any = true;
        // NaN must win the max so it propagates to the loss check.
        mx = std::isnan(xr[j]) || xr[j] > mx ? xr[j] : mx;
      }
    if (!any) throw std::domain_error("log_softmax: fully masked row");
    double z = 0.0;
    for (std::size_t j = 0; j < m; ++j)
      if (!mr || !mr[j]) z += std::exp(xr[j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < m; ++j) {
      if (mr && mr[j]) continue;
      y[r * m + j] = xr[j] - lse;
      (*probs)[r * m + j] = std::exp(y[r * m + j]);
    }
  }
  Mask mcopy = mask ? *mask : Mask{};
  return x.tape->record(std::move(y), any_rg({x}), [x, m, rows, probs, mcopy](Tape& t, std::size_t self) {
    if (!t.requires_grad(x)) return;
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad(x.id);
    for (std::size_t r = 0; r < rows; ++r) {
      double s = 0.0;
      for (std::size_t j = 0; j < m; ++j)
        if (mcopy.empty() || !mcopy[r * m + j]) s += g[r * m + j];
      for (std::size_t j = 0; j < m; ++j) {
        if (!mcopy.empty() && mcopy[r * m + j]) continue;
        gx[r * m + j] += g[r * m + j] - (*probs)[r * m + j] * s;
      }
    }
  });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  const Tensor& xv = x.value();
  const std::size_t m = last_dim(xv);
  const std::size_t rows = xv.size() / m;
  if (gamma.size() != m || beta.size() != m) throw ShapeError("layer_norm: affine width mismatch");
  Tensor y(xv.shape());
  auto stats = std::make_shared<std::vector<double>>(2 * rows);
  kernels::layer_norm_forward(xv.data(), gamma.value().data(), beta.value().data(), y.data(), stats->data(),
                              stats->data() + rows, rows, m, eps);
  return x.tape->record(std::move(y), any_rg({x, gamma, beta}), [x, gamma, beta, m, rows, stats](Tape& t,
                                                                                               std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& xv = t.value(x.id);
    const Tensor& gv = t.value(gamma.id);
    const double* mu = stats->data();
    const double* rs = stats->data() + rows;
    const bool gx_on = t.requires_grad(x), gg_on = t.requires_grad(gamma), gb_on = t.requires_grad(beta);
    Tensor* gx = gx_on ? &t.grad(x.id) : nullptr;
    Tensor* gg = gg_on ? &t.grad(gamma.id) : nullptr;
    Tensor* gb = gb_on ? &t.grad(beta.id) : nullptr;
    std::vector<double> xhat(m), dxhat(m);
    for (std::size_t r = 0; r < rows; ++r) {
      double mean_d = 0.0, mean_dx = 0.0;
      for (std::size_t j = 0; j < m; ++j) {
        xhat[j] = (xv[r * m + j] - mu[r]) * rs[r];
        const double gy = g[r * m + j];
        if (gg) (*gg)[j] += gy * xhat[j];
        if (gb) (*gb)[j] += gy;
        dxhat[j] = gy * gv[j];
        mean_d += dxhat[j];
        mean_dx += dxhat[j] * xhat[j];
      }
      if (!gx) continue;
      mean_d /= static_cast<double>(m);
      mean_dx /= static_cast<double>(m);
      for (std::size_t j = 0; j < m; ++j) (*gx)[r * m + j] += rs[r] * (dxhat[j] - mean_d - xhat[j] * mean_dx);
    }
  });
}

Var l2_normalize(Var x, double eps) {
  const Tensor& xv = x.value();
  const std::size_t m = last_dim(xv);
  const std::size_t rows = xv.size() / m;
  Tensor y(xv.shape());
  auto norms = std::make_shared<std::vector<double>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < m; ++j) s += xv[r * m + j] * xv[r * m + j];
    const double n = std::max(std::sqrt(s), eps);
    (*norms)[r] = n;
    for (std::size_t j = 0; j < m; ++j) y[r * m + j] = xv[r * m + j] / n;
  }
  return x.tape->record(std::move(y), any_rg({x}), [x, m, rows, norms, eps](Tape& t, std::size_t self) {
    if (!t.requires_grad(x)) return;
    const Tensor& yv = t.value(self);
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad(x.id);
    for (std::size_t r = 0; r < rows; ++r) {
      const double n = (*norms)[r];
      if (n <= eps) {
        for (std::size_t j = 0; j < m; ++j) gx[r * m + j] += g[r * m + j] / n;
        continue;
      }
      double dot = 0.0;
      for (std::size_t j = 0; j < m; ++j) dot += yv[r * m + j] * g[r * m + j];
      for (std::size_t j = 0; j < m; ++j) gx[r * m + j] += (g[r * m + j] - yv[r * m + j] * dot) / n;
    }
  });
}

Var reshape(Var x, Shape s) {
  Tensor y = x.value().reshaped(std::move(s));
  return x.tape->record(std::move(y), any_rg({x}), [x](Tape& t, std::size_t self) {
    if (!t.requires_grad(x)) return;
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad(x.id);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

Var transpose(Var x) {
  if (x.value().rank() != 2) throw ShapeError("transpose: expected 2-D, got " + shape_str(x.shape()));
  return permute(x, {1, 0});
}

namespace {

struct PermutePlan {
  Shape out_shape;
  std::vector<std::size_t> src_stride;  // stride in the source for each output axis
};

PermutePlan plan_permute(const Shape& in, const std::vector<std::size_t>& axes) {
  if (axes.size() != in.size()) throw ShapeError("permute: axes rank mismatch for " + shape_str(in));
  std::vector<std::size_t> stride(in.size(), 1);
  for (std::size_t i = in.size(); i-- > 1;) stride[i - 1] = stride[i] * in[i];
  PermutePlan p;
  std::vector<bool> seen(in.size(), false);
  for (auto a : axes) {
    if (a >= in.size() || seen[a]) throw ShapeError("permute: invalid axes");
    seen[a] = true;
    p.out_shape.push_back(in[a]);
    p.src_stride.push_back(stride[a]);
  }
  return p;
}

// Calls f(dst_index, src_index) for every element of the permuted tensor.
template <class F>
void for_each_permuted(const PermutePlan& p, F f) {
  const std::size_t rank = p.out_shape.size();
  const std::size_t total = numel(p.out_shape);
  std::vector<std::size_t> idx(rank, 0);
  std::size_t src = 0;
  for (std::size_t dst = 0; dst < total; ++dst) {
    f(dst, src);
    for (std::size_t ax = rank; ax-- > 0;) {
      ++idx[ax];
      src += p.src_stride[ax];
      if (idx[ax] < p.out_shape[ax]) break;
      src -= p.src_stride[ax] * idx[ax];
      idx[ax] = 0;
    }
  }
}

}  // namespace

Var permute(Var x, const std::vector<std::size_t>& axes) {
  auto plan = plan_permute(x.shape(), axes);
  const Tensor& xv = x.value();
  Tensor y(plan.out_shape);
  for_each_permuted(plan, [&](std::size_t d, std::size_t s) { y[d] = xv[s]; });
  return x.tape->record(std::move(y), any_rg({x}), [x, plan](Tape& t, std::size_t self) {
    if (!t.requires_grad(x)) return;
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad(x.id);
    for_each_permuted(plan, [&](std::size_t d, std::size_t s) { gx[s] += g[d]; });
  });
}

Var slice(Var x, std::size_t axis, std::size_t start, std::size_t len) {
  const Shape& in = x.shape();
  if (axis >= in.size() || start + len > in[axis])
    throw ShapeError("slice: out of range on axis " + std::to_string(axis) + " of " + shape_str(in));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= in[i];
  for (std::size_t i = axis + 1; i < in.size(); ++i) inner *= in[i];
  const std::size_t n = in[axis];
  Shape out = in;
  out[axis] = len;
  Tensor y(out);
  const Tensor& xv = x.value();
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(xv.data() + (o * n + start) * inner, len * inner, y.data() + o * len * inner);
  return x.tape->record(std::move(y), any_rg({x}), [x, outer, inner, n, start, len](Tape& t, std::size_t self) {
    if (!t.requires_grad(x)) return;
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad(x.id);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t i = 0; i < len * inner; ++i) gx[(o * n + start) * inner + i] += g[o * len * inner + i];
  });
}

Var concat(const std::vector<Var>& xs, std::size_t axis) {
  if (xs.empty()) throw ShapeError("concat: no inputs");
  const Shape& s0 = xs[0].shape();
  if (axis >= s0.size()) throw ShapeError("concat: bad axis for " + shape_str(s0));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s0[i];
  for (std::size_t i = axis + 1; i < s0.size(); ++i) inner *= s0[i];
  std::vector<std::size_t> lens;
  std::size_t total = 0;
  bool rg = false;
  for (const auto& v : xs) {
    const Shape& s = v.shape();
    if (s.size() != s0.size()) throw ShapeError("concat: rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i)
      if (i != axis && s[i] != s0[i]) throw ShapeError("concat: shape mismatch " + shape_str(s) + " vs " + shape_str(s0));
    lens.push_back(s[axis]);
    total += s[axis];
    rg = rg || v.tape->requires_grad(v);
  }
  Shape out = s0;
  out[axis] = total;
  Tensor y(out);
  std::size_t off = 0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const Tensor& xv = xs[k].value();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(xv.data() + o * lens[k] * inner, lens[k] * inner, y.data() + (o * total + off) * inner);
    off += lens[k];
  }
  return xs[0].tape->record(std::move(y), rg, [xs, lens, outer, inner, total](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    std::size_t off = 0;
    for (std::size_t k = 0; k < xs.size(); ++k) {
      if (t.requires_grad(xs[k])) {
        Tensor& gx = t.grad(xs[k].id);
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t i = 0; i < lens[k] * inner; ++i)
            gx[o * lens[k] * inner + i] += g[(o * total + off) * inner + i];
      }
      off += lens[k];
    }
  });
}

Var gather_rows(Var x, const std::vector<std::size_t>& idx) {
  const Tensor& xv = x.value();
  const std::size_t n = xv.dim(0);
  const std::size_t cols = xv.size() / n;
  Shape out = xv.shape();
  out[0] = idx.size();
  Tensor y(out);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= n) throw std::out_of_range("gather_rows: index out of range");
    std::copy_n(xv.data() + idx[i] * cols, cols, y.data() + i * cols);
  }
  return x.tape->record(std::move(y), any_rg({x}), [x, idx, cols](Tape& t, std::size_t self) {
    if (!t.requires_grad(x)) return;
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad(x.id);
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t c = 0; c < cols; ++c) gx[idx[i] * cols + c] += g[i * cols + c];
  });
}

Var scatter_rows(Var x, const std::vector<std::size_t>& idx, std::size_t n_out) {
  const Tensor& xv = x.value();
  if (xv.dim(0) != idx.size()) throw ShapeError("scatter_rows: index count mismatch");
  const std::size_t cols = idx.empty() ? xv.size() : xv.size() / idx.size();
  Shape out = xv.shape();
  out[0] = n_out;
  Tensor y(out);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= n_out) throw std::out_of_range("scatter_rows: index out of range");
    for (std::size_t c = 0; c < cols; ++c) y[idx[i] * cols + c] += xv[i * cols + c];
  }
  return x.tape->record(std::move(y), any_rg({x}), [x, idx, cols](Tape& t, std::size_t self) {
    if (!t.requires_grad(x)) return;
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad(x.id);
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t c = 0; c < cols; ++c) gx[i * cols + c] += g[idx[i] * cols + c];
  });
}

Var pick(Var x, const std::vector<std::size_t>& idx) {
  const Tensor& xv = x.value();
  const std::size_t m = last_dim(xv);
  const std::size_t n = xv.size() / m;
  if (idx.size() != n) throw ShapeError("pick: index count mismatch");
  Tensor y(Shape{n});
  for (std::size_t i = 0; i < n; ++i) {
    if (idx[i] >= m) throw std::out_of_range("pick: index out of range");
    y[i] = xv[i * m + idx[i]];
  }
  return x.tape->record(std::move(y), any_rg({x}), [x, idx, m](Tape& t, std::size_t self) {
    if (!t.requires_grad(x)) return;
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad(x.id);
    for (std::size_t i = 0; i < idx.size(); ++i) gx[i * m + idx[i]] += g[i];
  });
}

Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  return x.tape->record(Tensor(Shape{}, s), any_rg({x}), [x](Tape& t, std::size_t self) {
    if (!t.requires_grad(x)) return;
    const double g = t.grad(self)[0];
    for (auto& v : t.grad(x.id).values()) v += g;
  });
}

Var mean(Var x) {
  if (x.size() == 0) throw ShapeError("mean of empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.size()));
}

Var sum_cols(Var x) {
  const Tensor& xv = x.value();
  const std::size_t m = last_dim(xv);
  const std::size_t rows = xv.size() / m;
  Shape out = xv.shape();
  if (!out.empty()) out.pop_back();
  Tensor y(out);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < m; ++j) s += xv[r * m + j];
    y[r] = s;
  }
  return x.tape->record(std::move(y), any_rg({x}), [x, m, rows](Tape& t, std::size_t self) {
    if (!t.requires_grad(x)) return;
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad(x.id);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < m; ++j) gx[r * m + j] += g[r];
  });
}

Var weighted_sum(Var x, const std::vector<double>& w) {
  if (w.size() != x.size()) throw ShapeError("weighted_sum: weight count mismatch");
  const Tensor& xv = x.value();
  double s = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) s += w[i] * xv[i];
  return x.tape->record(Tensor(Shape{}, s), any_rg({x}), [x, w](Tape& t, std::size_t self) {
    if (!t.requires_grad(x)) return;
    const double g = t.grad(self)[0];
    Tensor& gx = t.grad(x.id);
    for (std::size_t i = 0; i < w.size(); ++i) gx[i] += g * w[i];
  });
}

Var attention(Var q, Var k, Var v, std::size_t groups, std::size_t nq, std::size_t nk, std::size_t heads,
              const Mask& key_masked) {
  const std::size_t width = last_dim(q.value());
  if (width % heads) throw ShapeError("attention: width not divisible by heads");
  kernels::AttentionDims d{groups, nq, nk, heads, width / heads};
  if (q.size() != groups * nq * width || k.size() != groups * nk * width || v.size() != k.size())
    throw ShapeError("attention: q/k/v sizes do not match dims");
  if (!key_masked.empty() && key_masked.size() != groups * nk) throw ShapeError("attention: mask size mismatch");
  Tensor out(q.shape());
  auto probs = std::make_shared<std::vector<double>>(groups * heads * nq * nk);
  auto mask = std::make_shared<Mask>(key_masked);
  if (!mask->empty()) {
    for (std::size_t g = 0; g < groups; ++g) {
      bool any = false;
      for (std::size_t j = 0; j < nk; ++j) any = any || !(*mask)[g * nk + j];
      if (!any) throw std::domain_error("attention: group with every key masked");
    }
  }
  const std::uint8_t* mp = mask->empty() ? nullptr : mask->data();
  kernels::attention_forward(d, q.value().data(), k.value().data(), v.value().data(), mp, out.data(), probs->data());
  return q.tape->record(std::move(out), any_rg({q, k, v}), [q, k, v, d, probs, mask](Tape& t, std::size_t self) {
    const std::uint8_t* mp = mask->empty() ? nullptr : mask->data();
    std::vector<double> sq, sk, sv;
    auto buf = [&](Var x, std::vector<double>& scratch) -> double* {
      if (t.requires_grad(x)) return t.grad(x.id).data();
      scratch.assign(x.size(), 0.0);
      return scratch.data();
    };
    double* dq = buf(q, sq);
    double* dk = buf(k, sk);
    double* dv = buf(v, sv);
    kernels::attention_backward(d, t.value(q.id).data(), t.value(k.id).data(), t.value(v.id).data(), mp,
                                probs->data(), t.grad(self).data(), dq, dk, dv);
  });
}

}  // namespace meses::ag
