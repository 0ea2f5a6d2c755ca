#include "meses/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace meses {

ag::Var masked_bce(ag::Var logits, const std::vector<double>& y, const std::vector<std::uint8_t>& valid) {
  const std::size_t n = logits.size();
  if (y.size() != n || valid.size() != n) throw ShapeError("masked_bce: label/mask size mismatch");
  std::size_t nv = 0;
  for (auto v : valid) nv += v != 0;
  if (nv == 0) throw std::invalid_argument("masked_bce: no valid events");
  Tensor yt({n});
  std::copy(y.begin(), y.end(), yt.data());
  const ag::Var z = ag::reshape(logits, {n});
  const ag::Var per = ag::sub(ag::softplus(z), ag::mul(z, logits.tape->constant(std::move(yt))));
  std::vector<double> w(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    if (valid[i]) w[i] = 1.0 / static_cast<double>(nv);
  return ag::weighted_sum(per, w);
}

NoiseHead::NoiseHead(std::size_t d, ParamRegistry& params, Rng& rng) {
  w_ = &params.add_uniform("head.noise.w", {d, 1}, d, rng);
  b_ = &params.add_constant("head.noise.b", {1}, 0.0);
}

ag::Var NoiseHead::logits(ag::Tape& tape, ag::Var H) const {
  const ag::Var z = ag::linear(H, tape.param(*w_), tape.param(*b_));
  return ag::reshape(z, {H.dim(0)});
}

PrototypeProjector::PrototypeProjector(std::size_t d, std::size_t h_proj, std::size_t d_f, ParamRegistry& params,
                                       Rng& rng) {
  w1_ = &params.add_uniform("head.proj.w1", {d, h_proj}, d, rng);
  b1_ = &params.add_constant("head.proj.b1", {h_proj}, 0.0);
  w2_ = &params.add_uniform("head.proj.w2", {h_proj, d_f}, h_proj, rng);
  b2_ = &params.add_constant("head.proj.b2", {d_f}, 0.0);
}

ag::Var PrototypeProjector::project(ag::Tape& tape, ag::Var H) const {
  const ag::Var h = ag::relu(ag::linear(H, tape.param(*w1_), tape.param(*b1_)));
  return ag::l2_normalize(ag::linear(h, tape.param(*w2_), tape.param(*b2_)));
}

std::optional<ag::Var> prototype_loss(ag::Tape& tape, ag::Var H, ag::Var P, const PrototypeProjector& proj,
                                      const std::vector<std::size_t>& anchor_rows,
                                      const std::vector<std::size_t>& anchor_entities, double beta) {
  if (anchor_rows.size() != anchor_entities.size()) throw ShapeError("prototype_loss: anchor size mismatch");
  if (anchor_rows.empty()) return std::nullopt;
  if (!(beta > 0)) throw std::invalid_argument("prototype_loss: beta must be positive");
  std::vector<std::size_t> cand(anchor_entities);
  std::sort(cand.begin(), cand.end());
  cand.erase(std::unique(cand.begin(), cand.end()), cand.end());
  std::vector<std::size_t> target(anchor_entities.size());
  for (std::size_t i = 0; i < target.size(); ++i)
    target[i] = static_cast<std::size_t>(std::lower_bound(cand.begin(), cand.end(), anchor_entities[i]) - cand.begin());
  const ag::Var h = proj.project(tape, ag::gather_rows(H, anchor_rows));
  const ag::Var p = ag::l2_normalize(ag::gather_rows(P, cand));
  const ag::Var logits = ag::scale(ag::matmul_nt(h, p), 1.0 / beta);
  return ag::scale(ag::mean(ag::pick(ag::log_softmax(logits), target)), -1.0);
}

ag::Var joint_loss(ag::Var noise, std::optional<ag::Var> proto, double gamma) {
  if (!proto || gamma == 0.0) return noise;
  return ag::add(noise, ag::scale(*proto, gamma));
}

AnomalyHead::AnomalyHead(std::size_t d, ParamRegistry& params, Rng& rng) {
  w1_ = &params.add_uniform("ft.anom.w1", {d, d}, d, rng);
  b1_ = &params.add_constant("ft.anom.b1", {d}, 0.0);
  w2_ = &params.add_uniform("ft.anom.w2", {d, d}, d, rng);
  b2_ = &params.add_constant("ft.anom.b2", {d}, 0.0);
  w3_ = &params.add_uniform("ft.anom.w3", {d, 1}, d, rng);
  b3_ = &params.add_constant("ft.anom.b3", {1}, 0.0);
}

ag::Var AnomalyHead::logits(ag::Tape& tape, ag::Var H) const {
  ag::Var h = ag::relu(ag::linear(H, tape.param(*w1_), tape.param(*b1_)));
  h = ag::relu(ag::linear(h, tape.param(*w2_), tape.param(*b2_)));
  return ag::reshape(ag::linear(h, tape.param(*w3_), tape.param(*b3_)), {H.dim(0)});
}

std::vector<std::size_t> poi_candidates(std::size_t target, const std::vector<std::size_t>& batch_targets,
                                        std::size_t n_contexts, std::size_t n_neg, Rng& rng) {
  std::vector<std::size_t> c{target};
  for (std::size_t k = 0; k < n_neg; ++k) {
    std::size_t x = uniform_index(rng, n_contexts);
    if (x == target) x = uniform_index(rng, n_contexts);
    if (x != target) c.push_back(x);
  }
  std::vector<std::size_t> inb;
  for (std::size_t t : batch_targets)
    if (t != target) inb.push_back(t);
  std::sort(inb.begin(), inb.end());
  inb.erase(std::unique(inb.begin(), inb.end()), inb.end());
  c.insert(c.end(), inb.begin(), inb.end());
  return c;
}

PoiHead::PoiHead(std::size_t d, std::size_t n_contexts, ParamRegistry& params, Rng& rng) : n_contexts_(n_contexts) {
  if (n_contexts < 2) throw std::invalid_argument("PoiHead: need at least 2 contexts");
  w1_ = &params.add_uniform("ft.poi.w1", {d, d}, d, rng);
  b1_ = &params.add_constant("ft.poi.b1", {d}, 0.0);
  w2_ = &params.add_uniform("ft.poi.w2", {d, d}, d, rng);
  b2_ = &params.add_constant("ft.poi.b2", {d}, 0.0);
  emb_ = &params.add_uniform("ft.poi.emb", {n_contexts, d}, d, rng);
}

ag::Var PoiHead::query(ag::Tape& tape, ag::Var H) const {
  const ag::Var h = ag::relu(ag::linear(H, tape.param(*w1_), tape.param(*b1_)));
  return ag::linear(h, tape.param(*w2_), tape.param(*b2_));
}

ag::Var PoiHead::scores(ag::Tape& tape, ag::Var q) const { return ag::matmul_nt(q, tape.param(*emb_)); }

ag::Var PoiHead::embedding(ag::Tape& tape, const std::vector<std::size_t>& ids) const {
  return ag::gather_rows(tape.param(*emb_), ids);
}

ag::Var PoiHead::loss(ag::Tape& tape, ag::Var q, const std::vector<std::size_t>& targets, std::size_t n_neg,
                      double temperature, Rng& rng) const {
  const std::size_t n = q.dim(0);
  if (targets.size() != n) throw ShapeError("PoiHead::loss: target count mismatch");
  if (n == 0) throw std::invalid_argument("PoiHead::loss: no queries");
  std::vector<std::vector<std::size_t>> cands(n);
  std::size_t width = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (targets[i] >= n_contexts_) throw std::out_of_range("PoiHead::loss: target out of range");
    cands[i] = poi_candidates(targets[i], targets, n_contexts_, n_neg, rng);
    width = std::max(width, cands[i].size());
  }
  std::vector<std::size_t> flat(n * width);
  ag::Mask mask(n * width, 1);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < width; ++j) {
      const bool real = j < cands[i].size();
      flat[i * width + j] = i * n_contexts_ + (real ? cands[i][j] : 0);
      mask[i * width + j] = real ? 0 : 1;
    }
  const ag::Var s = ag::scale(scores(tape, q), 1.0 / temperature);
  const ag::Var picked = ag::reshape(ag::gather_rows(ag::reshape(s, {n * n_contexts_, 1}), flat), {n, width});
  const ag::Var lp = ag::log_softmax(picked, &mask);
  return ag::scale(ag::mean(ag::pick(lp, std::vector<std::size_t>(n, 0))), -1.0);
}

namespace {
constexpr double kLogSqrt2Pi = 0.91893853320467274178;

double softplus(double x) { return x > 30 ? x : std::log1p(std::exp(x)); }
}  // namespace

double Mixture::log_pdf(double x) const {
  double m = -INFINITY;
  std::vector<double> t(weight.size());
  for (std::size_t k = 0; k < weight.size(); ++k) {
    const double z = (x - mean[k]) / scale[k];
    t[k] = std::log(weight[k]) - 0.5 * z * z - std::log(scale[k]) - kLogSqrt2Pi;
    m = std::max(m, t[k]);
  }
  if (!std::isfinite(m)) return m;
  double s = 0;
  for (double v : t) s += std::exp(v - m);
  return m + std::log(s);
}

double Mixture::pdf(double x) const { return std::exp(log_pdf(x)); }

double Mixture::cdf(double x) const {
  double c = 0;
  for (std::size_t k = 0; k < weight.size(); ++k)
    c += weight[k] * 0.5 * std::erfc(-(x - mean[k]) / (scale[k] * std::sqrt(2.0)));
  return c;
}

double Mixture::mass_within(double delta, double w) const { return cdf(delta + w) - cdf(delta - w); }

double Mixture::mode() const {
  double lo = INFINITY, hi = -INFINITY;
  for (std::size_t k = 0; k < weight.size(); ++k) {
    lo = std::min(lo, mean[k] - 4 * scale[k]);
    hi = std::max(hi, mean[k] + 4 * scale[k]);
  }
  constexpr std::size_t kGrid = 512;
  const double step = (hi - lo) / (kGrid - 1);
  std::size_t best = 0;
  double best_v = -INFINITY;
  for (std::size_t i = 0; i < kGrid; ++i) {
    const double v = log_pdf(lo + step * static_cast<double>(i));
    if (v > best_v) best_v = v, best = i;
  }
  // The grid's best point is also a candidate for each component mean.
  double arg = lo + step * static_cast<double>(best);
  for (double m : mean)
    if (log_pdf(m) > best_v) best_v = log_pdf(m), arg = m;
  double a = arg - step, b = arg + step;
  const double g = (std::sqrt(5.0) - 1) / 2;
  double c = b - g * (b - a), d = a + g * (b - a);
  for (int it = 0; it < 100 && b - a > 1e-12 * (1 + std::abs(arg)); ++it) {
    if (log_pdf(c) > log_pdf(d)) b = d;
    else a = c;
    c = b - g * (b - a);
    d = a + g * (b - a);
  }
  const double refined = 0.5 * (a + b);
  return log_pdf(refined) >= best_v ? refined : arg;
}

GmmTimeHead::GmmTimeHead(std::size_t d, std::size_t k, ParamRegistry& params, Rng& rng) : k_(k) {
  if (k == 0) throw std::invalid_argument("GmmTimeHead: K must be >= 1");
  w1_ = &params.add_uniform("ft.time.w1", {2 * d, d}, 2 * d, rng);
  b1_ = &params.add_constant("ft.time.b1", {d}, 0.0);
  w2_ = &params.add_uniform("ft.time.w2", {d, 3 * k}, d, rng);
  b2_ = &params.add_constant("ft.time.b2", {3 * k}, 0.0);
}

ag::Var GmmTimeHead::raw(ag::Tape& tape, ag::Var q, ag::Var e) const {
  const ag::Var h = ag::relu(ag::linear(ag::concat({q, e}, 1), tape.param(*w1_), tape.param(*b1_)));
  return ag::linear(h, tape.param(*w2_), tape.param(*b2_));
}

ag::Var GmmTimeHead::nll(ag::Var raw, const std::vector<double>& deltas) const {
  const std::size_t n = raw.dim(0), K = k_;
  if (deltas.size() != n || raw.dim(1) != 3 * K) throw ShapeError("GmmTimeHead::nll: shape mismatch");
  ag::Tape& tape = *raw.tape;
  const ag::Var sp_w = ag::softplus(ag::slice(raw, 1, 0, K));
  const ag::Var mu = ag::slice(raw, 1, K, K);
  const ag::Var sigma = ag::clamp_min(ag::softplus(ag::slice(raw, 1, 2 * K, K)), kMinScale);
  Tensor dt({n, K});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < K; ++k) dt.data()[i * K + k] = deltas[i];
  const ag::Var log_sigma = ag::log(sigma);
  const ag::Var z = ag::mul(ag::sub(tape.constant(std::move(dt)), mu), ag::exp(ag::scale(log_sigma, -1.0)));
  const ag::Var log_n = ag::add_scalar(ag::sub(ag::scale(ag::square(z), -0.5), log_sigma), -kLogSqrt2Pi);
  const ag::Var ll = ag::sub(ag::logsumexp(ag::add(ag::log(sp_w), log_n)), ag::log(ag::sum_cols(sp_w)));
  return ag::scale(ag::mean(ll), -1.0);
}

Mixture GmmTimeHead::mixture(const Tensor& raw, std::size_t i) const {
  const std::size_t K = k_;
  const double* r = raw.data() + i * 3 * K;
  Mixture m;
  double s = 0;
  for (std::size_t k = 0; k < K; ++k) {
    m.weight.push_back(softplus(r[k]));
    s += m.weight.back();
    m.mean.push_back(r[K + k]);
    m.scale.push_back(std::max(softplus(r[2 * K + k]), kMinScale));
  }
  for (auto& w : m.weight) w /= s;
  return m;
}

}  // namespace meses
