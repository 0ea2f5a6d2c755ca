#include "meses/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "meses/rng.hpp"

namespace meses {

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / (std::abs(analytic) + std::abs(numeric) + 1e-12);
}

namespace {

struct Eval {
  double value = 0.0;
  std::vector<double> relu_pre;
};

Eval evaluate(const LossBuilder& loss, bool log_relu) {
  ag::Tape tape(false);
  tape.enable_relu_log(log_relu);
  Eval e;
  e.value = loss(tape).item();
  if (log_relu) e.relu_pre = std::move(tape.relu_log());
  return e;
}

bool near_kink(const std::vector<double>& base, const std::vector<double>& plus, const std::vector<double>& minus) {
  if (plus.size() != base.size() || minus.size() != base.size()) return true;  // structure changed
  for (std::size_t j = 0; j < base.size(); ++j) {
    if (plus[j] == minus[j]) continue;
    // Same sign at base and both ends: the central difference never crosses the kink.
    if ((plus[j] > 0.0) != (minus[j] > 0.0) || (plus[j] > 0.0) != (base[j] > 0.0)) return true;
  }
  return false;
}

}  // namespace

GradCheckReport grad_check(ParamRegistry& params, const LossBuilder& loss, const GradCheckOptions& opt) {
  params.zero_grad();
  {
    ag::Tape tape;
    tape.backward(loss(tape));
  }

  std::vector<std::pair<std::size_t, std::size_t>> flat;  // (param, index)
  for (std::size_t p = 0; p < params.size(); ++p)
    for (std::size_t i = 0; i < params[p].value.size(); ++i) flat.emplace_back(p, i);

  Rng rng = derive_rng(opt.seed, {0x67726164ULL});
  std::vector<std::size_t> picks(flat.size());
  std::iota(picks.begin(), picks.end(), 0);
  if (opt.n_coords < flat.size()) {
    // Partial Fisher-Yates.
    for (std::size_t i = 0; i < opt.n_coords; ++i) std::swap(picks[i], picks[i + uniform_index(rng, flat.size() - i)]);
    picks.resize(opt.n_coords);
  }

  const Eval base = opt.kink_skip ? evaluate(loss, true) : Eval{};
  GradCheckReport rep;
  for (std::size_t pick : picks) {
    auto [pi, idx] = flat[pick];
    Parameter& p = params[pi];
    const double orig = p.value[idx];
    p.value[idx] = orig + opt.step;
    const Eval plus = evaluate(loss, opt.kink_skip);
    p.value[idx] = orig - opt.step;
    const Eval minus = evaluate(loss, opt.kink_skip);
    p.value[idx] = orig;

    CoordCheck c;
    c.param = p.name;
    c.index = idx;
    c.analytic = p.grad[idx];
    c.numeric = (plus.value - minus.value) / (2.0 * opt.step);
    c.rel_error = relative_error(c.analytic, c.numeric);
    c.skipped = opt.kink_skip && near_kink(base.relu_pre, plus.relu_pre, minus.relu_pre);
    if (c.skipped) {
      ++rep.skipped;
    } else {
      ++rep.checked;
      if (c.rel_error < opt.tolerance) ++rep.passed;
      rep.max_rel_error = std::max(rep.max_rel_error, c.rel_error);
    }
    rep.coords.push_back(std::move(c));
  }
  params.zero_grad();
  return rep;
}

}  // namespace meses
