#pragma once

// Central finite-difference oracle for tape gradients.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "meses/autograd.hpp"
#include "meses/params.hpp"

namespace meses {

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  std::size_t n_coords = 500;
  std::uint64_t seed = 0;
  /// Skip coordinates whose ±step perturbation moves a ReLU pre-activation
  /// across its kink.
  bool kink_skip = true;
};

struct CoordCheck {
  std::string param;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
  bool skipped = false;
};

struct GradCheckReport {
  std::vector<CoordCheck> coords;
  std::size_t checked = 0;
  std::size_t skipped = 0;
  std::size_t passed = 0;
  double max_rel_error = 0.0;
  /// Fraction of non-skipped coordinates under tolerance.
  double pass_rate() const { return checked ? static_cast<double>(passed) / static_cast<double>(checked) : 1.0; }
};

/// Builds the scalar loss on a fresh tape. Must be a deterministic function
/// of the parameter values.
using LossBuilder = std::function<ag::Var(ag::Tape&)>;

/// |a - n| / (|a| + |n| + 1e-12)
double relative_error(double analytic, double numeric);

/// Samples coordinates uniformly over every value in `params` (without
/// replacement when n_coords < total) and compares the tape gradient with
/// (f(θ+h e_i) − f(θ−h e_i)) / 2h. Parameter values are restored exactly.
GradCheckReport grad_check(ParamRegistry& params, const LossBuilder& loss, const GradCheckOptions& opt);

}  // namespace meses
