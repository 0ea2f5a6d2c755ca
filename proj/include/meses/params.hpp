#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "meses/rng.hpp"
#include "meses/tensor.hpp"

namespace meses {

/// A named trainable tensor with its gradient and AdamW moment slots.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  Tensor m;
  Tensor v;

  Parameter(std::string n, Tensor init)
      : name(std::move(n)), value(std::move(init)), grad(value.shape()), m(value.shape()), v(value.shape()) {}
};

/// Owns every parameter of a model, keyed by module path ("backbone.0.feat.wq").
/// Iteration follows registration order. Addresses are stable.
class ParamRegistry {
 public:
  ParamRegistry() = default;
  ParamRegistry(const ParamRegistry&) = delete;
  ParamRegistry& operator=(const ParamRegistry&) = delete;

  Parameter& add(const std::string& name, Tensor init);
  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)).
  Parameter& add_uniform(const std::string& name, Shape shape, std::size_t fan_in, Rng& rng);
  Parameter& add_constant(const std::string& name, Shape shape, double value);

  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t size() const { return params_.size(); }
  std::size_t total_values() const;
  Parameter& operator[](std::size_t i) { return *params_[i]; }
  const Parameter& operator[](std::size_t i) const { return *params_[i]; }

  /// Parameters whose name starts with `prefix`.
  std::vector<Parameter*> with_prefix(const std::string& prefix);
  std::vector<Parameter*> all();

  void zero_grad();
  void reset_optimizer_state();

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace meses
