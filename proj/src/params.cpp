#include "meses/params.hpp"

#include <cmath>
#include <stdexcept>

namespace meses {

std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

Parameter& ParamRegistry::add(const std::string& name, Tensor init) {
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  index_[name] = params_.size();
  params_.push_back(std::make_unique<Parameter>(name, std::move(init)));
  return *params_.back();
}

Parameter& ParamRegistry::add_uniform(const std::string& name, Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Tensor t(std::move(shape));
  for (auto& x : t.values()) x = uniform(rng, -bound, bound);
  return add(name, std::move(t));
}

Parameter& ParamRegistry::add_constant(const std::string& name, Shape shape, double value) {
  return add(name, Tensor(std::move(shape), value));
}

Parameter& ParamRegistry::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
  return *params_[it->second];
}

const Parameter& ParamRegistry::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
  return *params_[it->second];
}

std::size_t ParamRegistry::total_values() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value.size();
  return n;
}

std::vector<Parameter*> ParamRegistry::with_prefix(const std::string& prefix) {
  std::vector<Parameter*> out;
  for (auto& p : params_)
    if (p->name.compare(0, prefix.size(), prefix) == 0) out.push_back(p.get());
  return out;
}

std::vector<Parameter*> ParamRegistry::all() { return with_prefix(""); }

void ParamRegistry::zero_grad() {
  for (auto& p : params_) p->grad.fill(0.0);
}

void ParamRegistry::reset_optimizer_state() {
  for (auto& p : params_) {
    p->m.fill(0.0);
    p->v.fill(0.0);
  }
}

}  // namespace meses
