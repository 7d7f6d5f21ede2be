#include "sagvit/parameter.hpp"

#include <algorithm>
#include <cmath>

namespace sagvit {

Tensor ParameterStore::create(const std::string& name, Shape shape, Init init, std::size_t fan_in,
                              std::size_t fan_out) {
  Tensor t(std::move(shape));
  auto& v = t.values();
  switch (init) {
    case Init::zeros:
      break;
    case Init::ones:
      v.setOnes();
      break;
    case Init::xavier_uniform: {
      const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
      std::uniform_real_distribution<double> dist(-limit, limit);
      for (auto& x : v) x = dist(rng_);
      break;
    }
    case Init::he_normal: {
      std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
      for (auto& x : v) x = dist(rng_);
      break;
    }
    case Init::normal_002: {
      std::normal_distribution<double> dist(0.0, 0.02);
      for (auto& x : v) x = dist(rng_);
      break;
    }
  }
  return add(name, std::move(t));
}

Tensor ParameterStore::add(const std::string& name, Tensor tensor) {
  if (contains(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  tensor.set_requires_grad(true);
  params_.push_back({name, tensor});
  return tensor;
}

bool ParameterStore::contains(const std::string& name) const {
  return std::any_of(params_.begin(), params_.end(), [&](const Parameter& p) { return p.name == name; });
}

const Parameter& ParameterStore::get(const std::string& name) const {
  for (const auto& p : params_) {
    if (p.name == name) return p;
  }
  throw ContractError("no parameter named '" + name + "'");
}

Parameter& ParameterStore::get(const std::string& name) {
  return const_cast<Parameter&>(static_cast<const ParameterStore&>(*this).get(name));
}

std::size_t ParameterStore::element_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.size();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

void ParameterStore::copy_values_from(const ParameterStore& other) {
  for (auto& p : params_) {
    const auto& src = other.get(p.name).tensor;
    if (src.shape() != p.tensor.shape()) {
      throw DimensionError("parameter '" + p.name + "' shape " + shape_string(p.tensor.shape()) + " vs " +
                           shape_string(src.shape()));
    }
    p.tensor.values() = src.values();
  }
}

}  // namespace sagvit
