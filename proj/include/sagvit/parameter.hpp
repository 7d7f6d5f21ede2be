#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "sagvit/tensor.hpp"

namespace sagvit {

struct Parameter {
  std::string name;
  Tensor tensor;
};

enum class Init { zeros, ones, xavier_uniform, he_normal, normal_002 };

// Ordered, name-unique collection of learnable tensors.
class ParameterStore {
 public:
  explicit ParameterStore(std::uint64_t seed = 0) : rng_(seed) {}

  // Creates and registers a parameter; `fan_in`/`fan_out` drive the scaled inits.
  Tensor create(const std::string& name, Shape shape, Init init, std::size_t fan_in = 1, std::size_t fan_out = 1);
  // Registers an existing tensor (marked requires_grad).
  Tensor add(const std::string& name, Tensor tensor);

  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }
  std::size_t size() const { return params_.size(); }
  bool contains(const std::string& name) const;
  const Parameter& get(const std::string& name) const;
  Parameter& get(const std::string& name);

  std::size_t element_count() const;
  void zero_grad();

  // Copies values (not gradients) from `other`, matched by name.
  void copy_values_from(const ParameterStore& other);

 private:
  std::vector<Parameter> params_;
  std::mt19937_64 rng_;
};

}  // namespace sagvit
