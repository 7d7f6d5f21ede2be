#pragma once

#include <cmath>
#include <cstring>
#include <random>
#include <string>
#include <vector>

#include "sagvit/tensor.hpp"
#include "sagvit/parameter.hpp"

namespace sagvit::testing {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor t(std::move(shape));
  for (Eigen::Index i = 0; i < t.values().size(); ++i) t.values()[i] = dist(rng);
  return t;
}

inline Parameter random_param(const std::string& name, Shape shape, std::mt19937_64& rng, double lo = -1.0,
                              double hi = 1.0) {
  Tensor t = random_tensor(std::move(shape), rng, lo, hi);
  t.set_requires_grad(true);
  return {name, t};
}

inline double max_abs_diff(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size()) return INFINITY;
  return a.size() == 0 ? 0.0 : (a - b).cwiseAbs().maxCoeff();
}

inline bool bitwise_equal(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size()) return false;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    if (std::memcmp(&a[i], &b[i], sizeof(double)) != 0) return false;
  }
  return true;
}

}  // namespace sagvit::testing
