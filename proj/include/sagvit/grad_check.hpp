#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "sagvit/parameter.hpp"

namespace sagvit {

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;  // max |analytic - numeric| / max(1, |numeric|)
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error() const;
  const GradCheckEntry& worst() const;
};

struct GradCheckOptions {
  double step = 1e-5;
  // 0 checks every element; otherwise an evenly strided subset of this size per parameter.
  std::size_t max_elements_per_param = 0;
};

// Compares tape gradients of `loss_fn` against central finite differences.
// `loss_fn` must be deterministic and return a scalar tensor.
GradCheckReport grad_check(const std::function<Tensor()>& loss_fn, std::span<Parameter> params,
                           GradCheckOptions options = {});

}  // namespace sagvit
