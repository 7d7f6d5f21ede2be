#include "sagvit/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace sagvit {

double GradCheckReport::max_rel_error() const {
  double worst_err = 0.0;
  for (const auto& e : entries) worst_err = std::max(worst_err, e.max_rel_error);
  return worst_err;
}

const GradCheckEntry& GradCheckReport::worst() const {
  if (entries.empty()) throw ContractError("empty grad-check report");
  return *std::max_element(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
    return a.max_rel_error < b.max_rel_error;
  });
}

GradCheckReport grad_check(const std::function<Tensor()>& loss_fn, std::span<Parameter> params,
                           GradCheckOptions options) {
  for (auto& p : params) p.tensor.clear_grad();
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = loss_fn();
    tape.backward(loss);
  }

  auto evaluate = [&]() { return loss_fn().item(); };

  GradCheckReport report;
  for (auto& p : params) {
    GradCheckEntry entry;
    entry.name = p.name;
    const std::size_t n = p.tensor.size();
    const Eigen::VectorXd analytic = p.tensor.has_grad() ? p.tensor.grad() : Eigen::VectorXd::Zero(n);
    std::vector<std::size_t> indices;
    if (options.max_elements_per_param == 0 || n <= options.max_elements_per_param) {
      for (std::size_t i = 0; i < n; ++i) indices.push_back(i);
    } else {
      for (std::size_t j = 0; j < options.max_elements_per_param; ++j) {
        indices.push_back(j * n / options.max_elements_per_param);
      }
    }
    auto& values = p.tensor.values();
    for (std::size_t i : indices) {
      const auto ii = static_cast<Eigen::Index>(i);
      const double saved = values[ii];
      values[ii] = saved + options.step;
      const double plus = evaluate();
      values[ii] = saved - options.step;
      const double minus = evaluate();
      values[ii] = saved;
      const double numeric = (plus - minus) / (2.0 * options.step);
      const double err = std::abs(analytic[ii] - numeric) / std::max(1.0, std::abs(numeric));
      if (err > entry.max_rel_error || i == indices.front()) {
        entry.max_rel_error = std::max(err, entry.max_rel_error);
        entry.worst_index = i;
        entry.analytic = analytic[ii];
        entry.numeric = numeric;
      }
    }
    report.entries.push_back(entry);
  }
  return report;
}

}  // namespace sagvit
