#include "mimnet/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace mimnet {
namespace {

double evaluate(const std::function<Tensor<double>()>& loss) {
  const double v = loss().item();
  if (!std::isfinite(v)) throw NumericError("grad_check: loss evaluated to a non-finite value");
  return v;
}

}  // namespace

GradCheckResult grad_check(const std::function<Tensor<double>()>& loss, std::vector<Tensor<double>> inputs,
                           double eps, double floor) {
  for (auto& in : inputs) {
    if (!in.is_leaf() || !in.requires_grad()) {
      throw ContractError("grad_check: inputs must be leaves with requires_grad set");
    }
    in.zero_grad();
  }
  const Tensor<double> root = loss();
  if (!std::isfinite(root.item())) throw NumericError("grad_check: loss evaluated to a non-finite value");
  root.backward();

  GradCheckResult result;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const std::vector<double> analytic = inputs[k].grad();
    auto values = inputs[k].mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + eps;
      const double up = evaluate(loss);
      values[i] = saved - eps;
      const double down = evaluate(loss);
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), floor});
      const double err = std::abs(analytic[i] - numeric) / denom;
      ++result.coordinates;
      if (err > result.max_relative_error || result.coordinates == 1) {
        result.max_relative_error = std::max(result.max_relative_error, err);
        result.worst_input = k;
        result.worst_index = i;
        result.worst_analytic = analytic[i];
        result.worst_numeric = numeric;
      }
    }
  }
  for (auto& in : inputs) in.zero_grad();
  return result;
}

}  // namespace mimnet
