#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mimnet/tensor.hpp"

namespace mimnet {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t coordinates = 0;
  // Location of the worst coordinate, for diagnostics.
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

/// Compares backward() against central differences (f(x+eps) - f(x-eps)) / 2eps
/// for every coordinate of every input. The relative error of a coordinate is
/// |a - n| / max(|a|, |n|, floor), so gradients smaller than `floor` are
/// compared absolutely. `loss` must rebuild the graph from the current input
/// values on each call; inputs must be leaves requiring grad.
GradCheckResult grad_check(const std::function<Tensor<double>()>& loss, std::vector<Tensor<double>> inputs,
                           double eps = 1e-5, double floor = 1e-8);

}  // namespace mimnet
