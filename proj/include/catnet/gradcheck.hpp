#pragma once

#include <functional>
#include <vector>

#include "catnet/tensor.hpp"

namespace catnet {

// Builds a scalar loss from an input tensor. During the analytic pass the
// input is registered on the graph; during numeric evaluation it is untracked
// and the same callable runs as plain arithmetic.
using ScalarFn = std::function<Tensor(Graph&, const Tensor&)>;

struct GradCheckResult {
  std::vector<double> analytic;
  std::vector<double> numeric;
  double max_rel_err = 0.0;
};

// Central differences with per-coordinate step eps * max(1, |x_i|). The
// relative error denominator is floored at 1e-3 so near-zero gradients are
// compared absolutely.
std::vector<double> numeric_gradient(const ScalarFn& f, const Tensor& x, double eps);

GradCheckResult gradient_check(const ScalarFn& f, const Tensor& x, double eps = 1e-5);

}  // namespace catnet
