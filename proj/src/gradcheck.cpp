#include "catnet/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace catnet {

namespace {

double scalar_eval(const ScalarFn& f, const Tensor& x) {
  Graph g;
  Tensor loss = f(g, x);
  if (loss.size() != 1) throw RankError("gradient check requires a scalar-valued function");
  return loss.at(0);
}

}  // namespace

std::vector<double> numeric_gradient(const ScalarFn& f, const Tensor& x, double eps) {
  const auto& xv = x.values();
  std::vector<double> grad(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const double step = eps * std::max(1.0, std::fabs(xv[i]));
    std::vector<double> lo = xv, hi = xv;
    hi[i] += step;
    lo[i] -= step;
    const double fhi = scalar_eval(f, Tensor::from_values(x.shape(), std::move(hi)));
    const double flo = scalar_eval(f, Tensor::from_values(x.shape(), std::move(lo)));
    grad[i] = (fhi - flo) / (2.0 * step);
  }
  return grad;
}

GradCheckResult gradient_check(const ScalarFn& f, const Tensor& x, double eps) {
  GradCheckResult r;

  Graph g;
  Tensor xt = x.detached();
  Tensor tracked = g.param(xt);
  Tensor loss = f(g, tracked);
  if (loss.size() != 1) throw RankError("gradient check requires a scalar-valued function");
  g.backward(loss);
  r.analytic = xt.grad();

  r.numeric = numeric_gradient(f, x, eps);

  for (std::size_t i = 0; i < r.analytic.size(); ++i) {
    const double denom = std::max({std::fabs(r.analytic[i]), std::fabs(r.numeric[i]), 1e-3});
    r.max_rel_err = std::max(r.max_rel_err, std::fabs(r.analytic[i] - r.numeric[i]) / denom);
  }
  return r;
}

}  // namespace catnet
