// SPDX-License-Identifier: Apache-2.0
#include "prunekit/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace prunekit {

GradCheckReport grad_check(const std::function<double(const Tensor<double>&)>& f, const Tensor<double>& x,
                           const Tensor<double>& analytic, double tolerance) {
  if (analytic.shape() != x.shape()) {
    throw ShapeError("grad_check: analytic gradient " + to_string(analytic.shape()) + " vs input " + to_string(x.shape()));
  }
  GradCheckReport report;
  report.tolerance = tolerance;
  Tensor<double> probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double h = 1e-5 * std::max(1.0, std::abs(x[i]));
    probe[i] = x[i] + h;
    const double up = f(probe);
    probe[i] = x[i] - h;
    const double down = f(probe);
    probe[i] = x[i];
    const double numeric = (up - down) / (2.0 * h);
    const double a = analytic[i];
    const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-2});
    if (rel > report.max_rel_error || report.checked == 0) {
      report.max_rel_error = std::max(report.max_rel_error, rel);
      if (rel >= report.max_rel_error) report.worst_index = i;
    }
    ++report.checked;
  }
  report.passed = report.max_rel_error < tolerance;
  return report;
}

}  // namespace prunekit
