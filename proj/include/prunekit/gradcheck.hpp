// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>

#include "prunekit/tensor.hpp"

namespace prunekit {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
  double tolerance = 0.0;
  bool passed = false;
};

/// Compares `analytic` against central differences of the scalar function `f`
/// at `x`. The step for element i is 1e-5 * max(1, |x_i|). Relative error is
/// |a - n| / max(|a|, |n|, 1e-2) so near-zero entries are judged on an
/// absolute scale.
GradCheckReport grad_check(const std::function<double(const Tensor<double>&)>& f, const Tensor<double>& x,
                           const Tensor<double>& analytic, double tolerance);

}  // namespace prunekit
