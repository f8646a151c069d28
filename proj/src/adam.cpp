// SPDX-License-Identifier: Apache-2.0
#include "prunekit/adam.hpp"

#include <cmath>

namespace prunekit {

template <typename T>
void adam_step(Param<T>& param, AdamState<T>& state, const AdamConfig& config) {
  if (!param.trainable) return;
  const Shape& shape = param.value.shape();
  if (state.first_moment.shape() != shape || state.second_moment.shape() != shape || param.grad.shape() != shape) {
    throw ShapeError("adam state " + to_string(state.first_moment.shape()) + " does not match parameter " +
                     to_string(shape));
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(config.beta1, t);
  const double bc2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t i = 0; i < param.value.size(); ++i) {
    const double g = param.grad[i];
    const double m = config.beta1 * state.first_moment[i] + (1.0 - config.beta1) * g;
    const double v = config.beta2 * state.second_moment[i] + (1.0 - config.beta2) * g * g;
    state.first_moment[i] = static_cast<T>(m);
    state.second_moment[i] = static_cast<T>(v);
    const double update = config.lr * (m / bc1) / (std::sqrt(v / bc2) + config.eps);
    param.value[i] = static_cast<T>(param.value[i] - update);
  }
}

template void adam_step<float>(Param<float>&, AdamState<float>&, const AdamConfig&);
template void adam_step<double>(Param<double>&, AdamState<double>&, const AdamConfig&);

}  // namespace prunekit
