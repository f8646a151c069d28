// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "prunekit/tensor.hpp"

namespace prunekit {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct AdamState {
  std::uint64_t step = 0;
  Tensor<T> first_moment;
  Tensor<T> second_moment;

  AdamState() = default;
  explicit AdamState(const Shape& shape) : first_moment(shape), second_moment(shape) {}
};

/// One bias-corrected Adam update of `param` from its accumulated gradient.
/// Throws ShapeError when the state was created for a differently shaped
/// parameter. Frozen parameters are left untouched.
template <typename T>
void adam_step(Param<T>& param, AdamState<T>& state, const AdamConfig& config);

/// Adam over a named parameter collection; state is created lazily per name.
template <typename T>
class Adam {
 public:
  explicit Adam(AdamConfig config) : config_(config) {}

  void set_lr(double lr) { config_.lr = lr; }
  const AdamConfig& config() const noexcept { return config_; }

  template <typename ParamMap>
  void step(ParamMap& params) {
    for (auto& [name, param] : params) {
      if (!param.trainable) continue;
      auto it = states_.find(name);
      if (it == states_.end()) it = states_.emplace(name, AdamState<T>(param.value.shape())).first;
      adam_step(param, it->second, config_);
    }
  }

  void step(const std::string& name, Param<T>& param) {
    auto it = states_.find(name);
    if (it == states_.end()) it = states_.emplace(name, AdamState<T>(param.value.shape())).first;
    adam_step(param, it->second, config_);
  }

 private:
  AdamConfig config_;
  std::map<std::string, AdamState<T>> states_;
};

}  // namespace prunekit
