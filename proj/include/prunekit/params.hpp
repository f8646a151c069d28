// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>

#include "prunekit/netspec.hpp"
#include "prunekit/tensor.hpp"

namespace prunekit {

/// Parameters bound to a network, keyed "<layer>.weight", "<layer>.scale",
/// "<layer>.shift". Ordered by name so iteration is deterministic.
template <typename T>
using ParamSet = std::map<std::string, Param<T>>;

inline std::string weight_key(std::string_view layer) { return std::string(layer) + ".weight"; }
inline std::string scale_key(std::string_view layer) { return std::string(layer) + ".scale"; }
inline std::string shift_key(std::string_view layer) { return std::string(layer) + ".shift"; }

/// A network together with its parameters.
template <typename T>
struct Model {
  NetworkSpec spec;
  ParamSet<T> params;
};

/// Conv and linear weights drawn uniformly from +-sqrt(6 / fan_in); frozen
/// affine layers take the spec's scale/shift (default 1 / 0) and are not
/// trainable.
template <typename T>
ParamSet<T> init_params(const NetworkSpec& spec, std::uint64_t seed);

/// Throws ConfigError when a parameter is missing or mis-shaped for `spec`.
template <typename T>
void check_params(const NetworkSpec& spec, const ParamSet<T>& params);

template <typename T>
void zero_grads(ParamSet<T>& params) {
  for (auto& [name, p] : params) p.zero_grad();
}

template <typename To, typename From>
ParamSet<To> cast_params(const ParamSet<From>& params) {
  ParamSet<To> out;
  for (const auto& [name, p] : params) out.emplace(name, Param<To>(p.value.template cast<To>(), p.trainable));
  return out;
}

/// Marks every linear layer's weight as frozen (or trainable again).
template <typename T>
void set_classifier_trainable(const NetworkSpec& spec, ParamSet<T>& params, bool trainable) {
  for (const auto& l : spec.layers) {
    if (l.kind == LayerKind::linear) params.at(weight_key(l.id)).trainable = trainable;
  }
}

/// FNV-1a over the raw bytes of every value tensor, in key order.
std::uint64_t checksum(const ParamSet<float>& params);
std::uint64_t checksum(const ParamSet<double>& params);

}  // namespace prunekit
