// SPDX-License-Identifier: Apache-2.0
#include "prunekit/params.hpp"

#include <cmath>
#include <cstring>

#include "prunekit/random.hpp"

namespace prunekit {

template <typename T>
ParamSet<T> init_params(const NetworkSpec& spec, std::uint64_t seed) {
  if (!spec.validated) throw ConfigError("init_params needs a validated spec");
  Rng rng(seed);
  ParamSet<T> params;
  for (const auto& l : spec.layers) {
    if (l.kind == LayerKind::conv || l.kind == LayerKind::linear) {
      const Shape shape = l.kind == LayerKind::conv ? Shape{l.out_channels, l.in_channels, l.kernel_h, l.kernel_w}
                                                    : Shape{l.out_features, l.in_features};
      const std::size_t fan_in = numel(shape) / shape[0];
      const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
      Tensor<T> w(shape);
      for (auto& v : w.data()) v = static_cast<T>(rng.uniform(-bound, bound));
      params.emplace(weight_key(l.id), Param<T>(std::move(w)));
    } else if (l.kind == LayerKind::frozen_affine) {
      const std::size_t c = l.out_shape.at(0);
      Tensor<T> scale(Shape{c}, T{1});
      Tensor<T> shift(Shape{c}, T{0});
      for (std::size_t i = 0; i < l.scale.size(); ++i) scale[i] = static_cast<T>(l.scale[i]);
      for (std::size_t i = 0; i < l.shift.size(); ++i) shift[i] = static_cast<T>(l.shift[i]);
      params.emplace(scale_key(l.id), Param<T>(std::move(scale), false));
      params.emplace(shift_key(l.id), Param<T>(std::move(shift), false));
    }
  }
  return params;
}

template <typename T>
void check_params(const NetworkSpec& spec, const ParamSet<T>& params) {
  auto require = [&](const std::string& key, const Shape& shape) {
    auto it = params.find(key);
    if (it == params.end()) throw ConfigError("missing parameter '" + key + "'");
    if (it->second.value.shape() != shape) {
      throw ConfigError("parameter '" + key + "' has shape " + to_string(it->second.value.shape()) + ", expected " +
                        to_string(shape));
    }
  };
  for (const auto& l : spec.layers) {
    if (l.kind == LayerKind::conv) {
      require(weight_key(l.id), {l.out_channels, l.in_channels, l.kernel_h, l.kernel_w});
    } else if (l.kind == LayerKind::linear) {
      require(weight_key(l.id), {l.out_features, l.in_features});
    } else if (l.kind == LayerKind::frozen_affine) {
      require(scale_key(l.id), {l.out_shape.at(0)});
      require(shift_key(l.id), {l.out_shape.at(0)});
    }
  }
}

namespace {

template <typename T>
std::uint64_t fnv1a(const ParamSet<T>& params) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto& [name, p] : params) {
    mix(name.data(), name.size());
    mix(p.value.data().data(), p.value.size() * sizeof(T));
  }
  return h;
}

}  // namespace

std::uint64_t checksum(const ParamSet<float>& params) { return fnv1a(params); }
std::uint64_t checksum(const ParamSet<double>& params) { return fnv1a(params); }

template ParamSet<float> init_params<float>(const NetworkSpec&, std::uint64_t);
template ParamSet<double> init_params<double>(const NetworkSpec&, std::uint64_t);
template void check_params<float>(const NetworkSpec&, const ParamSet<float>&);
template void check_params<double>(const NetworkSpec&, const ParamSet<double>&);

}  // namespace prunekit
