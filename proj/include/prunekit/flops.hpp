// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "prunekit/netspec.hpp"

namespace prunekit {

struct LayerFlops {
  std::string id;
  std::uint64_t flops = 0;
};

struct FlopsComparison {
  std::uint64_t original_total = 0;
  std::uint64_t pruned_total = 0;
  double speedup = 1.0;     // original / pruned
  double pruned_pct = 0.0;  // 1 - 1/speedup, as a fraction in [0, 1)
};

struct FlopsReport {
  std::vector<LayerFlops> per_layer;
  std::uint64_t total = 0;
  std::optional<FlopsComparison> comparison;
};

/// One multiply-accumulate counts as 2 FLOPs. conv: 2*Cout*Hout*Wout*Cin*M*K,
/// linear: 2*O*D, everything else 0. Throws ConfigError for an unvalidated spec.
std::uint64_t layer_flops(const LayerSpec& layer);
FlopsReport flops_total(const NetworkSpec& spec);
FlopsComparison compare_flops(std::uint64_t original_total, std::uint64_t pruned_total);
/// Report for `pruned` with the comparison against `original` filled in.
FlopsReport compare(const NetworkSpec& original, const NetworkSpec& pruned);

}  // namespace prunekit
