// SPDX-License-Identifier: Apache-2.0
#include "prunekit/flops.hpp"

namespace prunekit {

std::uint64_t layer_flops(const LayerSpec& layer) {
  switch (layer.kind) {
    case LayerKind::conv:
      if (layer.out_shape.size() != 3) throw ConfigError("layer '" + layer.id + "' is not shape-annotated");
      return 2ULL * layer.out_channels * layer.out_shape[1] * layer.out_shape[2] * layer.in_channels * layer.kernel_h *
             layer.kernel_w;
    case LayerKind::linear:
      return 2ULL * layer.out_features * layer.in_features;
    default:
      return 0;
  }
}

FlopsReport flops_total(const NetworkSpec& spec) {
  if (!spec.validated) throw ConfigError("FLOPs accounting needs a validated spec");
  FlopsReport r;
  for (const auto& l : spec.layers) {
    const std::uint64_t f = layer_flops(l);
    r.per_layer.push_back({l.id, f});
    r.total += f;
  }
  return r;
}

FlopsComparison compare_flops(std::uint64_t original_total, std::uint64_t pruned_total) {
  if (original_total == 0 || pruned_total == 0) throw ConfigError("FLOPs comparison needs non-zero totals");
  FlopsComparison c;
  c.original_total = original_total;
  c.pruned_total = pruned_total;
  c.speedup = static_cast<double>(original_total) / static_cast<double>(pruned_total);
  c.pruned_pct = 1.0 - 1.0 / c.speedup;
  return c;
}

FlopsReport compare(const NetworkSpec& original, const NetworkSpec& pruned) {
  FlopsReport r = flops_total(pruned);
  r.comparison = compare_flops(flops_total(original).total, r.total);
  return r;
}

}  // namespace prunekit
