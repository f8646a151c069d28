// SPDX-License-Identifier: Apache-2.0
// Shared helpers for the unit and acceptance tests.
#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "prunekit/netspec.hpp"
#include "prunekit/params.hpp"
#include "prunekit/pruning.hpp"
#include "prunekit/random.hpp"

namespace prunekit::testing {

template <typename T>
Tensor<T> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

inline std::vector<double> random_vector(std::size_t n, Rng& rng, double lo, double hi) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

/// Small random conv net: 2-4 conv stages (optional frozen affine, relu,
/// optional pooling), an optional residual block, and a one- or two-layer
/// classifier.
inline NetworkSpec random_spec(Rng& rng, bool allow_residual = true) {
  const std::size_t channels = 1 + rng.below(3);
  const std::size_t extent = rng.below(2) ? 8 : 4;
  const std::size_t classes = 2 + rng.below(3);
  SpecBuilder b("random", {channels, extent, extent}, classes);
  const std::size_t stages = 2 + rng.below(3);
  std::size_t h = extent;
  std::size_t width = 2 + rng.below(4);
  std::string prev;
  for (std::size_t s = 0; s < stages; ++s) {
    const std::string n = std::to_string(s + 1);
    const std::size_t k = rng.below(2) ? 3 : 1;
    width = 2 + rng.below(4);
    b.conv("conv" + n, width, k, 1, k / 2);
    if (rng.below(2)) b.affine("bn" + n, random_vector(width, rng, 0.5, 1.5), random_vector(width, rng, -0.2, 0.2));
    b.relu("relu" + n);
    prev = "relu" + n;
    if (h >= 4 && rng.below(3) == 0) {
      b.maxpool("pool" + n);
      prev = "pool" + n;
      h /= 2;
    }
  }
  if (allow_residual && rng.below(2)) {
    b.conv("resa", width, 3, 1, 1, true, {prev}).relu("resa_relu");
    b.conv("resb", width, 3, 1, 1, false).affine("resb_bn");
    b.add("res", {"resb_bn", prev}).relu("res_relu");
    prev = "res_relu";
  }
  b.flatten("flatten", {prev});
  if (rng.below(2)) b.linear("fc1", 4 + rng.below(4)).relu("relu_fc1");
  b.linear("fc_out", classes);
  return b.build();
}

/// Random plan that drops filters only where allowed, keeping at least one
/// filter per layer.
inline PruningPlan random_plan(const NetworkSpec& spec, Rng& rng, const TapSet& crucial = {}) {
  PruningPlan plan = identity_plan(spec);
  plan.crucial = crucial;
  const auto pool = pool_layers(spec, crucial);
  for (auto& m : plan.masks) {
    const std::size_t idx = spec.index_of(m.id);
    if (std::find(pool.begin(), pool.end(), idx) == pool.end()) continue;
    for (std::size_t c = 0; c < m.keep.size(); ++c) m.keep[c] = rng.below(2) == 0;
    m.keep[rng.below(m.keep.size())] = true;
  }
  return plan;
}

/// Indices of the layers that read layer `id`.
inline std::vector<std::size_t> readers(const NetworkSpec& spec, const std::string& id) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& in = spec.layers[i].inputs;
    if (std::find(in.begin(), in.end(), id) != in.end()) out.push_back(i);
  }
  return out;
}

// Zeroes, in the original network, every weight that reads a dropped filter:
// consumer conv input channels and flattened classifier columns.
template <typename T>
ParamSet<T> zero_masked(const NetworkSpec& spec, ParamSet<T> params, const PruningPlan& plan) {
  for (const auto& m : plan.masks) {
    std::vector<std::pair<std::string, std::size_t>> frontier{{m.id, 1}};
    while (!frontier.empty()) {
      auto [id, spatial] = frontier.back();
      frontier.pop_back();
      for (std::size_t r : readers(spec, id)) {
        const auto& l = spec.layers[r];
        if (l.kind == LayerKind::conv || l.kind == LayerKind::linear) {
          auto& w = params.at(weight_key(l.id)).value;
          const std::size_t rows = w.dim(0), cols = w.dim(1), inner = w.size() / (rows * cols);
          for (std::size_t c = 0; c < m.keep.size(); ++c) {
            if (m.keep[c]) continue;
            for (std::size_t row = 0; row < rows; ++row) {
              for (std::size_t s = 0; s < spatial; ++s) {
                const std::size_t col = c * spatial + s;
                for (std::size_t k = 0; k < inner; ++k) w[(row * cols + col) * inner + k] = T{0};
              }
            }
          }
        } else if (l.kind == LayerKind::flatten) {
          const Shape& in = spec.layer(id).out_shape;
          frontier.push_back({l.id, in[1] * in[2]});
        } else {
          frontier.push_back({l.id, spatial});
        }
      }
    }
  }
  return params;
}

}  // namespace prunekit::testing
