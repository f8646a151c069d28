// SPDX-License-Identifier: Apache-2.0
//
// Channel importance learning. Every scorable conv gets a vector beta, one
// entry per filter; its activation output is multiplied channel-wise by
// |beta| and beta is trained against cross-entropy plus lambda * ||beta||_1
// while the network weights stay fixed.
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "prunekit/dataset.hpp"
#include "prunekit/graph.hpp"

namespace prunekit {

struct LayerImportance {
  std::string id;  // conv layer id
  std::vector<double> beta;
  double mean_abs = 1.0;  // mean |beta| when the profile was produced
};

struct ImportanceProfile {
  double lambda = 1.0;
  std::size_t epochs = 0;
  double lr = 0.0;
  std::size_t batch_size = 0;
  std::uint64_t seed = 0;
  std::uint64_t steps = 0;
  std::vector<double> epoch_loss;
  std::vector<LayerImportance> layers;  // depth order

  const LayerImportance* find(std::string_view id) const;
  std::size_t channel_count() const;
  /// Mean |beta| over every channel of every layer.
  double mean_abs_beta() const;
};

/// All-ones beta for every scorable conv of `spec`.
ImportanceProfile initial_profile(const NetworkSpec& spec);

/// Throws ConfigError when a prunable conv is missing or a beta length does
/// not match the layer's filter count.
void check_profile(const NetworkSpec& spec, const ImportanceProfile& profile);

/// activation node -> |beta|.
template <typename T>
ChannelScaling<T> profile_scaling(const NetworkSpec& spec, const ImportanceProfile& profile);

template <typename T>
Tensor<T> scaled_forward(const NetworkSpec& spec, const ParamSet<T>& params, const ImportanceProfile& profile,
                         const Tensor<T>& input);

/// lambda * sum |beta|.
double l1_penalty(const ImportanceProfile& profile);

struct ImportanceLoss {
  double value = 0.0;
  double cross_entropy = 0.0;
  double penalty = 0.0;
};

template <typename T>
ImportanceLoss importance_loss(const Tensor<T>& logits, std::span<const int> labels, const ImportanceProfile& profile);

/// Loss on one batch and d(loss)/d(beta) per layer, in profile order. The
/// subgradient of |x| at 0 is 0.
template <typename T>
std::vector<std::vector<double>> importance_gradient(const NetworkSpec& spec, const ParamSet<T>& params,
                                                     const ImportanceProfile& profile, const Tensor<T>& images,
                                                     std::span<const int> labels, ImportanceLoss* loss = nullptr);

struct ImportanceOptions {
  double lambda = 1.0;
  std::size_t epochs = 5;
  double lr = 1e-2;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
};

/// Adam on beta over the whole training set; weights are read only.
ImportanceProfile learn_importance(const NetworkSpec& spec, const ParamSet<float>& params, const Dataset& data,
                                   const ImportanceOptions& options);

enum class ScoreReduction { mean, sum };

struct LayerScore {
  std::string id;
  double score = 0.0;
  std::size_t rank = 0;  // 1 = highest
};

/// Per-layer mean (or sum) of |beta|, in profile order, with descending
/// ranks; ties go to the shallower layer.
std::vector<LayerScore> layer_scores(const ImportanceProfile& profile, ScoreReduction reduction = ScoreReduction::mean);

}  // namespace prunekit
