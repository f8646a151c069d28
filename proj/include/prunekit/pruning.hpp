// SPDX-License-Identifier: Apache-2.0
//
// One-step global filter pruning: crucial-node selection, keep-mask plans,
// and structural application of a plan to a network and its parameters.
#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "prunekit/flops.hpp"
#include "prunekit/importance.hpp"
#include "prunekit/netspec.hpp"
#include "prunekit/params.hpp"

namespace prunekit {

enum class Strategy { beta, random, first_k, max_response };

std::string_view strategy_name(Strategy s);
Strategy parse_strategy(std::string_view name);

struct PruneTarget {
  enum class Kind { filter_fraction, flops_fraction, speedup };
  Kind kind = Kind::flops_fraction;
  double value = 0.0;

  static PruneTarget filters(double r) { return {Kind::filter_fraction, r}; }
  static PruneTarget flops(double f) { return {Kind::flops_fraction, f}; }
  static PruneTarget speed(double s) { return {Kind::speedup, s}; }

  /// Pruned-FLOPs fraction this target asks for (FLOPs kinds only).
  double flops_goal() const;
  void check() const;
  friend bool operator==(const PruneTarget&, const PruneTarget&) = default;
};

std::string_view target_kind_name(PruneTarget::Kind k);
PruneTarget::Kind parse_target_kind(std::string_view name);

struct LayerMask {
  std::string id;
  std::vector<bool> keep;

  std::size_t kept() const;
  bool all_kept() const { return kept() == keep.size(); }
  friend bool operator==(const LayerMask&, const LayerMask&) = default;
};

struct PruningPlan {
  std::vector<LayerMask> masks;  // one per conv, depth order
  TapSet crucial;
  PruneTarget target;
  Strategy strategy = Strategy::beta;
  std::uint64_t seed = 0;
  std::size_t floor = 1;

  const LayerMask* find(std::string_view id) const;
  bool is_identity() const;
  std::size_t removed() const;
  friend bool operator==(const PruningPlan&, const PruningPlan&) = default;
};

/// N reconstruction nodes ordered by depth: the final activation and the
/// N-1 best other eligible nodes. A node's score is the best score among the
/// convs it represents; ties go to the shallower node.
TapSet select_crucial(const NetworkSpec& spec, const std::vector<LayerScore>& scores, std::size_t n);

/// Convs whose filters must survive: those represented by a crucial node.
std::vector<std::size_t> crucial_convs(const NetworkSpec& spec, const TapSet& crucial);

/// Prunable convs that are not crucial; their filters form the global pool.
std::vector<std::size_t> pool_layers(const NetworkSpec& spec, const TapSet& crucial);

struct PlanOptions {
  PruneTarget target;
  Strategy strategy = Strategy::beta;
  std::uint64_t seed = 0;
  std::size_t floor = 1;
};

/// Builds keep-masks for every conv. `profile` is required for the beta
/// strategy and `params` for max-response. Throws ConfigError naming the
/// binding constraint when the target cannot be met.
PruningPlan build_plan(const NetworkSpec& spec, const ImportanceProfile* profile, const TapSet& crucial,
                       const PlanOptions& options, const ParamSet<float>* params = nullptr);

/// Identity plan (every filter kept).
PruningPlan identity_plan(const NetworkSpec& spec);

/// Checks masks against the spec: one mask per conv with the right length,
/// only prunable layers may drop filters, floors respected, crucial layers
/// intact.
void check_plan(const NetworkSpec& spec, const PruningPlan& plan);

/// Spec with the plan's filter counts (no parameters involved).
NetworkSpec pruned_spec(const NetworkSpec& spec, const PruningPlan& plan);

/// Removes dropped filters and the matching input channels, affine entries
/// and classifier columns. With `fold` set, |beta| of each prunable layer is
/// folded into its consumers' input weights.
template <typename T>
Model<T> apply_plan(const NetworkSpec& spec, const ParamSet<T>& params, const PruningPlan& plan,
                    const ImportanceProfile* fold = nullptr);

struct LayerPlanStats {
  std::string id;
  std::size_t total = 0;
  std::size_t kept = 0;
  double rate = 1.0;  // kept / total
  bool crucial = false;
  bool prunable = false;
};

struct PlanStats {
  std::vector<LayerPlanStats> layers;
  FlopsComparison flops;
};

PlanStats plan_stats(const PruningPlan& plan, const NetworkSpec& spec);

}  // namespace prunekit
