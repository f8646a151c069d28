// SPDX-License-Identifier: Apache-2.0
#include "prunekit/pruning.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <set>

#include "prunekit/random.hpp"

namespace prunekit {

std::string_view strategy_name(Strategy s) {
  switch (s) {
    case Strategy::beta: return "beta";
    case Strategy::random: return "random";
    case Strategy::first_k: return "first-k";
    case Strategy::max_response: return "max-response";
  }
  return "?";
}

Strategy parse_strategy(std::string_view name) {
  for (Strategy s : {Strategy::beta, Strategy::random, Strategy::first_k, Strategy::max_response}) {
    if (strategy_name(s) == name) return s;
  }
  throw ConfigError("unknown selection strategy '" + std::string(name) + "' (beta, random, first-k, max-response)");
}

std::string_view target_kind_name(PruneTarget::Kind k) {
  switch (k) {
    case PruneTarget::Kind::filter_fraction: return "filters";
    case PruneTarget::Kind::flops_fraction: return "flops";
    case PruneTarget::Kind::speedup: return "speedup";
  }
  return "?";
}

PruneTarget::Kind parse_target_kind(std::string_view name) {
  for (auto k : {PruneTarget::Kind::filter_fraction, PruneTarget::Kind::flops_fraction, PruneTarget::Kind::speedup}) {
    if (target_kind_name(k) == name) return k;
  }
  throw ConfigError("unknown target kind '" + std::string(name) + "' (filters, flops, speedup)");
}

double PruneTarget::flops_goal() const {
  switch (kind) {
    case Kind::flops_fraction: return value;
    case Kind::speedup: return 1.0 - 1.0 / value;
    case Kind::filter_fraction: break;
  }
  throw ConfigError("filter-fraction target has no FLOPs goal");
}

void PruneTarget::check() const {
  if (!std::isfinite(value)) throw ConfigError("pruning target must be finite");
  if (kind == Kind::speedup) {
    if (value < 1.0) throw ConfigError("speed-up target must be >= 1, got " + std::to_string(value));
  } else if (value < 0.0 || value >= 1.0) {
    throw ConfigError("pruning fraction must lie in [0, 1), got " + std::to_string(value));
  }
}

std::size_t LayerMask::kept() const { return static_cast<std::size_t>(std::count(keep.begin(), keep.end(), true)); }

const LayerMask* PruningPlan::find(std::string_view id) const {
  for (const auto& m : masks) {
    if (m.id == id) return &m;
  }
  return nullptr;
}

bool PruningPlan::is_identity() const {
  return std::all_of(masks.begin(), masks.end(), [](const LayerMask& m) { return m.all_kept(); });
}

std::size_t PruningPlan::removed() const {
  std::size_t n = 0;
  for (const auto& m : masks) n += m.keep.size() - m.kept();
  return n;
}

// --- crucial nodes ----------------------------------------------------------

TapSet select_crucial(const NetworkSpec& spec, const std::vector<LayerScore>& scores, std::size_t n) {
  if (n == 0) throw ConfigError("crucial-node count must be at least 1");
  std::map<std::size_t, double> node_score;  // keyed by node index, so depth ordered
  for (const auto& s : scores) {
    const std::size_t node = tap_node_for(spec, spec.index_of(s.id));
    auto [it, fresh] = node_score.emplace(node, s.score);
    if (!fresh) it->second = std::max(it->second, s.score);
  }
  if (n > node_score.size()) {
    throw ConfigError("asked for " + std::to_string(n) + " crucial nodes but only " +
                      std::to_string(node_score.size()) + " are eligible");
  }
  // The final activation always takes one of the N places.
  const std::size_t last = final_activation(spec);
  std::vector<std::pair<std::size_t, double>> ranked;
  for (const auto& entry : node_score) {
    if (entry.first != last) ranked.push_back(entry);
  }
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::set<std::size_t> chosen{last};
  for (std::size_t i = 0; i + 1 < n && i < ranked.size(); ++i) chosen.insert(ranked[i].first);
  TapSet out;
  for (std::size_t idx : chosen) out.ids.push_back(spec.layers[idx].id);
  return out;
}

std::vector<std::size_t> crucial_convs(const NetworkSpec& spec, const TapSet& crucial) {
  check_taps(spec, crucial);
  std::vector<std::size_t> out;
  for (std::size_t idx : scorable_convs(spec)) {
    if (crucial.contains(spec.layers[tap_node_for(spec, idx)].id)) out.push_back(idx);
  }
  return out;
}

std::vector<std::size_t> pool_layers(const NetworkSpec& spec, const TapSet& crucial) {
  const auto keep = crucial_convs(spec, crucial);
  std::vector<std::size_t> out;
  for (std::size_t idx : prunable_convs(spec)) {
    if (std::find(keep.begin(), keep.end(), idx) == keep.end()) out.push_back(idx);
  }
  return out;
}

// --- plan construction ------------------------------------------------------

PruningPlan identity_plan(const NetworkSpec& spec) {
  PruningPlan plan;
  for (const auto& l : spec.layers) {
    if (l.kind == LayerKind::conv) plan.masks.push_back({l.id, std::vector<bool>(l.out_channels, true)});
  }
  plan.target = PruneTarget::filters(0.0);
  return plan;
}

namespace {

struct Candidate {
  std::size_t layer;    // position in the pool-layer list
  std::size_t channel;
  double key;           // removal priority, smaller goes first
};

std::size_t mask_position(const PruningPlan& plan, std::string_view id) {
  for (std::size_t i = 0; i < plan.masks.size(); ++i) {
    if (plan.masks[i].id == id) return i;
  }
  throw ConfigError("plan has no mask for '" + std::string(id) + "'");
}

double pruned_fraction(const NetworkSpec& spec, std::uint64_t original_total, const PruningPlan& plan) {
  return compare_flops(original_total, flops_total(pruned_spec(spec, plan)).total).pruned_pct;
}

/// Largest-remainder split of `total` removals over layers in proportion to
/// their sizes, capped at size - floor per layer.
std::vector<std::size_t> apportion(const std::vector<std::size_t>& sizes, std::size_t floor, std::size_t total) {
  const std::size_t pool = std::accumulate(sizes.begin(), sizes.end(), std::size_t{0});
  std::vector<std::size_t> out(sizes.size(), 0);
  if (pool == 0 || total == 0) return out;
  std::vector<std::size_t> cap(sizes.size());
  for (std::size_t i = 0; i < sizes.size(); ++i) cap[i] = sizes[i] > floor ? sizes[i] - floor : 0;
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    const double exact = static_cast<double>(total) * static_cast<double>(sizes[i]) / static_cast<double>(pool);
    out[i] = std::min(cap[i], static_cast<std::size_t>(std::floor(exact)));
    assigned += out[i];
    remainders.emplace_back(exact - std::floor(exact), i);
  }
  std::stable_sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  // Hand out the rest by remainder, then round-robin wherever capacity is left.
  while (assigned < total) {
    bool progressed = false;
    for (const auto& [rem, i] : remainders) {
      if (assigned == total) break;
      if (out[i] < cap[i]) {
        ++out[i];
        ++assigned;
        progressed = true;
      }
    }
    if (!progressed) break;
  }
  return out;
}

}  // namespace

PruningPlan build_plan(const NetworkSpec& spec, const ImportanceProfile* profile, const TapSet& crucial,
                       const PlanOptions& o, const ParamSet<float>* params) {
  o.target.check();
  if (o.floor == 0) throw ConfigError("per-layer keep floor must be at least 1");
  PruningPlan plan = identity_plan(spec);
  plan.crucial = normalized_taps(spec, crucial);
  plan.target = o.target;
  plan.strategy = o.strategy;
  plan.seed = o.seed;
  plan.floor = o.floor;

  const auto layers = pool_layers(spec, plan.crucial);
  std::vector<std::size_t> sizes, mask_of;
  for (std::size_t idx : layers) {
    sizes.push_back(spec.layers[idx].out_channels);
    mask_of.push_back(mask_position(plan, spec.layers[idx].id));
  }
  const std::size_t pool = std::accumulate(sizes.begin(), sizes.end(), std::size_t{0});
  std::size_t removable = 0;
  for (std::size_t s : sizes) removable += s > o.floor ? s - o.floor : 0;

  // Per-layer removal priority: channels in the order they are dropped.
  std::vector<std::vector<std::size_t>> order(layers.size());
  std::vector<Candidate> global;
  if (o.strategy == Strategy::beta) {
    if (!profile) throw ConfigError("the beta strategy needs an importance profile");
    check_profile(spec, *profile);
    for (std::size_t li = 0; li < layers.size(); ++li) {
      const auto* imp = profile->find(spec.layers[layers[li]].id);
      for (std::size_t c = 0; c < sizes[li]; ++c) global.push_back({li, c, std::abs(imp->beta[c])});
    }
    // Ascending |beta|; the stable sort keeps (layer, channel) order on ties.
    std::stable_sort(global.begin(), global.end(), [](const Candidate& a, const Candidate& b) { return a.key < b.key; });
  } else {
    Rng rng(o.seed);
    for (std::size_t li = 0; li < layers.size(); ++li) {
      auto& ord = order[li];
      ord.resize(sizes[li]);
      std::iota(ord.begin(), ord.end(), std::size_t{0});
      switch (o.strategy) {
        case Strategy::random:
          rng.shuffle(ord.begin(), ord.end());
          break;
        case Strategy::first_k:
          std::reverse(ord.begin(), ord.end());
          break;
        case Strategy::max_response: {
          if (!params) throw ConfigError("the max-response strategy needs network weights");
          const auto& w = params->at(weight_key(spec.layers[layers[li]].id)).value;
          const std::size_t per = w.size() / sizes[li];
          std::vector<double> sums(sizes[li], 0.0);
          for (std::size_t c = 0; c < sizes[li]; ++c) {
            for (std::size_t k = 0; k < per; ++k) sums[c] += std::abs(static_cast<double>(w[c * per + k]));
          }
          // Smallest weight sum goes first; ties drop the higher index first.
          std::stable_sort(ord.begin(), ord.end(), [&](std::size_t a, std::size_t b) {
            return sums[a] < sums[b] || (sums[a] == sums[b] && a > b);
          });
          break;
        }
        case Strategy::beta:
          break;
      }
    }
  }

  // Removes the first k candidates under the current strategy.
  auto realize = [&](std::size_t k) {
    PruningPlan p = plan;
    if (o.strategy == Strategy::beta) {
      std::vector<std::size_t> left(sizes);
      std::size_t done = 0;
      for (const auto& cand : global) {
        if (done == k) break;
        if (left[cand.layer] <= o.floor) continue;
        p.masks[mask_of[cand.layer]].keep[cand.channel] = false;
        --left[cand.layer];
        ++done;
      }
    } else {
      const auto counts = apportion(sizes, o.floor, k);
      for (std::size_t li = 0; li < layers.size(); ++li) {
        for (std::size_t j = 0; j < counts[li]; ++j) p.masks[mask_of[li]].keep[order[li][j]] = false;
      }
    }
    return p;
  };

  if (o.target.kind == PruneTarget::Kind::filter_fraction) {
    const auto k = static_cast<std::size_t>(std::ceil(o.target.value * static_cast<double>(pool) - 1e-9));
    if (k > removable) {
      throw ConfigError("filter target removes " + std::to_string(k) + " of " + std::to_string(pool) +
                        " pool filters but the per-layer floor of " + std::to_string(o.floor) + " allows only " +
                        std::to_string(removable));
    }
    return realize(k);
  }

  const double goal = o.target.flops_goal();
  if (goal <= 0.0) return plan;
  const std::uint64_t original = flops_total(spec).total;
  const double reachable = pruned_fraction(spec, original, realize(removable));
  if (reachable < goal) {
    throw ConfigError("FLOPs target " + std::to_string(100.0 * goal) + "% is infeasible: crucial layers " +
                      std::to_string(plan.crucial.size()) + ", the final layer and the per-layer floor of " +
                      std::to_string(o.floor) + " allow at most " + std::to_string(100.0 * reachable) + "%");
  }
  if (o.strategy == Strategy::beta) {
    // Smallest prefix of the sorted pool that meets the goal; FLOPs fall monotonically with k.
    std::size_t lo = 0, hi = removable;
    while (lo < hi) {
      const std::size_t mid = lo + (hi - lo) / 2;
      if (pruned_fraction(spec, original, realize(mid)) >= goal) hi = mid;
      else lo = mid + 1;
    }
    return realize(lo);
  }
  // Apportioned removal counts are not monotone in k, so scan upward.
  for (std::size_t k = 0; k <= removable; ++k) {
    PruningPlan p = realize(k);
    if (pruned_fraction(spec, original, p) >= goal) return p;
  }
  return realize(removable);
}

// --- plan application -------------------------------------------------------

void check_plan(const NetworkSpec& spec, const PruningPlan& plan) {
  if (!spec.validated) throw ConfigError("plan check needs a validated spec");
  std::size_t convs = 0;
  for (const auto& l : spec.layers) convs += l.kind == LayerKind::conv;
  if (plan.masks.size() != convs) {
    throw ConfigError("plan has " + std::to_string(plan.masks.size()) + " masks, network has " + std::to_string(convs) +
                      " conv layers");
  }
  const auto crucial = crucial_convs(spec, plan.crucial);
  for (const auto& m : plan.masks) {
    const auto idx = spec.find(m.id);
    if (!idx || spec.layers[*idx].kind != LayerKind::conv) throw ConfigError("plan mask names unknown conv '" + m.id + "'");
    const auto& l = spec.layers[*idx];
    if (m.keep.size() != l.out_channels) {
      throw ConfigError("mask for '" + m.id + "' has " + std::to_string(m.keep.size()) + " entries, layer has " +
                        std::to_string(l.out_channels) + " filters");
    }
    if (m.all_kept()) continue;
    if (!is_prunable(spec, *idx)) throw ConfigError("plan drops filters of non-prunable layer '" + m.id + "'");
    if (std::find(crucial.begin(), crucial.end(), *idx) != crucial.end()) {
      throw ConfigError("plan drops filters of crucial layer '" + m.id + "'");
    }
    if (m.kept() < std::max<std::size_t>(plan.floor, 1)) {
      throw ConfigError("plan keeps " + std::to_string(m.kept()) + " filters of '" + m.id + "', below the floor of " +
                        std::to_string(plan.floor));
    }
  }
}

namespace {

/// Keep-mask (and optional per-channel factor) carried by every node's output
/// channels, or flattened features for flatten nodes. Empty for linear nodes.
struct ChannelFlow {
  std::vector<std::vector<bool>> keep;
  std::vector<std::vector<double>> factor;
};

ChannelFlow channel_flow(const NetworkSpec& spec, const PruningPlan& plan, const ImportanceProfile* fold) {
  const std::size_t n = spec.layers.size();
  ChannelFlow f{std::vector<std::vector<bool>>(n), std::vector<std::vector<double>>(n)};
  const std::vector<bool> input_keep(spec.input_shape.at(0), true);
  const std::vector<double> input_factor(spec.input_shape.at(0), 1.0);
  std::map<std::size_t, std::vector<double>> folded;  // activation node -> |beta|
  if (fold) {
    check_profile(spec, *fold);
    for (std::size_t idx : prunable_convs(spec)) {
      if (const auto* imp = fold->find(spec.layers[idx].id)) {
        std::vector<double> a(imp->beta.size());
        for (std::size_t j = 0; j < a.size(); ++j) a[j] = std::abs(imp->beta[j]);
        folded.emplace(*activation_of(spec, idx), std::move(a));
      }
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    const auto& l = spec.layers[i];
    const auto prod = producer_indices(spec, i);
    auto keep_of = [&](long p) -> const std::vector<bool>& { return p < 0 ? input_keep : f.keep[static_cast<std::size_t>(p)]; };
    auto factor_of = [&](long p) -> const std::vector<double>& {
      return p < 0 ? input_factor : f.factor[static_cast<std::size_t>(p)];
    };
    switch (l.kind) {
      case LayerKind::conv:
        f.keep[i] = plan.masks.at(mask_position(plan, l.id)).keep;
        f.factor[i].assign(l.out_channels, 1.0);
        break;
      case LayerKind::relu:
      case LayerKind::maxpool:
        f.keep[i] = keep_of(prod[0]);
        f.factor[i] = factor_of(prod[0]);
        if (auto it = folded.find(i); it != folded.end()) f.factor[i] = it->second;
        break;
      case LayerKind::frozen_affine:
        // absorbs incoming factors into its scale
        f.keep[i] = keep_of(prod[0]);
        f.factor[i].assign(f.keep[i].size(), 1.0);
        break;
      case LayerKind::add:
        for (std::size_t k = 1; k < prod.size(); ++k) {
          if (keep_of(prod[k]) != keep_of(prod[0])) {
            throw ConfigError("inconsistent channel masks meet at junction '" + l.id + "'");
          }
        }
        f.keep[i] = keep_of(prod[0]);
        f.factor[i].assign(f.keep[i].size(), 1.0);
        break;
      case LayerKind::flatten: {
        const Shape& s = spec.layers[static_cast<std::size_t>(prod[0])].out_shape;
        const std::size_t spatial = s.size() == 3 ? s[1] * s[2] : 1;
        const auto& k = keep_of(prod[0]);
        const auto& fa = factor_of(prod[0]);
        for (std::size_t c = 0; c < k.size(); ++c) {
          for (std::size_t s2 = 0; s2 < spatial; ++s2) {
            f.keep[i].push_back(k[c]);
            f.factor[i].push_back(fa[c]);
          }
        }
        break;
      }
      case LayerKind::linear:
        f.keep[i].assign(l.out_features, true);
        f.factor[i].assign(l.out_features, 1.0);
        break;
    }
  }
  return f;
}

template <typename T>
std::vector<T> select(const std::vector<T>& v, const std::vector<bool>& keep) {
  if (v.empty()) return v;
  std::vector<T> out;
  for (std::size_t i = 0; i < keep.size(); ++i) {
    if (keep[i]) out.push_back(v[i]);
  }
  return out;
}

NetworkSpec pruned_spec_from_flow(const NetworkSpec& spec, const PruningPlan& plan, const ChannelFlow& flow) {
  NetworkSpec out = spec;
  out.validated = false;
  for (std::size_t i = 0; i < out.layers.size(); ++i) {
    auto& l = out.layers[i];
    l.out_shape.clear();
    if (l.kind == LayerKind::conv) {
      l.out_channels = plan.masks[mask_position(plan, l.id)].kept();
      l.in_channels = 0;
    } else if (l.kind == LayerKind::linear) {
      l.in_features = 0;
    } else if (l.kind == LayerKind::frozen_affine) {
      const long p = producer_indices(spec, i)[0];
      if (p >= 0) {
        l.scale = select(l.scale, flow.keep[static_cast<std::size_t>(p)]);
        l.shift = select(l.shift, flow.keep[static_cast<std::size_t>(p)]);
      }
    }
  }
  return validate(std::move(out));
}

}  // namespace

NetworkSpec pruned_spec(const NetworkSpec& spec, const PruningPlan& plan) {
  check_plan(spec, plan);
  return pruned_spec_from_flow(spec, plan, channel_flow(spec, plan, nullptr));
}

template <typename T>
Model<T> apply_plan(const NetworkSpec& spec, const ParamSet<T>& params, const PruningPlan& plan,
                    const ImportanceProfile* fold) {
  check_plan(spec, plan);
  check_params(spec, params);
  const ChannelFlow flow = channel_flow(spec, plan, fold);
  Model<T> out{pruned_spec_from_flow(spec, plan, flow), {}};

  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& l = spec.layers[i];
    const long p = producer_indices(spec, i)[0];
    const std::vector<bool> all_in(p < 0 ? spec.input_shape[0] : 0, true);
    const std::vector<double> unit_in(p < 0 ? spec.input_shape[0] : 0, 1.0);
    const auto& in_keep = p < 0 ? all_in : flow.keep[static_cast<std::size_t>(p)];
    const auto& in_factor = p < 0 ? unit_in : flow.factor[static_cast<std::size_t>(p)];
    switch (l.kind) {
      case LayerKind::conv:
      case LayerKind::linear: {
        const Param<T>& src = params.at(weight_key(l.id));
        const Tensor<T>& w = src.value;
        const std::size_t rows = w.dim(0), cols = w.dim(1);
        const std::size_t inner = w.size() / (rows * cols);
        const std::vector<bool> all_rows(rows, true);
        const auto& row_keep = l.kind == LayerKind::conv ? flow.keep[i] : all_rows;
        Shape shape = w.shape();
        shape[0] = static_cast<std::size_t>(std::count(row_keep.begin(), row_keep.end(), true));
        shape[1] = static_cast<std::size_t>(std::count(in_keep.begin(), in_keep.end(), true));
        std::vector<T> data;
        data.reserve(numel(shape));
        for (std::size_t r = 0; r < rows; ++r) {
          if (!row_keep[r]) continue;
          for (std::size_t c = 0; c < cols; ++c) {
            if (!in_keep[c]) continue;
            const T f = static_cast<T>(in_factor[c]);
            for (std::size_t k = 0; k < inner; ++k) {
              const T v = w[(r * cols + c) * inner + k];
              data.push_back(fold ? v * f : v);
            }
          }
        }
        out.params.emplace(weight_key(l.id), Param<T>(Tensor<T>(shape, std::move(data)), src.trainable));
        break;
      }
      case LayerKind::frozen_affine:
        for (const auto& key : {scale_key(l.id), shift_key(l.id)}) {
          const Param<T>& src = params.at(key);
          auto kept = select(src.value.values(), in_keep);
          if (fold && key == scale_key(l.id)) {
            const auto f = select(in_factor, in_keep);
            for (std::size_t c = 0; c < kept.size(); ++c) kept[c] = static_cast<T>(kept[c] * f[c]);
          }
          out.params.emplace(key, Param<T>(Tensor<T>({kept.size()}, kept), src.trainable));
        }
        break;
      default:
        break;
    }
  }
  return out;
}

PlanStats plan_stats(const PruningPlan& plan, const NetworkSpec& spec) {
  const NetworkSpec after = pruned_spec(spec, plan);
  const auto crucial = crucial_convs(spec, plan.crucial);
  PlanStats stats;
  for (const auto& m : plan.masks) {
    const std::size_t idx = spec.index_of(m.id);
    LayerPlanStats s;
    s.id = m.id;
    s.total = m.keep.size();
    s.kept = m.kept();
    s.rate = s.total ? static_cast<double>(s.kept) / static_cast<double>(s.total) : 1.0;
    s.crucial = std::find(crucial.begin(), crucial.end(), idx) != crucial.end();
    s.prunable = is_prunable(spec, idx);
    stats.layers.push_back(s);
  }
  stats.flops = compare_flops(flops_total(spec).total, flops_total(after).total);
  return stats;
}

template Model<float> apply_plan<float>(const NetworkSpec&, const ParamSet<float>&, const PruningPlan&,
                                              const ImportanceProfile*);
template Model<double> apply_plan<double>(const NetworkSpec&, const ParamSet<double>&, const PruningPlan&,
                                                const ImportanceProfile*);

}  // namespace prunekit
