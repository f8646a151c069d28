// SPDX-License-Identifier: Apache-2.0
#include "prunekit/importance.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "prunekit/adam.hpp"
#include "prunekit/ops.hpp"

namespace prunekit {

namespace {

double sign(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

double mean_abs(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += std::abs(x);
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

}  // namespace

const LayerImportance* ImportanceProfile::find(std::string_view id) const {
  for (const auto& l : layers) {
    if (l.id == id) return &l;
  }
  return nullptr;
}

std::size_t ImportanceProfile::channel_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.beta.size();
  return n;
}

double ImportanceProfile::mean_abs_beta() const {
  double s = 0.0;
  for (const auto& l : layers) {
    for (double b : l.beta) s += std::abs(b);
  }
  const std::size_t n = channel_count();
  return n ? s / static_cast<double>(n) : 0.0;
}

ImportanceProfile initial_profile(const NetworkSpec& spec) {
  ImportanceProfile p;
  for (std::size_t idx : scorable_convs(spec)) {
    const auto& l = spec.layers[idx];
    p.layers.push_back({l.id, std::vector<double>(l.out_channels, 1.0), 1.0});
  }
  return p;
}

void check_profile(const NetworkSpec& spec, const ImportanceProfile& profile) {
  for (const auto& l : profile.layers) {
    const auto idx = spec.find(l.id);
    if (!idx || spec.layers[*idx].kind != LayerKind::conv || !activation_of(spec, *idx)) {
      throw ConfigError("importance profile names '" + l.id + "', which is not a scorable conv layer");
    }
    if (l.beta.size() != spec.layers[*idx].out_channels) {
      throw ConfigError("importance vector for '" + l.id + "' has " + std::to_string(l.beta.size()) +
                        " entries, layer has " + std::to_string(spec.layers[*idx].out_channels) + " filters");
    }
  }
  for (std::size_t idx : prunable_convs(spec)) {
    if (!profile.find(spec.layers[idx].id)) {
      throw ConfigError("importance profile does not cover prunable layer '" + spec.layers[idx].id + "'");
    }
  }
}

template <typename T>
ChannelScaling<T> profile_scaling(const NetworkSpec& spec, const ImportanceProfile& profile) {
  check_profile(spec, profile);
  ChannelScaling<T> s;
  for (const auto& l : profile.layers) {
    std::vector<T> f(l.beta.size());
    for (std::size_t j = 0; j < f.size(); ++j) f[j] = static_cast<T>(std::abs(l.beta[j]));
    s.emplace(*activation_of(spec, spec.index_of(l.id)), std::move(f));
  }
  return s;
}

template <typename T>
Tensor<T> scaled_forward(const NetworkSpec& spec, const ParamSet<T>& params, const ImportanceProfile& profile,
                         const Tensor<T>& input) {
  const ChannelScaling<T> scaling = profile_scaling<T>(spec, profile);
  Trace<T> trace = run_forward(spec, params, input, &scaling);
  return std::move(trace.outputs.back());
}

double l1_penalty(const ImportanceProfile& profile) {
  double s = 0.0;
  for (const auto& l : profile.layers) {
    for (double b : l.beta) s += std::abs(b);
  }
  return profile.lambda * s;
}

template <typename T>
ImportanceLoss importance_loss(const Tensor<T>& logits, std::span<const int> labels, const ImportanceProfile& profile) {
  ImportanceLoss loss;
  loss.cross_entropy = static_cast<double>(cross_entropy(logits, labels).value);
  loss.penalty = l1_penalty(profile);
  loss.value = loss.cross_entropy + loss.penalty;
  return loss;
}

template <typename T>
std::vector<std::vector<double>> importance_gradient(const NetworkSpec& spec, const ParamSet<T>& params,
                                                     const ImportanceProfile& profile, const Tensor<T>& images,
                                                     std::span<const int> labels, ImportanceLoss* loss) {
  const ChannelScaling<T> scaling = profile_scaling<T>(spec, profile);
  const Trace<T> trace = run_forward(spec, params, images, &scaling);
  const auto ce = cross_entropy(trace.logits(), labels);
  if (loss) {
    loss->cross_entropy = static_cast<double>(ce.value);
    loss->penalty = l1_penalty(profile);
    loss->value = loss->cross_entropy + loss->penalty;
  }
  ChannelScaling<T> scaling_grads;
  BackwardRequest<T> req;
  req.grad_logits = &ce.grad;
  req.scaling = &scaling;
  req.scaling_grads = &scaling_grads;
  run_backward(spec, params, trace, req);

  std::vector<std::vector<double>> out;
  out.reserve(profile.layers.size());
  for (const auto& l : profile.layers) {
    const std::size_t node = *activation_of(spec, spec.index_of(l.id));
    const auto it = scaling_grads.find(node);
    std::vector<double> g(l.beta.size(), 0.0);
    for (std::size_t j = 0; j < g.size(); ++j) {
      const double d_abs = it == scaling_grads.end() ? 0.0 : static_cast<double>(it->second[j]);
      g[j] = sign(l.beta[j]) * (d_abs + profile.lambda);
    }
    out.push_back(std::move(g));
  }
  return out;
}

ImportanceProfile learn_importance(const NetworkSpec& spec, const ParamSet<float>& params, const Dataset& data,
                                   const ImportanceOptions& o) {
  check_dataset(data);
  if (o.epochs == 0) throw ConfigError("importance learning needs a positive epoch count");
  if (o.lambda < 0.0) throw ConfigError("lambda must be non-negative");
  if (o.lr < 0.0) throw ConfigError("learning rate must be non-negative");

  ImportanceProfile profile = initial_profile(spec);
  profile.lambda = o.lambda;
  profile.epochs = o.epochs;
  profile.lr = o.lr;
  profile.batch_size = o.batch_size;
  profile.seed = o.seed;

  std::vector<Param<double>> betas;
  std::vector<AdamState<double>> states;
  for (const auto& l : profile.layers) {
    betas.emplace_back(Tensor<double>({l.beta.size()}, l.beta));
    states.emplace_back(Shape{l.beta.size()});
  }
  const AdamConfig adam{o.lr};
  Rng rng(o.seed);
  for (std::size_t epoch = 0; epoch < o.epochs; ++epoch) {
    double total = 0.0;
    for (const auto& idx : epoch_batches(data.size(), o.batch_size, &rng)) {
      const Batch batch = make_batch(data, idx);
      ImportanceLoss loss;
      const auto grads = importance_gradient(spec, params, profile, batch.images, batch.labels, &loss);
      total += loss.value * static_cast<double>(idx.size());
      for (std::size_t k = 0; k < betas.size(); ++k) {
        std::copy(grads[k].begin(), grads[k].end(), betas[k].grad.data().begin());
        adam_step(betas[k], states[k], adam);
        std::copy(betas[k].value.data().begin(), betas[k].value.data().end(), profile.layers[k].beta.begin());
      }
      ++profile.steps;
    }
    profile.epoch_loss.push_back(total / static_cast<double>(data.size()));
  }
  for (auto& l : profile.layers) l.mean_abs = mean_abs(l.beta);
  return profile;
}

std::vector<LayerScore> layer_scores(const ImportanceProfile& profile, ScoreReduction reduction) {
  if (profile.layers.empty()) throw ConfigError("importance profile is empty");
  std::vector<LayerScore> scores;
  for (const auto& l : profile.layers) {
    double s = 0.0;
    for (double b : l.beta) s += std::abs(b);
    if (reduction == ScoreReduction::mean) s /= static_cast<double>(l.beta.size());
    scores.push_back({l.id, s, 0});
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a].score > scores[b].score; });
  for (std::size_t r = 0; r < order.size(); ++r) scores[order[r]].rank = r + 1;
  return scores;
}

#define PRUNEKIT_INSTANTIATE_IMPORTANCE(T)                                                                        \
  template ChannelScaling<T> profile_scaling<T>(const NetworkSpec&, const ImportanceProfile&);                    \
  template Tensor<T> scaled_forward<T>(const NetworkSpec&, const ParamSet<T>&, const ImportanceProfile&,          \
                                       const Tensor<T>&);                                                         \
  template ImportanceLoss importance_loss<T>(const Tensor<T>&, std::span<const int>, const ImportanceProfile&);  \
  template std::vector<std::vector<double>> importance_gradient<T>(const NetworkSpec&, const ParamSet<T>&,        \
                                                                   const ImportanceProfile&, const Tensor<T>&,    \
                                                                   std::span<const int>, ImportanceLoss*);

PRUNEKIT_INSTANTIATE_IMPORTANCE(float)
PRUNEKIT_INSTANTIATE_IMPORTANCE(double)

}  // namespace prunekit
