// SPDX-License-Identifier: Apache-2.0
#include "prunekit/netspec.hpp"

#include <algorithm>
#include <deque>
#include <map>
#include <set>

#include "prunekit/ops.hpp"

namespace prunekit {

namespace {

constexpr std::pair<LayerKind, std::string_view> kKindNames[] = {
    {LayerKind::conv, "conv"},       {LayerKind::relu, "relu"},       {LayerKind::maxpool, "maxpool"},
    {LayerKind::frozen_affine, "frozen_affine"}, {LayerKind::linear, "linear"}, {LayerKind::flatten, "flatten"},
    {LayerKind::add, "add"},
};

bool channel_preserving(LayerKind k) {
  return k == LayerKind::relu || k == LayerKind::maxpool || k == LayerKind::frozen_affine;
}

}  // namespace

std::string_view layer_kind_name(LayerKind kind) {
  for (const auto& [k, n] : kKindNames) {
    if (k == kind) return n;
  }
  return "unknown";
}

LayerKind parse_layer_kind(std::string_view name) {
  for (const auto& [k, n] : kKindNames) {
    if (n == name) return k;
  }
  throw ConfigError("unknown layer kind '" + std::string(name) + "'");
}

std::optional<std::size_t> NetworkSpec::find(std::string_view id) const {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].id == id) return i;
  }
  return std::nullopt;
}

std::size_t NetworkSpec::index_of(std::string_view id) const {
  if (auto i = find(id)) return *i;
  throw ConfigError("no layer named '" + std::string(id) + "' in network '" + name + "'");
}

NetworkSpec validate(NetworkSpec spec) {
  std::vector<std::string> errors;
  auto& layers = spec.layers;

  if (spec.input_shape.size() != 3 || numel(spec.input_shape) == 0) {
    errors.push_back("input shape must be a positive [C,H,W], got " + to_string(spec.input_shape));
  }
  if (spec.num_classes == 0) errors.push_back("class count must be positive");
  if (layers.empty()) errors.push_back("network has no layers");

  // Explicit edges and unique ids.
  std::map<std::string, std::size_t> by_id;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    auto& l = layers[i];
    if (l.id.empty() || l.id == kInputId) errors.push_back("layer " + std::to_string(i) + " has a reserved or empty id");
    if (!by_id.emplace(l.id, i).second) errors.push_back("duplicate layer id '" + l.id + "'");
    if (l.inputs.empty()) l.inputs.push_back(i == 0 ? std::string(kInputId) : layers[i - 1].id);
    const std::size_t arity = l.inputs.size();
    if (l.kind == LayerKind::add ? arity < 2 : arity != 1) {
      errors.push_back("layer '" + l.id + "' (" + std::string(layer_kind_name(l.kind)) + ") has " +
                       std::to_string(arity) + " inputs");
    }
  }

  // Dangling edges and Kahn ordering, stable with respect to declaration order.
  std::vector<std::vector<std::size_t>> deps(layers.size());
  for (std::size_t i = 0; i < layers.size(); ++i) {
    for (const auto& in : layers[i].inputs) {
      if (in == kInputId) continue;
      auto it = by_id.find(in);
      if (it == by_id.end()) {
        errors.push_back("layer '" + layers[i].id + "' reads from unknown node '" + in + "'");
      } else {
        deps[i].push_back(it->second);
      }
    }
  }
  std::vector<std::size_t> pending(layers.size());
  std::vector<std::vector<std::size_t>> users(layers.size());
  for (std::size_t i = 0; i < layers.size(); ++i) {
    pending[i] = deps[i].size();
    for (std::size_t d : deps[i]) users[d].push_back(i);
  }
  std::set<std::size_t> ready;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (pending[i] == 0) ready.insert(i);
  }
  std::vector<std::size_t> order;
  while (!ready.empty()) {
    const std::size_t i = *ready.begin();
    ready.erase(ready.begin());
    order.push_back(i);
    for (std::size_t u : users[i]) {
      if (--pending[u] == 0) ready.insert(u);
    }
  }
  if (order.size() != layers.size()) {
    std::string members;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      if (pending[i] != 0) members += (members.empty() ? "" : ", ") + layers[i].id;
    }
    errors.push_back("cycle through layers: " + members);
    throw SpecError(std::move(errors));
  }
  std::vector<LayerSpec> sorted;
  sorted.reserve(layers.size());
  for (std::size_t i : order) sorted.push_back(std::move(layers[i]));
  layers = std::move(sorted);

  // Shape inference.
  std::map<std::string, Shape> shapes;
  if (spec.input_shape.size() == 3) shapes[std::string(kInputId)] = spec.input_shape;
  for (auto& l : layers) {
    std::vector<Shape> in;
    bool known = true;
    for (const auto& name : l.inputs) {
      auto it = shapes.find(name);
      if (it == shapes.end()) {
        known = false;
        break;
      }
      in.push_back(it->second);
    }
    if (!known || in.empty()) continue;
    const Shape& x = in.front();
    const std::string where = "layer '" + l.id + "'";
    try {
      switch (l.kind) {
        case LayerKind::conv: {
          if (x.size() != 3) throw ShapeError(where + " needs a [C,H,W] input, got " + to_string(x));
          if (l.in_channels == 0) l.in_channels = x[0];
          if (l.in_channels != x[0]) {
            throw ShapeError(where + " expects " + std::to_string(l.in_channels) + " input channels but '" +
                             l.inputs[0] + "' produces " + std::to_string(x[0]));
          }
          if (l.out_channels == 0) throw ConfigError(where + " has no filters");
          const std::size_t oh = conv_output_extent(x[1], l.kernel_h, l.stride, l.pad);
          const std::size_t ow = conv_output_extent(x[2], l.kernel_w, l.stride, l.pad);
          l.out_shape = {l.out_channels, oh, ow};
          break;
        }
        case LayerKind::relu:
          l.out_shape = x;
          break;
        case LayerKind::frozen_affine:
          if (x.size() < 1) throw ShapeError(where + " needs a channel axis");
          if ((!l.scale.empty() && l.scale.size() != x[0]) || (!l.shift.empty() && l.shift.size() != x[0])) {
            throw ShapeError(where + " scale/shift length does not match " + std::to_string(x[0]) + " channels");
          }
          l.out_shape = x;
          break;
        case LayerKind::maxpool:
          if (x.size() != 3) throw ShapeError(where + " needs a [C,H,W] input, got " + to_string(x));
          if (x[1] % 2 != 0 || x[2] % 2 != 0) {
            throw ConfigError(where + " pools " + to_string(x) + ": spatial extent /2 is not integral");
          }
          l.out_shape = {x[0], x[1] / 2, x[2] / 2};
          break;
        case LayerKind::flatten:
          l.out_shape = {numel(x)};
          break;
        case LayerKind::linear:
          if (x.size() != 1) throw ShapeError(where + " needs a flat input, got " + to_string(x));
          if (l.in_features == 0) l.in_features = x[0];
          if (l.in_features != x[0]) {
            throw ShapeError(where + " expects " + std::to_string(l.in_features) + " features, got " +
                             std::to_string(x[0]));
          }
          if (l.out_features == 0) throw ConfigError(where + " has no outputs");
          l.out_shape = {l.out_features};
          break;
        case LayerKind::add:
          for (std::size_t k = 1; k < in.size(); ++k) {
            if (in[k] != x) {
              throw ShapeError(where + " adds mismatched shapes " + to_string(x) + " and " + to_string(in[k]));
            }
          }
          l.out_shape = x;
          break;
      }
      shapes[l.id] = l.out_shape;
    } catch (const Error& e) {
      errors.push_back(e.what());
    }
  }

  // Prunable flags only make sense on convs.
  for (const auto& l : layers) {
    if (l.prunable && l.kind != LayerKind::conv) errors.push_back("layer '" + l.id + "' is not a conv but is prunable");
  }

  // Exactly one sink producing the logits.
  std::set<std::string> consumed;
  for (const auto& l : layers) consumed.insert(l.inputs.begin(), l.inputs.end());
  std::vector<std::string> sinks;
  for (const auto& l : layers) {
    if (!consumed.count(l.id)) sinks.push_back(l.id);
  }
  if (!layers.empty()) {
    if (sinks.size() != 1) {
      errors.push_back("network must have exactly one output, found " + std::to_string(sinks.size()));
    } else {
      const auto& out = layers[*spec.find(sinks.front())];
      if (!out.out_shape.empty() && out.out_shape != Shape{spec.num_classes}) {
        errors.push_back("output '" + out.id + "' has shape " + to_string(out.out_shape) + ", expected [" +
                         std::to_string(spec.num_classes) + "]");
      }
    }
  }

  if (!errors.empty()) throw SpecError(std::move(errors));
  spec.validated = true;
  return spec;
}

std::vector<long> producer_indices(const NetworkSpec& spec, std::size_t idx) {
  std::vector<long> out;
  for (const auto& in : spec.layers[idx].inputs) {
    out.push_back(in == kInputId ? -1L : static_cast<long>(spec.index_of(in)));
  }
  return out;
}

std::vector<std::size_t> consumer_indices(const NetworkSpec& spec, std::size_t idx) {
  std::vector<std::size_t> out;
  const std::string& id = spec.layers[idx].id;
  for (std::size_t i = idx + 1; i < spec.layers.size(); ++i) {
    const auto& ins = spec.layers[i].inputs;
    if (std::find(ins.begin(), ins.end(), id) != ins.end()) out.push_back(i);
  }
  return out;
}

std::optional<std::size_t> activation_of(const NetworkSpec& spec, std::size_t conv_idx) {
  std::size_t cur = conv_idx;
  while (true) {
    const auto users = consumer_indices(spec, cur);
    if (users.size() != 1) return std::nullopt;
    const LayerKind k = spec.layers[users.front()].kind;
    if (k == LayerKind::relu) return users.front();
    if (k != LayerKind::frozen_affine) return std::nullopt;
    cur = users.front();
  }
}

bool feeds_junction(const NetworkSpec& spec, std::size_t conv_idx) {
  std::deque<std::size_t> queue{conv_idx};
  std::set<std::size_t> seen;
  while (!queue.empty()) {
    const std::size_t cur = queue.front();
    queue.pop_front();
    for (std::size_t u : consumer_indices(spec, cur)) {
      const LayerKind k = spec.layers[u].kind;
      if (k == LayerKind::add) return true;
      if (channel_preserving(k) && seen.insert(u).second) queue.push_back(u);
    }
  }
  return false;
}

std::vector<ChannelConsumer> channel_consumers(const NetworkSpec& spec, std::size_t conv_idx) {
  std::vector<ChannelConsumer> out;
  std::deque<std::size_t> queue{conv_idx};
  std::set<std::size_t> seen;
  while (!queue.empty()) {
    const std::size_t cur = queue.front();
    queue.pop_front();
    for (std::size_t u : consumer_indices(spec, cur)) {
      const auto& l = spec.layers[u];
      if (l.kind == LayerKind::conv) {
        out.push_back({u, 1});
      } else if (l.kind == LayerKind::flatten) {
        const Shape& s = spec.layers[cur].out_shape;
        const std::size_t spatial = s.size() == 3 ? s[1] * s[2] : 1;
        for (std::size_t v : consumer_indices(spec, u)) {
          if (spec.layers[v].kind == LayerKind::linear) out.push_back({v, spatial});
        }
      } else if (channel_preserving(l.kind) && seen.insert(u).second) {
        queue.push_back(u);
      }
    }
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.index < b.index; });
  return out;
}

std::size_t final_conv(const NetworkSpec& spec) {
  for (std::size_t i = spec.layers.size(); i-- > 0;) {
    if (spec.layers[i].kind == LayerKind::conv) return i;
  }
  throw ConfigError("network '" + spec.name + "' has no convolution");
}

std::size_t final_activation(const NetworkSpec& spec) {
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerKind k = spec.layers[i].kind;
    if (k != LayerKind::flatten && k != LayerKind::linear) continue;
    long cur = producer_indices(spec, i).front();
    while (cur >= 0) {
      const auto& l = spec.layers[static_cast<std::size_t>(cur)];
      if (l.kind == LayerKind::relu) return static_cast<std::size_t>(cur);
      if (l.kind != LayerKind::maxpool && l.kind != LayerKind::frozen_affine && l.kind != LayerKind::flatten) break;
      cur = producer_indices(spec, static_cast<std::size_t>(cur)).front();
    }
    break;
  }
  throw ConfigError("network '" + spec.name + "' has no activation feeding its classifier");
}

std::vector<std::size_t> scorable_convs(const NetworkSpec& spec) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    if (spec.layers[i].kind == LayerKind::conv && activation_of(spec, i)) out.push_back(i);
  }
  return out;
}

bool is_prunable(const NetworkSpec& spec, std::size_t conv_idx) {
  const auto& l = spec.layers.at(conv_idx);
  return l.kind == LayerKind::conv && l.prunable && activation_of(spec, conv_idx).has_value() &&
         !feeds_junction(spec, conv_idx) && conv_idx != final_conv(spec);
}

std::vector<std::size_t> prunable_convs(const NetworkSpec& spec) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    if (is_prunable(spec, i)) out.push_back(i);
  }
  return out;
}

std::size_t tap_node_for(const NetworkSpec& spec, std::size_t conv_idx) {
  const auto act = activation_of(spec, conv_idx);
  if (!act) throw ConfigError("conv '" + spec.layers[conv_idx].id + "' has no activation to observe");
  // First junction reachable downstream, if any.
  std::deque<std::size_t> queue{conv_idx};
  std::set<std::size_t> seen;
  std::optional<std::size_t> junction;
  while (!queue.empty()) {
    const std::size_t cur = queue.front();
    queue.pop_front();
    for (std::size_t u : consumer_indices(spec, cur)) {
      if (!seen.insert(u).second) continue;
      if (spec.layers[u].kind == LayerKind::add) {
        if (!junction || u < *junction) junction = u;
      } else {
        queue.push_back(u);
      }
    }
  }
  if (junction) {
    for (std::size_t u : consumer_indices(spec, *junction)) {
      if (spec.layers[u].kind == LayerKind::relu) return u;
    }
  }
  return *act;
}

bool TapSet::contains(std::string_view id) const { return std::find(ids.begin(), ids.end(), id) != ids.end(); }

void check_taps(const NetworkSpec& spec, const TapSet& taps) {
  for (const auto& id : taps.ids) {
    const auto idx = spec.find(id);
    if (!idx) throw ConfigError("unknown tap '" + id + "'");
    if (spec.layers[*idx].kind != LayerKind::relu) {
      throw ConfigError("tap '" + id + "' is a " + std::string(layer_kind_name(spec.layers[*idx].kind)) +
                        " node; taps must be activation outputs");
    }
  }
}

TapSet normalized_taps(const NetworkSpec& spec, TapSet taps) {
  check_taps(spec, taps);
  std::vector<std::size_t> idx;
  for (const auto& id : taps.ids) idx.push_back(spec.index_of(id));
  std::sort(idx.begin(), idx.end());
  idx.erase(std::unique(idx.begin(), idx.end()), idx.end());
  TapSet out;
  for (std::size_t i : idx) out.ids.push_back(spec.layers[i].id);
  return out;
}

SpecBuilder::SpecBuilder(std::string name, Shape input_shape, std::size_t num_classes) {
  spec_.name = std::move(name);
  spec_.input_shape = std::move(input_shape);
  spec_.num_classes = num_classes;
}

LayerSpec& SpecBuilder::push(std::string id, LayerKind kind, std::vector<std::string> inputs) {
  LayerSpec l;
  l.id = std::move(id);
  l.kind = kind;
  l.inputs = std::move(inputs);
  spec_.layers.push_back(std::move(l));
  return spec_.layers.back();
}

SpecBuilder& SpecBuilder::conv(std::string id, std::size_t out_channels, std::size_t kernel, std::size_t stride,
                               std::size_t pad, bool prunable, std::vector<std::string> inputs) {
  auto& l = push(std::move(id), LayerKind::conv, std::move(inputs));
  l.out_channels = out_channels;
  l.kernel_h = l.kernel_w = kernel;
  l.stride = stride;
  l.pad = pad;
  l.prunable = prunable;
  return *this;
}

SpecBuilder& SpecBuilder::relu(std::string id, std::vector<std::string> inputs) {
  push(std::move(id), LayerKind::relu, std::move(inputs));
  return *this;
}

SpecBuilder& SpecBuilder::maxpool(std::string id, std::vector<std::string> inputs) {
  push(std::move(id), LayerKind::maxpool, std::move(inputs));
  return *this;
}

SpecBuilder& SpecBuilder::affine(std::string id, std::vector<double> scale, std::vector<double> shift,
                                 std::vector<std::string> inputs) {
  auto& l = push(std::move(id), LayerKind::frozen_affine, std::move(inputs));
  l.scale = std::move(scale);
  l.shift = std::move(shift);
  return *this;
}

SpecBuilder& SpecBuilder::flatten(std::string id, std::vector<std::string> inputs) {
  push(std::move(id), LayerKind::flatten, std::move(inputs));
  return *this;
}

SpecBuilder& SpecBuilder::linear(std::string id, std::size_t out_features, std::vector<std::string> inputs) {
  push(std::move(id), LayerKind::linear, std::move(inputs)).out_features = out_features;
  return *this;
}

SpecBuilder& SpecBuilder::add(std::string id, std::vector<std::string> inputs) {
  push(std::move(id), LayerKind::add, std::move(inputs));
  return *this;
}

NetworkSpec SpecBuilder::build() const { return validate(spec_); }

}  // namespace prunekit
