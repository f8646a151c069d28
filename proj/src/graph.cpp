// SPDX-License-Identifier: Apache-2.0
#include "prunekit/graph.hpp"

#include <optional>

#include "prunekit/ops.hpp"

namespace prunekit {

namespace {

std::vector<std::vector<long>> edges(const NetworkSpec& spec) {
  std::map<std::string_view, long> by_id;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) by_id.emplace(spec.layers[i].id, static_cast<long>(i));
  std::vector<std::vector<long>> out(spec.layers.size());
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    for (const auto& in : spec.layers[i].inputs) out[i].push_back(in == kInputId ? -1L : by_id.at(in));
  }
  return out;
}

template <typename T>
Shape batched(std::size_t batch, const Shape& per_sample) {
  Shape s{batch};
  s.insert(s.end(), per_sample.begin(), per_sample.end());
  return s;
}

template <typename T>
void accumulate(std::optional<Tensor<T>>& slot, Tensor<T> g) {
  if (!slot) {
    slot = std::move(g);
    return;
  }
  for (std::size_t i = 0; i < g.size(); ++i) (*slot)[i] += g[i];
}

}  // namespace

template <typename T>
Trace<T> run_forward(const NetworkSpec& spec, const ParamSet<T>& params, const Tensor<T>& input,
                     const ChannelScaling<T>* scaling) {
  if (!spec.validated) throw ConfigError("forward needs a validated spec");
  if (input.rank() != 4 || Shape(input.shape().begin() + 1, input.shape().end()) != spec.input_shape) {
    throw ShapeError("network '" + spec.name + "' expects [B," + to_string(spec.input_shape).substr(1) + " input, got " +
                     to_string(input.shape()));
  }
  const auto producers = edges(spec);
  const std::size_t batch = input.dim(0);
  Trace<T> trace;
  trace.input = input;
  trace.outputs.resize(spec.layers.size());
  trace.argmax.resize(spec.layers.size());
  auto in_of = [&](std::size_t i, std::size_t k = 0) -> const Tensor<T>& {
    const long p = producers[i][k];
    return p < 0 ? trace.input : trace.outputs[static_cast<std::size_t>(p)];
  };
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& l = spec.layers[i];
    Tensor<T> out;
    switch (l.kind) {
      case LayerKind::conv:
        out = conv2d_forward(in_of(i), params.at(weight_key(l.id)).value, {l.stride, l.pad});
        break;
      case LayerKind::relu:
        out = relu_forward(in_of(i));
        break;
      case LayerKind::maxpool: {
        auto r = maxpool2x2_forward(in_of(i));
        out = std::move(r.output);
        trace.argmax[i] = std::move(r.argmax);
        break;
      }
      case LayerKind::frozen_affine:
        out = frozen_affine_forward<T>(in_of(i), params.at(scale_key(l.id)).value.data(),
                                       params.at(shift_key(l.id)).value.data());
        break;
      case LayerKind::flatten:
        out = in_of(i).reshaped(batched<T>(batch, l.out_shape));
        break;
      case LayerKind::linear:
        out = linear_forward(in_of(i), params.at(weight_key(l.id)).value);
        break;
      case LayerKind::add: {
        out = in_of(i, 0);
        for (std::size_t k = 1; k < producers[i].size(); ++k) {
          const Tensor<T>& x = in_of(i, k);
          for (std::size_t e = 0; e < out.size(); ++e) out[e] += x[e];
        }
        break;
      }
    }
    if (scaling) {
      if (auto it = scaling->find(i); it != scaling->end()) {
        Tensor<T> scaled = scale_channels<T>(out, it->second);
        trace.unscaled.emplace(i, std::move(out));
        out = std::move(scaled);
      }
    }
    trace.outputs[i] = std::move(out);
  }
  return trace;
}

template <typename T>
void run_backward(const NetworkSpec& spec, const ParamSet<T>& params, const Trace<T>& trace,
                  const BackwardRequest<T>& request) {
  const auto producers = edges(spec);
  const std::size_t n = spec.layers.size();
  std::vector<std::optional<Tensor<T>>> grads(n);
  if (request.grad_logits) {
    if (request.grad_logits->shape() != trace.logits().shape()) throw ShapeError("logit gradient shape mismatch");
    grads[n - 1] = *request.grad_logits;
  }
  for (const auto& [idx, g] : request.node_grads) {
    if (g.shape() != trace.outputs.at(idx).shape()) {
      throw ShapeError("gradient seed for '" + spec.layers[idx].id + "' has shape " + to_string(g.shape()) +
                       ", node output is " + to_string(trace.outputs[idx].shape()));
    }
    accumulate(grads[idx], g);
  }

  auto wants = [&](const std::string& key) -> Param<T>* {
    if (!request.param_grads) return nullptr;
    auto it = request.param_grads->find(key);
    return (it != request.param_grads->end() && it->second.trainable) ? &it->second : nullptr;
  };
  auto in_of = [&](std::size_t i, std::size_t k = 0) -> const Tensor<T>& {
    const long p = producers[i][k];
    return p < 0 ? trace.input : trace.outputs[static_cast<std::size_t>(p)];
  };
  // Reverse topological sweep; nodes without an incoming gradient are skipped.
  for (std::size_t i = n; i-- > request.stop_at;) {
    if (!grads[i]) continue;
    Tensor<T> g = std::move(*grads[i]);
    grads[i].reset();
    const auto& l = spec.layers[i];

    if (request.scaling) {
      if (auto it = request.scaling->find(i); it != request.scaling->end()) {
        const Tensor<T>& raw = trace.unscaled.at(i);
        const std::vector<T>& f = it->second;
        const std::size_t c = f.size();
        const std::size_t inner = raw.size() / (raw.dim(0) * c);
        if (request.scaling_grads) {
          std::vector<T>& sg = (*request.scaling_grads)[i];
          sg.assign(c, T{0});
          std::size_t e = 0;
          for (std::size_t b = 0; b < raw.dim(0); ++b) {
            for (std::size_t ch = 0; ch < c; ++ch) {
              T acc{0};
              for (std::size_t k = 0; k < inner; ++k, ++e) acc += g[e] * raw[e];
              sg[ch] += acc;
            }
          }
        }
        g = scale_channels<T>(g, f);
      }
    }

    auto send = [&](std::size_t k, Tensor<T> gin) {
      const long p = producers[i][k];
      if (p >= 0) accumulate(grads[static_cast<std::size_t>(p)], std::move(gin));
    };
    const bool input_is_network_input = producers[i][0] < 0;

    switch (l.kind) {
      case LayerKind::conv: {
        Param<T>* target = wants(weight_key(l.id));
        if (input_is_network_input && !target) break;
        auto cg = conv2d_backward(g, in_of(i), params.at(weight_key(l.id)).value, {l.stride, l.pad},
                                  !input_is_network_input, target != nullptr);
        if (target) {
          for (std::size_t e = 0; e < cg.weight.size(); ++e) target->grad[e] += cg.weight[e];
        }
        if (!input_is_network_input) send(0, std::move(cg.input));
        break;
      }
      case LayerKind::relu:
        if (!input_is_network_input) send(0, relu_backward(g, in_of(i)));
        break;
      case LayerKind::maxpool:
        if (!input_is_network_input) send(0, maxpool2x2_backward<T>(g, trace.argmax[i], in_of(i).shape()));
        break;
      case LayerKind::frozen_affine:
        if (!input_is_network_input) send(0, frozen_affine_backward<T>(g, params.at(scale_key(l.id)).value.data()));
        break;
      case LayerKind::flatten:
        if (!input_is_network_input) send(0, g.reshaped(in_of(i).shape()));
        break;
      case LayerKind::linear: {
        auto lg = linear_backward(g, in_of(i), params.at(weight_key(l.id)).value);
        if (Param<T>* target = wants(weight_key(l.id))) {
          for (std::size_t e = 0; e < lg.weight.size(); ++e) target->grad[e] += lg.weight[e];
        }
        if (!input_is_network_input) send(0, std::move(lg.input));
        break;
      }
      case LayerKind::add:
        for (std::size_t k = 0; k < producers[i].size(); ++k) send(k, g);
        break;
    }
  }
}

template <typename T>
TappedForward<T> forward_with_taps(const NetworkSpec& spec, const ParamSet<T>& params, const Tensor<T>& input,
                                   const TapSet& taps) {
  check_taps(spec, taps);
  Trace<T> trace = run_forward(spec, params, input);
  TappedForward<T> out;
  for (const auto& id : taps.ids) out.taps.emplace(id, trace.outputs[spec.index_of(id)]);
  out.logits = std::move(trace.outputs.back());
  return out;
}

#define PRUNEKIT_INSTANTIATE_GRAPH(T)                                                                               \
  template Trace<T> run_forward<T>(const NetworkSpec&, const ParamSet<T>&, const Tensor<T>&, const ChannelScaling<T>*); \
  template void run_backward<T>(const NetworkSpec&, const ParamSet<T>&, const Trace<T>&, const BackwardRequest<T>&); \
  template TappedForward<T> forward_with_taps<T>(const NetworkSpec&, const ParamSet<T>&, const Tensor<T>&,         \
                                                 const TapSet&);

PRUNEKIT_INSTANTIATE_GRAPH(float)
PRUNEKIT_INSTANTIATE_GRAPH(double)

}  // namespace prunekit
