// SPDX-License-Identifier: Apache-2.0
//
// Executes a validated NetworkSpec. Every node output is kept in a Trace so
// that the backward pass can be seeded at the logits, at any tapped
// activation, or both. Optional per-channel multipliers on chosen nodes
// implement importance scaling.
#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "prunekit/netspec.hpp"
#include "prunekit/params.hpp"

namespace prunekit {

/// node index -> per-channel multipliers applied to that node's output.
template <typename T>
using ChannelScaling = std::map<std::size_t, std::vector<T>>;

template <typename T>
struct Trace {
  Tensor<T> input;
  std::vector<Tensor<T>> outputs;                   // per node, after scaling
  std::map<std::size_t, Tensor<T>> unscaled;        // pre-scaling outputs of scaled nodes
  std::vector<std::vector<std::size_t>> argmax;     // maxpool routing
  const Tensor<T>& logits() const { return outputs.back(); }
};

template <typename T>
Trace<T> run_forward(const NetworkSpec& spec, const ParamSet<T>& params, const Tensor<T>& input,
                     const ChannelScaling<T>* scaling = nullptr);

template <typename T>
struct BackwardRequest {
  const Tensor<T>* grad_logits = nullptr;           // may be null
  std::map<std::size_t, Tensor<T>> node_grads;      // extra seeds, e.g. at taps
  ParamSet<T>* param_grads = nullptr;               // accumulate into .grad of trainable params
  const ChannelScaling<T>* scaling = nullptr;       // the scaling used in the forward pass
  ChannelScaling<T>* scaling_grads = nullptr;       // d(loss)/d(multiplier)
  std::size_t stop_at = 0;                          // nodes below this index are not visited
};

template <typename T>
void run_backward(const NetworkSpec& spec, const ParamSet<T>& params, const Trace<T>& trace,
                  const BackwardRequest<T>& request);

template <typename T>
struct TappedForward {
  Tensor<T> logits;
  std::map<std::string, Tensor<T>> taps;
};

/// Plain forward that also returns the post-activation outputs named in
/// `taps`. Observation never alters the logits.
template <typename T>
TappedForward<T> forward_with_taps(const NetworkSpec& spec, const ParamSet<T>& params, const Tensor<T>& input,
                                   const TapSet& taps);

}  // namespace prunekit
