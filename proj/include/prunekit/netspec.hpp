// SPDX-License-Identifier: Apache-2.0
//
// Network descriptions: a DAG of layers with explicit input edges, validated
// into a topologically ordered, shape-annotated form that the executor,
// FLOPs accounting and pruning all consume.
#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "prunekit/tensor.hpp"

namespace prunekit {

enum class LayerKind { conv, relu, maxpool, frozen_affine, linear, flatten, add };

std::string_view layer_kind_name(LayerKind kind);
LayerKind parse_layer_kind(std::string_view name);

/// Name of the implicit network input node.
inline constexpr std::string_view kInputId = "input";

struct LayerSpec {
  std::string id;
  LayerKind kind = LayerKind::relu;
  /// Producer ids. Empty means "the previous layer" (or the network input for
  /// the first layer); validate() makes them explicit.
  std::vector<std::string> inputs;

  // conv; in_channels == 0 is inferred from the producer
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel_h = 0;
  std::size_t kernel_w = 0;
  std::size_t stride = 1;
  std::size_t pad = 0;
  bool prunable = false;

  // linear; in_features == 0 is inferred
  std::size_t in_features = 0;
  std::size_t out_features = 0;

  // frozen_affine; empty means scale 1 / shift 0
  std::vector<double> scale;
  std::vector<double> shift;

  /// Per-sample output shape ([C,H,W] or [D]); filled by validate().
  Shape out_shape;
};

struct NetworkSpec {
  static constexpr int kSchemaVersion = 1;

  std::string name;
  Shape input_shape;  // [C,H,W]
  std::size_t num_classes = 0;
  std::vector<LayerSpec> layers;
  bool validated = false;

  std::optional<std::size_t> find(std::string_view id) const;
  /// Throws ConfigError for unknown ids.
  std::size_t index_of(std::string_view id) const;
  const LayerSpec& layer(std::string_view id) const { return layers[index_of(id)]; }
};

/// Returns the spec with layers in topological order, explicit input edges
/// and every node's output shape. Throws SpecError listing every violation
/// (duplicate ids, dangling edges, cycles, channel mismatches, non-integral
/// spatial extents, mismatched junction inputs, bad output).
NetworkSpec validate(NetworkSpec spec);

/// Producer index per input edge of layer `idx`; -1 denotes the network input.
std::vector<long> producer_indices(const NetworkSpec& spec, std::size_t idx);
std::vector<std::size_t> consumer_indices(const NetworkSpec& spec, std::size_t idx);

// Structural queries on a validated spec. Indices refer to spec.layers.

/// The relu that directly activates conv `idx`, reached through a chain of
/// single-consumer frozen_affine nodes.
std::optional<std::size_t> activation_of(const NetworkSpec& spec, std::size_t conv_idx);

/// True when the conv's channels reach an add junction through
/// channel-preserving nodes.
bool feeds_junction(const NetworkSpec& spec, std::size_t conv_idx);

struct ChannelConsumer {
  std::size_t index;          // conv or linear layer
  std::size_t spatial = 1;    // H*W per channel for linear consumers behind a flatten
};

/// Layers whose input channel axis (or flattened columns) is indexed by the
/// filters of conv `idx`.
std::vector<ChannelConsumer> channel_consumers(const NetworkSpec& spec, std::size_t conv_idx);

std::size_t final_conv(const NetworkSpec& spec);

/// The last activation feeding the classifier: the post-activation output of
/// the final convolutional stage.
std::size_t final_activation(const NetworkSpec& spec);

/// Convs that own an activation; these carry importance vectors.
std::vector<std::size_t> scorable_convs(const NetworkSpec& spec);

/// Flagged prunable, owns an activation, does not feed a junction, and is not
/// the final conv.
bool is_prunable(const NetworkSpec& spec, std::size_t conv_idx);
std::vector<std::size_t> prunable_convs(const NetworkSpec& spec);

/// Reconstruction node that represents conv `idx`: its own activation in
/// plain networks, or the activation after the first residual junction its
/// output reaches.
std::size_t tap_node_for(const NetworkSpec& spec, std::size_t conv_idx);

/// Ordered set of node ids whose post-activation outputs are observed.
struct TapSet {
  std::vector<std::string> ids;

  std::size_t size() const noexcept { return ids.size(); }
  bool contains(std::string_view id) const;
  friend bool operator==(const TapSet&, const TapSet&) = default;
};

/// Throws ConfigError if any id is unknown or not an activation (relu) node.
void check_taps(const NetworkSpec& spec, const TapSet& taps);

/// Orders taps by depth and removes duplicates.
TapSet normalized_taps(const NetworkSpec& spec, TapSet taps);

/// Incremental builder for sequential stacks with optional side branches.
class SpecBuilder {
 public:
  SpecBuilder(std::string name, Shape input_shape, std::size_t num_classes);

  SpecBuilder& conv(std::string id, std::size_t out_channels, std::size_t kernel, std::size_t stride = 1,
                    std::size_t pad = 0, bool prunable = true, std::vector<std::string> inputs = {});
  SpecBuilder& relu(std::string id, std::vector<std::string> inputs = {});
  SpecBuilder& maxpool(std::string id, std::vector<std::string> inputs = {});
  SpecBuilder& affine(std::string id, std::vector<double> scale = {}, std::vector<double> shift = {},
                      std::vector<std::string> inputs = {});
  SpecBuilder& flatten(std::string id, std::vector<std::string> inputs = {});
  SpecBuilder& linear(std::string id, std::size_t out_features, std::vector<std::string> inputs = {});
  SpecBuilder& add(std::string id, std::vector<std::string> inputs);

  NetworkSpec build() const;  // validated

 private:
  LayerSpec& push(std::string id, LayerKind kind, std::vector<std::string> inputs);

  NetworkSpec spec_;
};

}  // namespace prunekit
