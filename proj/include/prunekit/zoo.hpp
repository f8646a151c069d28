// SPDX-License-Identifier: Apache-2.0
//
// Reference architectures bundled with the toolkit.
#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "prunekit/netspec.hpp"

namespace prunekit::zoo {

/// Six 3x3 convs in three pooled stages plus a two-layer classifier head.
/// Stage widths are base, 2*base, 4*base.
NetworkSpec vgg8(Shape input_shape = {3, 16, 16}, std::size_t num_classes = 10, std::size_t base_width = 16);

/// Stem conv, three residual blocks (the last two max-pool their input and widen
/// through a 1x1 projection shortcut) and a linear classifier. Every conv is followed by a
/// frozen affine stage.
NetworkSpec resnet3(Shape input_shape = {3, 16, 16}, std::size_t num_classes = 10, std::size_t base_width = 16);

/// VGG-16 layout for 32x32 inputs (13 convs, five pools, 512-wide head).
/// Used for FLOPs arithmetic; width_divisor shrinks every layer.
NetworkSpec vgg16(Shape input_shape = {3, 32, 32}, std::size_t num_classes = 10, std::size_t width_divisor = 1);

std::vector<std::string> names();
/// Looks up a bundled spec by name with its default arguments.
NetworkSpec by_name(std::string_view name);

}  // namespace prunekit::zoo
