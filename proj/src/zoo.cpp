// SPDX-License-Identifier: Apache-2.0
#include "prunekit/zoo.hpp"

namespace prunekit::zoo {

NetworkSpec vgg8(Shape input_shape, std::size_t num_classes, std::size_t base_width) {
  const std::size_t w = base_width;
  SpecBuilder b("vgg8", std::move(input_shape), num_classes);
  b.conv("conv1", w, 3, 1, 1).relu("relu1").conv("conv2", w, 3, 1, 1).relu("relu2").maxpool("pool1");
  b.conv("conv3", 2 * w, 3, 1, 1).relu("relu3").conv("conv4", 2 * w, 3, 1, 1).relu("relu4").maxpool("pool2");
  b.conv("conv5", 4 * w, 3, 1, 1).relu("relu5").conv("conv6", 4 * w, 3, 1, 1).relu("relu6").maxpool("pool3");
  b.flatten("flatten").linear("fc1", 128).relu("relu_fc1").linear("fc2", num_classes);
  return b.build();
}

NetworkSpec resnet3(Shape input_shape, std::size_t num_classes, std::size_t base_width) {
  const std::size_t w = base_width;
  SpecBuilder b("resnet3", std::move(input_shape), num_classes);
  b.conv("stem", w, 3, 1, 1, false).affine("stem_bn").relu("stem_relu");
  std::string prev = "stem_relu";
  std::size_t width = w;
  for (int block = 1; block <= 3; ++block) {
    const std::string n = std::to_string(block);
    const bool down = block > 1;
    if (down) {
      // downsample ahead of the block
      width *= 2;
      b.maxpool("res" + n + "_pool", {prev});
      prev = "res" + n + "_pool";
    }
    b.conv("res" + n + "a", width, 3, 1, 1, true, {prev}).affine("res" + n + "a_bn").relu("res" + n + "a_relu");
    b.conv("res" + n + "b", width, 3, 1, 1, false).affine("res" + n + "b_bn");
    std::string shortcut = prev;
    if (down) {
      b.conv("res" + n + "_proj", width, 1, 1, 0, false, {prev}).affine("res" + n + "_proj_bn");
      shortcut = "res" + n + "_proj_bn";
    }
    b.add("res" + n, {"res" + n + "b_bn", shortcut}).relu("res" + n + "_relu");
    prev = "res" + n + "_relu";
  }
  b.maxpool("pool", {prev}).flatten("flatten").linear("fc", num_classes);
  return b.build();
}

NetworkSpec vgg16(Shape input_shape, std::size_t num_classes, std::size_t width_divisor) {
  const std::vector<std::vector<std::size_t>> stages{{64, 64}, {128, 128}, {256, 256, 256}, {512, 512, 512}, {512, 512, 512}};
  SpecBuilder b("vgg16", std::move(input_shape), num_classes);
  int idx = 0;
  for (std::size_t s = 0; s < stages.size(); ++s) {
    for (std::size_t width : stages[s]) {
      ++idx;
      b.conv("conv" + std::to_string(idx), width / width_divisor, 3, 1, 1).relu("relu" + std::to_string(idx));
    }
    b.maxpool("pool" + std::to_string(s + 1));
  }
  b.flatten("flatten").linear("fc1", 512 / width_divisor).relu("relu_fc1").linear("fc2", num_classes);
  return b.build();
}

std::vector<std::string> names() { return {"vgg8", "resnet3", "vgg16"}; }

NetworkSpec by_name(std::string_view name) {
  if (name == "vgg8") return vgg8();
  if (name == "resnet3") return resnet3();
  if (name == "vgg16") return vgg16();
  throw ConfigError("no bundled network named '" + std::string(name) + "'");
}

}  // namespace prunekit::zoo
