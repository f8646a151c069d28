// SPDX-License-Identifier: Apache-2.0
#include "prunekit/tensor.hpp"

#include <sstream>

namespace prunekit {

SpecError::SpecError(std::vector<std::string> violations)
    : Error([&] {
        std::string msg = "invalid network spec";
        for (const auto& v : violations) msg += "\n  - " + v;
        return msg;
      }()),
      violations_(std::move(violations)) {}

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

}  // namespace prunekit
