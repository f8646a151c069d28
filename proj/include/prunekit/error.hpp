// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace prunekit {

/// Base class for every error thrown by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor extents disagree with what an operation requires.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid parameters, configuration or an unsatisfiable request.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A network description failed validation. Carries every violation found.
class SpecError : public Error {
 public:
  explicit SpecError(std::vector<std::string> violations);
  const std::vector<std::string>& violations() const noexcept { return violations_; }

 private:
  std::vector<std::string> violations_;
};

/// Malformed or incompatible file content (datasets, checkpoints, configs).
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace prunekit
