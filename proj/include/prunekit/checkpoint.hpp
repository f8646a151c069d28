// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint container, little-endian throughout:
//
//   bytes 0..7    magic "PRUNEKIT"
//   u32           container version
//   u64           header length in bytes
//   header        UTF-8 JSON: toolkit version, stage, seed, resolved config,
//                 network spec(s), optional profile / plan / history, metrics
//                 and the tensor table [{name, shape, offset, count, trainable}]
//   payload       float32 values; table offsets are byte offsets from the
//                 start of the payload
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "prunekit/recovery.hpp"
#include "prunekit/serialize.hpp"

namespace prunekit {

struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::string stage;
  std::uint64_t seed = 0;
  Json config = Json::object();
  Model<float> model;
  std::optional<Model<float>> teacher;  // unpruned reference for recovery stages
  std::optional<ImportanceProfile> profile;
  std::optional<PruningPlan> plan;
  History history;
  Json metrics = Json::object();
};

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);

/// Throws FormatError for a bad magic, truncated data or a version other
/// than Checkpoint::kVersion.
Checkpoint load_checkpoint(const std::filesystem::path& path);

Json history_to_json(const History& history);
History history_from_json(const Json& doc);

}  // namespace prunekit
