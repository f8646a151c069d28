// SPDX-License-Identifier: Apache-2.0
//
// Structured-text (JSON) forms of specs, importance profiles and plans.
// Every document carries a schema_version; readers reject other versions and
// unknown keys.
#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "prunekit/importance.hpp"
#include "prunekit/netspec.hpp"
#include "prunekit/pruning.hpp"

namespace prunekit {

using Json = nlohmann::ordered_json;

inline constexpr int kDocumentVersion = 1;

Json spec_to_json(const NetworkSpec& spec);
/// Parses and validates.
NetworkSpec spec_from_json(const Json& doc);

Json profile_to_json(const ImportanceProfile& profile);
ImportanceProfile profile_from_json(const Json& doc);

Json plan_to_json(const PruningPlan& plan);
PruningPlan plan_from_json(const Json& doc);

Json scores_to_json(const std::vector<LayerScore>& scores);
Json plan_stats_to_json(const PlanStats& stats);

/// Keep-mask as a string of '1' (kept) and '0' (dropped).
std::string mask_bits(const std::vector<bool>& keep);
std::vector<bool> parse_mask_bits(const std::string& bits);

Json read_json_file(const std::filesystem::path& path);
void write_json_file(const Json& doc, const std::filesystem::path& path);

/// Tracks which keys of an object were read so leftovers can be rejected.
class StrictObject {
 public:
  StrictObject(const Json& doc, std::string context);
  bool has(const std::string& key) const;
  const Json& at(const std::string& key);
  template <typename V>
  V get(const std::string& key) {
    try {
      return at(key).get<V>();
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(context_ + "." + key + ": " + e.what());
    }
  }
  template <typename V>
  void read(const std::string& key, V& out) {
    if (has(key)) out = get<V>(key);
  }
  /// Throws ConfigError listing keys that were never read.
  void finish() const;

 private:
  const Json& doc_;
  std::string context_;
  std::vector<std::string> used_;
};

}  // namespace prunekit
