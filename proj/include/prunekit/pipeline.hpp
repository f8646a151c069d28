// SPDX-License-Identifier: Apache-2.0
//
// The command surface shared by the CLI and the Python module. Each stage
// reads the previous stage's checkpoint, writes its own, and appends one
// record per event to a line-delimited JSON run-log.
#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "prunekit/checkpoint.hpp"
#include "prunekit/config.hpp"

namespace prunekit {

/// Appends JSON records, one per line. Every record carries the command,
/// event, toolkit version and a wall-clock "ts" field; everything except
/// "ts" is deterministic for a fixed config.
class RunLog {
 public:
  RunLog() = default;  // discards records
  explicit RunLog(const std::filesystem::path& path, bool truncate = false);
  void write(const std::string& command, const std::string& event, Json fields = Json::object());
  const std::vector<Json>& records() const noexcept { return records_; }

 private:
  std::optional<std::ofstream> out_;
  std::vector<Json> records_;
};

/// Reads a run-log; with `strip_time` the "ts" field is removed.
std::vector<Json> read_run_log(const std::filesystem::path& path, bool strip_time = true);

/// Config, lazily loaded data and the log for a sequence of commands.
class Session {
 public:
  Session(RunConfig config, RunLog& log);
  const RunConfig& config() const noexcept { return config_; }
  const SplitDataset& data();
  RunLog& log() noexcept { return log_; }

 private:
  RunConfig config_;
  RunLog& log_;
  std::optional<SplitDataset> data_;
};

Checkpoint cmd_train(Session& s);
Checkpoint cmd_learn_importance(Session& s, Checkpoint in);
Checkpoint cmd_plan(Session& s, Checkpoint in);
Checkpoint cmd_prune(Session& s, Checkpoint in);
Checkpoint cmd_recover(Session& s, Checkpoint in);
Checkpoint cmd_finetune(Session& s, Checkpoint in);
/// Top-1 accuracy, loss and FLOPs, stored in the checkpoint's metrics.
Checkpoint cmd_eval(Session& s, Checkpoint in);
/// Layer-by-layer baseline on a pruned checkpoint's teacher and plan.
Checkpoint cmd_iterative(Session& s, Checkpoint in);

struct PipelineResult {
  std::vector<std::filesystem::path> checkpoints;
  Json summary;
};

/// train -> learn-importance -> plan -> prune -> eval -> recover -> finetune
/// -> eval, writing NN_<stage>.ckpt files, history.tsv and summary.json into
/// config.out_dir and logging to out_dir/runlog.jsonl. An identity plan
/// skips recover and finetune.
PipelineResult run_pipeline(const RunConfig& config);

/// Aggregates finished runs (checkpoints or run directories) into plot-ready
/// series: loss per tap per epoch, accuracy against tap count and against
/// mimic function. Returns the summary written to out_dir/report.json.
Json write_report(const std::vector<std::filesystem::path>& inputs, const std::filesystem::path& out_dir);

}  // namespace prunekit
