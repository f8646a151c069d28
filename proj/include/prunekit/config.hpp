// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "prunekit/dataset.hpp"
#include "prunekit/importance.hpp"
#include "prunekit/pruning.hpp"
#include "prunekit/recovery.hpp"
#include "prunekit/serialize.hpp"

namespace prunekit {

struct DataConfig {
  std::string source = "synth";  // synth | cifar10 | idx
  // synth
  std::size_t classes = 10;
  Shape image_shape{3, 16, 16};
  std::size_t train_size = 2000;
  std::size_t test_size = 1000;
  std::uint64_t seed = 0;
  double noise = 0.6;
  double jitter = 2.0;
  // cifar10: directory of *.bin batches
  std::string cifar_dir;
  // idx
  std::string train_images, train_labels, test_images, test_labels;
  // file sources: 0 reads everything
  std::size_t max_train = 0;
  std::size_t max_test = 0;
};

struct NetworkConfig {
  std::string arch = "vgg8";  // bundled name, or a path to a spec document
  std::size_t width = 16;
  std::uint64_t init_seed = 0;
};

struct StageConfig {
  std::size_t epochs = 1;
  double lr = 1e-3;
  std::size_t batch_size = 64;
  std::size_t lr_step = 0;
  double lr_decay = 0.1;
  std::uint64_t seed = 0;
};

struct ImportanceConfig {
  double lambda = 1.0;
  std::size_t epochs = 3;
  double lr = 1e-2;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
  std::string reduction = "mean";  // mean | sum
};

struct PlanConfig {
  std::string target_kind = "flops";  // filters | flops | speedup
  double target = 0.5;
  std::string strategy = "beta";
  std::size_t crucial = 3;  // crucial node count, final activation included
  std::size_t floor = 1;
  std::uint64_t seed = 0;
  bool fold_beta = false;
};

struct RecoverConfig {
  std::string mimic = "kl";
  std::vector<std::string> taps;  // empty: the plan's crucial nodes
  StageConfig stage{6, 1e-3, 64, 0, 0.1, 0};
  double eps = 1e-12;
  bool raw_sum = false;
};

struct IterativeConfig {
  std::size_t epochs_per_layer = 1;
  double lr = 1e-3;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
};

/// Every knob of every command. All fields have defaults; documents may set
/// any subset and unknown keys are rejected.
struct RunConfig {
  DataConfig data;
  NetworkConfig network;
  StageConfig train{12, 2e-3, 64, 8, 0.1, 0};
  ImportanceConfig importance;
  PlanConfig plan;
  RecoverConfig recover;
  StageConfig finetune{4, 2e-4, 64, 0, 0.1, 0};
  IterativeConfig iterative;
  std::string out_dir = "run";
};

Json config_to_json(const RunConfig& config);
/// Starts from `base` and overrides whatever `doc` sets.
RunConfig config_from_json(const Json& doc, RunConfig base = {});
RunConfig load_config(const std::filesystem::path& path);

/// Applies "section.key=value" overrides (value parsed as JSON, falling back
/// to a string).
RunConfig apply_overrides(const RunConfig& config, const std::vector<std::string>& overrides);

/// Throws ConfigError for values no command could use.
void check_config(const RunConfig& config);

SplitDataset load_data(const DataConfig& config);
NetworkSpec load_network(const NetworkConfig& config, const Shape& input_shape, std::size_t num_classes);

ImportanceOptions importance_options(const RunConfig& config);
PlanOptions plan_options(const RunConfig& config);
TrainOptions train_options(const StageConfig& stage, std::string name);
IterativeOptions iterative_options(const RunConfig& config);
ScoreReduction score_reduction(const RunConfig& config);

}  // namespace prunekit
