// SPDX-License-Identifier: Apache-2.0
//
// Recovery of a pruned student against its unpruned teacher. The student is
// trained to reproduce the teacher's post-activation outputs at several taps
// at once; a cross-entropy fine-tune and a layer-by-layer baseline are also
// provided.
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <string_view>
#include <vector>

#include "prunekit/dataset.hpp"
#include "prunekit/graph.hpp"
#include "prunekit/pruning.hpp"

namespace prunekit {

enum class MimicFunction { mse, lasso, kl, js };

std::string_view mimic_name(MimicFunction f);
MimicFunction parse_mimic(std::string_view name);

template <typename T>
struct MimicLoss {
  double value = 0.0;
  Tensor<T> grad;  // d(value)/d(student)
};

/// Mean squared difference (sum when `raw_sum`).
template <typename T>
MimicLoss<T> mimic_mse(const Tensor<T>& teacher, const Tensor<T>& student, bool raw_sum = false);

/// Mean absolute difference (sum when `raw_sum`). The subgradient at 0 is 0.
template <typename T>
MimicLoss<T> mimic_lasso(const Tensor<T>& teacher, const Tensor<T>& student, bool raw_sum = false);

/// Softmax over axis 1 at every other index of [B,C,...]; a rank-1 input is a
/// single site.
template <typename T>
Tensor<T> channel_distribution(const Tensor<T>& x);

/// Mean over batch and sites of KL(p || q), p from the teacher and q from the
/// student, natural log, q floored at eps inside the log.
template <typename T>
MimicLoss<T> mimic_kl(const Tensor<T>& teacher, const Tensor<T>& student, double eps = 1e-12);

/// Mean over batch and sites of 0.5 KL(p || m) + 0.5 KL(q || m), m = (p + q) / 2.
template <typename T>
MimicLoss<T> mimic_js(const Tensor<T>& teacher, const Tensor<T>& student, double eps = 1e-12);

template <typename T>
MimicLoss<T> mimic(MimicFunction f, const Tensor<T>& teacher, const Tensor<T>& student, double eps = 1e-12,
                   bool raw_sum = false);

struct MimicConfig {
  MimicFunction function = MimicFunction::kl;
  TapSet taps;
  std::size_t epochs = 6;
  std::size_t batch_size = 64;
  double lr = 1e-3;
  std::size_t lr_step = 0;   // multiply lr by lr_decay every lr_step epochs; 0 disables
  double lr_decay = 0.1;
  std::uint64_t seed = 0;
  double eps = 1e-12;
  bool raw_sum = false;
};

/// Throws ConfigError when taps are empty or invalid, or when kl/js is asked
/// for with fewer than two taps or without the final activation.
void check_mimic_config(const NetworkSpec& spec, const MimicConfig& config);

struct TapLoss {
  std::string tap;
  double loss = 0.0;
};

struct ReconstructionLoss {
  double value = 0.0;  // mean of per_tap
  std::vector<TapLoss> per_tap;
};

/// Teacher and student tapped forwards on the same batch and the mean
/// per-tap mimic loss. With `grads` set, d(loss)/d(param) of the student's
/// trainable parameters is accumulated into it (the teacher gets none).
template <typename T>
ReconstructionLoss reconstruction_loss(const Model<T>& teacher, const Model<T>& student, const MimicConfig& config,
                                       const Tensor<T>& images, ParamSet<T>* grads = nullptr);

/// One line of a training history. `tap` is "total" for the mean over taps
/// or "ce" for cross-entropy stages; accuracy is NaN when not evaluated.
struct HistoryRow {
  std::string stage;
  std::size_t epoch = 0;
  std::string tap;
  double loss = 0.0;
  double accuracy = std::numeric_limits<double>::quiet_NaN();
  friend bool operator==(const HistoryRow&, const HistoryRow&) = default;
};

using History = std::vector<HistoryRow>;

void write_history_tsv(const History& history, const std::filesystem::path& path);
History read_history_tsv(const std::filesystem::path& path);

struct RecoverySession {
  Model<float> teacher;  // frozen
  Model<float> student;
  MimicConfig config;
  History history;
  std::uint64_t steps = 0;

  /// Validates the config and that every tap has the same shape in both
  /// networks.
  RecoverySession(Model<float> teacher, Model<float> student, MimicConfig config);
};

/// Adam on the reconstruction loss; the student's classifier stays frozen
/// and is unfrozen again afterwards. `eval` (optional) is scored after each
/// epoch.
void recover(RecoverySession& session, const Dataset& data, const Dataset* eval = nullptr);

struct TrainOptions {
  std::size_t epochs = 10;
  std::size_t batch_size = 64;
  double lr = 1e-3;
  std::size_t lr_step = 0;
  double lr_decay = 0.1;
  std::uint64_t seed = 0;
  std::string stage = "finetune";
};

struct TrainResult {
  History history;
  std::uint64_t steps = 0;
};

/// Cross-entropy training of every trainable parameter.
TrainResult finetune(Model<float>& model, const Dataset& data, const TrainOptions& options,
                     const Dataset* eval = nullptr);

struct EvalResult {
  double accuracy = 0.0;  // top-1, in [0, 1]
  double loss = 0.0;      // mean cross-entropy
  std::size_t samples = 0;
};

EvalResult evaluate(const Model<float>& model, const Dataset& data, std::size_t batch_size = 256);

struct IterativeOptions {
  std::size_t epochs_per_layer = 1;
  std::size_t batch_size = 64;
  double lr = 1e-3;
  std::uint64_t seed = 0;
};

struct IterativeLayerRecord {
  std::string pruned;
  std::vector<std::string> consumers;
  std::uint64_t steps = 0;
  double final_loss = 0.0;
};

struct IterativeResult {
  Model<float> student;
  std::vector<IterativeLayerRecord> layers;
  std::uint64_t steps = 0;
  History history;
};

/// Prunes one conv at a time in depth order. After each, the weights of the
/// layers consuming its channels are fit by MSE to the teacher's
/// pre-activation outputs of those layers.
IterativeResult iterative_recover_baseline(const Model<float>& teacher, const PruningPlan& plan, const Dataset& data,
                                           const IterativeOptions& options);

}  // namespace prunekit
