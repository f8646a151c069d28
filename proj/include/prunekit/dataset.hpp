// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "prunekit/random.hpp"
#include "prunekit/tensor.hpp"

namespace prunekit {

/// Labelled images [N,C,H,W], normalized per channel.
struct Dataset {
  Tensor<float> images;
  std::vector<int> labels;
  std::size_t num_classes = 0;
  std::string split;
  std::vector<double> mean;    // statistics used for normalization
  std::vector<double> stddev;

  std::size_t size() const noexcept { return labels.size(); }
  Shape sample_shape() const { return Shape(images.shape().begin() + 1, images.shape().end()); }
};

struct Batch {
  Tensor<float> images;
  std::vector<int> labels;
};

Batch make_batch(const Dataset& data, std::span<const std::size_t> indices);

/// Index lists covering [0, n) in order, or shuffled when `rng` is given.
/// The last batch may be short.
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size, Rng* rng);

/// Batches per epoch for a dataset of n samples.
std::size_t batches_per_epoch(std::size_t n, std::size_t batch_size);

struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> stddev;
};

ChannelStats channel_stats(const Tensor<float>& images);
/// Applies (x - mean) / stddev per channel and records the statistics.
void normalize(Dataset& data, const ChannelStats& stats);

/// First n samples (n clamped to the dataset size).
Dataset head(const Dataset& data, std::size_t n);

/// Throws ConfigError for an empty dataset or out-of-range labels.
void check_dataset(const Dataset& data);

// --- loaders -------------------------------------------------------------

/// CIFAR-10 binary batches: 3073-byte records (label byte, then 1024 R, 1024 G,
/// 1024 B bytes, row-major within each plane). Pixels are scaled to [0, 1];
/// no normalization is applied. `max_records` = 0 reads everything.
Dataset load_cifar10(const std::vector<std::filesystem::path>& batch_files, std::string split,
                     std::size_t max_records = 0);

/// Standard file names under a cifar-10-batches-bin directory.
std::vector<std::filesystem::path> cifar10_files(const std::filesystem::path& dir, bool train);

/// IDX image (magic 0x00000803) and label (0x00000801) files, big-endian
/// extents. Images become [N,1,H,W] scaled to [0, 1].
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels, std::string split,
                 std::size_t max_records = 0);

struct SynthOptions {
  std::size_t num_classes = 10;
  Shape image_shape{3, 16, 16};
  std::size_t train_size = 2000;
  std::size_t test_size = 1000;
  std::uint64_t seed = 0;
  double noise = 0.6;      // per-pixel Gaussian noise
  double jitter = 2.0;     // blob centre jitter in pixels
};

struct SplitDataset {
  Dataset train;
  Dataset test;
};

/// Seeded K-class Gaussian-blob images. Each class owns a few coloured blobs
/// at fixed positions; samples jitter them, add a distractor blob from another
/// class and pixel noise. Both splits are normalized with the training
/// statistics.
SplitDataset synth(const SynthOptions& options);

}  // namespace prunekit
