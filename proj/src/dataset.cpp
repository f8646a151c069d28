// SPDX-License-Identifier: Apache-2.0
#include "prunekit/dataset.hpp"

#include <array>
#include <cmath>
#include <fstream>
#include <iterator>

namespace prunekit {

Batch make_batch(const Dataset& data, std::span<const std::size_t> indices) {
  Batch b{take_rows(data.images, indices), {}};
  b.labels.reserve(indices.size());
  for (std::size_t i : indices) b.labels.push_back(data.labels.at(i));
  return b;
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size, Rng* rng) {
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  if (rng) rng->shuffle(order.begin(), order.end());
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    out.emplace_back(order.begin() + static_cast<long>(start), order.begin() + static_cast<long>(end));
  }
  return out;
}

std::size_t batches_per_epoch(std::size_t n, std::size_t batch_size) {
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  return (n + batch_size - 1) / batch_size;
}

ChannelStats channel_stats(const Tensor<float>& images) {
  if (images.rank() != 4 || images.dim(0) == 0) throw ShapeError("channel_stats expects a non-empty [N,C,H,W] tensor");
  const std::size_t n = images.dim(0), c = images.dim(1), inner = images.dim(2) * images.dim(3);
  ChannelStats s{std::vector<double>(c, 0.0), std::vector<double>(c, 0.0)};
  for (std::size_t ch = 0; ch < c; ++ch) {
    double sum = 0.0, sq = 0.0;
    for (std::size_t b = 0; b < n; ++b) {
      const float* p = images.data().data() + (b * c + ch) * inner;
      for (std::size_t k = 0; k < inner; ++k) {
        sum += p[k];
        sq += static_cast<double>(p[k]) * p[k];
      }
    }
    const double count = static_cast<double>(n * inner);
    s.mean[ch] = sum / count;
    const double var = std::max(0.0, sq / count - s.mean[ch] * s.mean[ch]);
    s.stddev[ch] = var > 1e-12 ? std::sqrt(var) : 1.0;
  }
  return s;
}

void normalize(Dataset& data, const ChannelStats& stats) {
  const std::size_t n = data.images.dim(0), c = data.images.dim(1), inner = data.images.dim(2) * data.images.dim(3);
  if (stats.mean.size() != c || stats.stddev.size() != c) throw ShapeError("normalization statistics do not match channels");
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      float* p = data.images.data().data() + (b * c + ch) * inner;
      for (std::size_t k = 0; k < inner; ++k) {
        p[k] = static_cast<float>((p[k] - stats.mean[ch]) / stats.stddev[ch]);
      }
    }
  }
  data.mean = stats.mean;
  data.stddev = stats.stddev;
}

Dataset head(const Dataset& data, std::size_t n) {
  n = std::min(n, data.size());
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  Dataset out = data;
  out.images = take_rows(data.images, idx);
  out.labels.assign(data.labels.begin(), data.labels.begin() + static_cast<long>(n));
  return out;
}

void check_dataset(const Dataset& data) {
  if (data.size() == 0) throw ConfigError("dataset '" + data.split + "' is empty");
  if (data.images.rank() != 4 || data.images.dim(0) != data.labels.size()) {
    throw ShapeError("dataset images " + to_string(data.images.shape()) + " do not match " +
                     std::to_string(data.labels.size()) + " labels");
  }
  for (int l : data.labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= data.num_classes) {
      throw ConfigError("label " + std::to_string(l) + " outside [0, " + std::to_string(data.num_classes) + ")");
    }
  }
}

namespace {

std::vector<unsigned char> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t big_endian_u32(const std::vector<unsigned char>& b, std::size_t off) {
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
         std::uint32_t{b[off + 3]};
}

}  // namespace

Dataset load_cifar10(const std::vector<std::filesystem::path>& batch_files, std::string split, std::size_t max_records) {
  constexpr std::size_t kRecord = 3073, kPlane = 1024;
  Dataset d;
  d.num_classes = 10;
  d.split = std::move(split);
  std::vector<float> pixels;
  for (const auto& file : batch_files) {
    const auto bytes = read_bytes(file);
    if (bytes.empty() || bytes.size() % kRecord != 0) {
      throw FormatError("'" + file.string() + "' is " + std::to_string(bytes.size()) +
                        " bytes, not a whole number of 3073-byte CIFAR-10 records");
    }
    for (std::size_t r = 0; r < bytes.size() / kRecord; ++r) {
      if (max_records && d.labels.size() == max_records) break;
      const unsigned char* rec = bytes.data() + r * kRecord;
      if (rec[0] > 9) throw FormatError("CIFAR-10 label " + std::to_string(rec[0]) + " out of range");
      d.labels.push_back(rec[0]);
      for (std::size_t i = 0; i < 3 * kPlane; ++i) pixels.push_back(rec[1 + i] / 255.0f);
    }
  }
  if (d.labels.empty()) throw FormatError("no CIFAR-10 records read");
  d.images = Tensor<float>({d.labels.size(), 3, 32, 32}, std::move(pixels));
  return d;
}

std::vector<std::filesystem::path> cifar10_files(const std::filesystem::path& dir, bool train) {
  if (!train) return {dir / "test_batch.bin"};
  std::vector<std::filesystem::path> out;
  for (int i = 1; i <= 5; ++i) out.push_back(dir / ("data_batch_" + std::to_string(i) + ".bin"));
  return out;
}

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels, std::string split,
                 std::size_t max_records) {
  const auto ib = read_bytes(images);
  const auto lb = read_bytes(labels);
  if (ib.size() < 16 || big_endian_u32(ib, 0) != 0x00000803) throw FormatError("'" + images.string() + "' has a bad IDX image magic");
  if (lb.size() < 8 || big_endian_u32(lb, 0) != 0x00000801) throw FormatError("'" + labels.string() + "' has a bad IDX label magic");
  const std::size_t n = big_endian_u32(ib, 4), h = big_endian_u32(ib, 8), w = big_endian_u32(ib, 12);
  const std::size_t nl = big_endian_u32(lb, 4);
  if (n != nl) throw FormatError("IDX record-count mismatch: " + std::to_string(n) + " images, " + std::to_string(nl) + " labels");
  if (ib.size() != 16 + n * h * w) throw FormatError("IDX image file is truncated");
  if (lb.size() != 8 + n) throw FormatError("IDX label file is truncated");
  const std::size_t count = max_records ? std::min(max_records, n) : n;
  Dataset d;
  d.split = std::move(split);
  std::vector<float> pixels(count * h * w);
  for (std::size_t i = 0; i < pixels.size(); ++i) pixels[i] = ib[16 + i] / 255.0f;
  int max_label = 0;
  for (std::size_t i = 0; i < count; ++i) {
    d.labels.push_back(lb[8 + i]);
    max_label = std::max(max_label, d.labels.back());
  }
  d.num_classes = static_cast<std::size_t>(max_label) + 1;
  d.images = Tensor<float>({count, 1, h, w}, std::move(pixels));
  return d;
}

SplitDataset synth(const SynthOptions& o) {
  if (o.num_classes < 2) throw ConfigError("synthetic data needs at least two classes");
  if (o.train_size == 0 || o.test_size == 0) throw ConfigError("synthetic data request is empty");
  if (o.image_shape.size() != 3 || numel(o.image_shape) == 0) throw ConfigError("synthetic image shape must be [C,H,W]");
  const std::size_t c = o.image_shape[0], h = o.image_shape[1], w = o.image_shape[2];
  constexpr std::size_t kBlobs = 3;

  struct Blob {
    double y, x, sigma;
    std::vector<double> colour;
  };
  Rng proto_rng(o.seed);
  std::vector<std::array<Blob, kBlobs>> classes(o.num_classes);
  for (auto& cls : classes) {
    for (auto& blob : cls) {
      blob.y = proto_rng.uniform(0.15, 0.85) * static_cast<double>(h);
      blob.x = proto_rng.uniform(0.15, 0.85) * static_cast<double>(w);
      blob.sigma = proto_rng.uniform(0.08, 0.16) * static_cast<double>(std::min(h, w));
      blob.colour.resize(c);
      for (auto& v : blob.colour) v = proto_rng.uniform(-1.0, 1.0);
    }
  }

  auto draw = [&](std::size_t n, Rng& rng, std::string split) {
    Dataset d;
    d.num_classes = o.num_classes;
    d.split = std::move(split);
    d.images = Tensor<float>({n, c, h, w});
    for (std::size_t s = 0; s < n; ++s) {
      const auto label = static_cast<int>(rng.below(o.num_classes));
      d.labels.push_back(label);
      float* img = d.images.data().data() + s * c * h * w;
      auto paint = [&](const Blob& blob, double amp) {
        const double cy = blob.y + rng.uniform(-o.jitter, o.jitter);
        const double cx = blob.x + rng.uniform(-o.jitter, o.jitter);
        const double inv = 1.0 / (2.0 * blob.sigma * blob.sigma);
        for (std::size_t y = 0; y < h; ++y) {
          for (std::size_t x = 0; x < w; ++x) {
            const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
            const double g = amp * std::exp(-(dy * dy + dx * dx) * inv);
            for (std::size_t ch = 0; ch < c; ++ch) img[(ch * h + y) * w + x] += static_cast<float>(g * blob.colour[ch]);
          }
        }
      };
      for (const auto& blob : classes[static_cast<std::size_t>(label)]) paint(blob, rng.uniform(0.6, 1.4));
      std::size_t other = rng.below(o.num_classes - 1);
      if (other >= static_cast<std::size_t>(label)) ++other;
      paint(classes[other][rng.below(kBlobs)], rng.uniform(0.3, 0.9));
      for (std::size_t i = 0; i < c * h * w; ++i) img[i] += static_cast<float>(o.noise * rng.normal());
    }
    return d;
  };

  Rng train_rng(o.seed * 0x9E3779B97F4A7C15ULL + 1);
  Rng test_rng(o.seed * 0x9E3779B97F4A7C15ULL + 2);
  SplitDataset out{draw(o.train_size, train_rng, "train"), draw(o.test_size, test_rng, "test")};
  const ChannelStats stats = channel_stats(out.train.images);
  normalize(out.train, stats);
  normalize(out.test, stats);
  return out;
}

}  // namespace prunekit
