#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <list>
#include <memory>
#include <mutex>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "srfm/image.hpp"
#include "srfm/tensor.hpp"

namespace srfm::data {

using ChannelMean = std::array<double, 3>;

struct DatasetEntry {
  std::string path;
  int width = 0;
  int height = 0;
};

/// Decoded-on-demand image corpus with its per-channel training mean.
struct DatasetIndex {
  std::vector<std::string> roots;
  std::string split = "train";
  std::vector<DatasetEntry> entries;
  /// Mean over every pixel of the training split, in [0, 1] units.
  ChannelMean channel_mean{0.0, 0.0, 0.0};

  void save(const std::filesystem::path& path) const;
  static DatasetIndex load(const std::filesystem::path& path);
};

void to_json(nlohmann::json& j, const DatasetIndex& idx);
void from_json(const nlohmann::json& j, DatasetIndex& idx);

/// Pixel-weighted per-channel mean of a set of RGB images.
ChannelMean compute_channel_mean(std::span<const Image> images);

/// Scan `roots` recursively for lossless images, sorted lexicographically by
/// path. Undecodable files are skipped with a warning; an empty result is a
/// ConfigError. The channel mean is computed for the train split; other
/// splits take `train_mean` when given (zeros otherwise).
DatasetIndex ingest_dataset(const std::vector<std::filesystem::path>& roots,
                            const std::string& split,
                            const ChannelMean* train_mean = nullptr);

/// One of the 8 symmetries of the square: flips first, then a
/// counter-clockwise rotation.
struct Augmentation {
  int rotation = 0;  // degrees: 0, 90, 180 or 270
  bool hflip = false;
  bool vflip = false;

  /// Canonical dihedral element index in [0, 8).
  [[nodiscard]] int dihedral_index() const;
  friend bool operator==(const Augmentation&, const Augmentation&) = default;
};

Image apply_augmentation(const Image& img, const Augmentation& aug);

/// Which side of a training pair is mean-subtracted.
enum class ZeroCenter { Both, LowResOnly, None };

std::string to_string(ZeroCenter z);
ZeroCenter parse_zero_center(const std::string& s);

void subtract_mean(Image& img, const ChannelMean& mean);
void add_mean(Image& img, const ChannelMean& mean);

/// Aligned low/high-resolution training sample.
struct PatchPair {
  Image lr;
  Image hr;
  Augmentation augmentation;
  std::size_t source = 0;
  int x0 = 0;
  int y0 = 0;
};

/// (N, C, h, w) low-resolution and (N, C, s h, s w) high-resolution batches.
struct PatchBatch {
  Tensor lr;
  Tensor hr;
};

PatchBatch make_batch(std::span<const PatchPair> pairs);

struct SamplerOptions {
  int hr_patch = 96;
  int scale = 4;
  bool augment = true;
  ZeroCenter zero_center = ZeroCenter::Both;
  /// Decoded images kept in memory.
  std::size_t cache_capacity = 32;
};

/// Draws random patch pairs: crop an HR window, apply a random symmetry,
/// then synthesize the LR patch by bicubic downscaling, and zero-center.
/// Images smaller than the patch are skipped.
///
/// Sampling is a pure function of (index, rng state); the decode cache is
/// internal and guarded for concurrent use.
class PatchSampler {
 public:
  PatchSampler(DatasetIndex index, SamplerOptions options);
  /// In-memory corpus (tests and tools); mean taken from `mean`.
  PatchSampler(std::vector<Image> images, ChannelMean mean, SamplerOptions options);

  [[nodiscard]] PatchPair sample(std::mt19937_64& rng) const;
  [[nodiscard]] PatchBatch sample_batch(std::mt19937_64& rng, int batch) const;

  /// Build a pair from a fixed window and augmentation (no randomness).
  [[nodiscard]] PatchPair make_pair(std::size_t source, int x0, int y0,
                                    const Augmentation& aug) const;

  [[nodiscard]] std::size_t size() const;
  [[nodiscard]] const ChannelMean& mean() const { return mean_; }
  [[nodiscard]] const SamplerOptions& options() const { return options_; }

 private:
  [[nodiscard]] std::shared_ptr<const Image> image(std::size_t i) const;
  [[nodiscard]] std::pair<int, int> dims(std::size_t i) const;

  DatasetIndex index_;
  std::vector<Image> memory_;
  std::vector<std::size_t> eligible_;  // images at least one patch large
  ChannelMean mean_{};
  SamplerOptions options_;

  mutable std::mutex cache_mutex_;
  mutable std::list<std::size_t> lru_;
  mutable std::unordered_map<std::size_t, std::shared_ptr<const Image>> cache_;
};

}  // namespace srfm::data
