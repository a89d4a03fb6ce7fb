#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "srfm/nn/layers.hpp"
#include "srfm/tensor.hpp"

namespace srfm::nn {

/// Layer plan of a VGG-style extractor: positive entries are 3x3 conv output
/// widths (each followed by ReLU), zero entries are 2x2 max-pools.
struct ExtractorConfig {
  std::vector<int> layers;
  /// Conv index (counting convs only) whose pre-ReLU output is the feature
  /// map; -1 selects the deepest conv.
  int tap_conv = -1;
  int image_channels = 3;
  /// Input is mapped to (x - shift) / scale per channel before the first conv.
  std::array<double, 3> input_shift{0.0, 0.0, 0.0};
  std::array<double, 3> input_scale{1.0, 1.0, 1.0};

  /// 19-layer VGG plan: 16 convs in five pooled stages.
  static ExtractorConfig vgg19();
  [[nodiscard]] int num_convs() const;
  [[nodiscard]] int resolved_tap() const;
};

struct ExtractorTrace {
  Tensor input;  // after the input transform
  struct Step {
    bool is_pool = false;
    Tensor input;
    Tensor conv_out;  // pre-ReLU, convs only
    std::vector<std::size_t> argmax;
  };
  std::vector<Step> steps;
};

/// Frozen feature network used by the perceptual loss. Its weights are
/// always loaded from an archive (or generated explicitly for experiments);
/// a default-constructed extractor has no weights and refuses to run.
class FeatureExtractor {
 public:
  FeatureExtractor() = default;

  /// Read an archive written by save() (or the VGG19 conversion script).
  static FeatureExtractor load(const std::filesystem::path& path);
  /// Variance-scaled random weights; `pretrained()` reports false.
  static FeatureExtractor random(ExtractorConfig config, std::uint64_t seed);
  /// Pass-through extractor: features equal the transformed input.
  static FeatureExtractor identity(int image_channels = 3);

  void save(const std::filesystem::path& path) const;

  [[nodiscard]] bool loaded() const { return loaded_; }
  [[nodiscard]] bool pretrained() const { return pretrained_; }
  [[nodiscard]] const ExtractorConfig& config() const { return config_; }
  /// Per-channel shift applied before the first layer.
  void set_input_transform(std::array<double, 3> shift, std::array<double, 3> scale);

  [[nodiscard]] Tensor features(const Tensor& x) const;
  [[nodiscard]] Tensor features(const Tensor& x, ExtractorTrace& trace) const;
  /// dL/dx given dL/dfeatures; the extractor's weights are not updated.
  [[nodiscard]] Tensor input_gradient(const ExtractorTrace& trace,
                                      const Tensor& grad_features);

  std::vector<Conv2d>& convs() { return convs_; }

 private:
  void build();
  void require_loaded() const;

  ExtractorConfig config_;
  std::vector<Conv2d> convs_;
  bool loaded_ = false;
  bool pretrained_ = false;
};

}  // namespace srfm::nn
