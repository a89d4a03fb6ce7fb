#pragma once

#include <cstddef>
#include <vector>

#include <nlohmann/json.hpp>

#include "srfm/nn/layers.hpp"
#include "srfm/tensor.hpp"

namespace srfm::nn {

struct GeneratorConfig {
  int num_residual_blocks = 16;
  int channels = 64;
  int kernel_size = 3;
  double leaky_slope = 0.2;
  /// Each stage is one conv + x2 pixel shuffle.
  int upscale_stages = 2;
  int image_channels = 3;

  [[nodiscard]] int scale() const { return 1 << upscale_stages; }
  /// Throws ConfigError on an invalid configuration.
  void validate() const;

  /// Configuration for an upscale factor; rejects non-powers of two.
  static GeneratorConfig for_scale(int factor);

  friend bool operator==(const GeneratorConfig&, const GeneratorConfig&) = default;
};

void to_json(nlohmann::json& j, const GeneratorConfig& c);
void from_json(const nlohmann::json& j, GeneratorConfig& c);

/// Intermediate activations recorded by a training forward pass.
struct GeneratorTrace {
  struct Block {
    Tensor input;
    Tensor conv1_out;  // pre-activation
  };
  struct Upsample {
    Tensor input;
    Tensor shuffled;  // pre-activation
  };
  Tensor input;
  Tensor head_out;  // pre-activation
  std::vector<Block> blocks;
  Tensor body_in;
  std::vector<Upsample> ups;
  Tensor tail_in;
};

/// Residual super-resolution generator without normalization layers:
///
///     head conv -> LReLU -> N x [conv -> LReLU -> conv, + skip]
///       -> conv, + head skip -> S x [conv(C -> 4C) -> shuffle x2 -> LReLU]
///       -> tail conv (C -> image channels)
///
/// Maps (n, image_channels, h, w) to (n, image_channels, 2^S h, 2^S w).
class Generator {
 public:
  explicit Generator(GeneratorConfig config);

  [[nodiscard]] const GeneratorConfig& config() const { return config_; }

  /// Inference; safe to call concurrently on a const generator.
  [[nodiscard]] Tensor forward(const Tensor& lr) const;
  /// Training forward that records what backward() needs.
  [[nodiscard]] Tensor forward(const Tensor& lr, GeneratorTrace& trace) const;
  /// Accumulates parameter gradients; returns dL/d(input).
  Tensor backward(const GeneratorTrace& trace, const Tensor& grad_out);

  [[nodiscard]] std::vector<Parameter*> parameters();
  [[nodiscard]] std::vector<NamedTensor> state_tensors();
  [[nodiscard]] std::size_t parameter_count() const;
  void zero_grad();

  Conv2d& head() { return head_; }
  Conv2d& block_conv(int block, int which);
  Conv2d& body() { return body_; }
  Conv2d& tail() { return tail_; }

 private:
  void check_input(const Tensor& lr) const;

  GeneratorConfig config_;
  Conv2d head_;
  std::vector<Conv2d> block_convs_;  // 2 per residual block
  Conv2d body_;
  std::vector<Conv2d> up_convs_;
  Conv2d tail_;
};

}  // namespace srfm::nn
