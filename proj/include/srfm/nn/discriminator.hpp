#pragma once

#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "srfm/nn/layers.hpp"
#include "srfm/tensor.hpp"

namespace srfm::nn {

/// Where a block's feature tap is read.
enum class TapPosition {
  AfterConv,  ///< raw conv output, before batch-norm and activation
  AfterNorm,  ///< after batch-norm, still before activation
};

std::string to_string(TapPosition p);
TapPosition parse_tap_position(const std::string& s);

struct DiscriminatorConfig {
  /// One entry per conv block. Even blocks are 3x3 stride 1, odd blocks are
  /// 4x4 stride 2, all padded by 1.
  std::vector<int> conv_channels{64, 64, 128, 128, 256, 256, 512, 512};
  int image_channels = 3;
  int input_size = 96;
  int dense_units = 1024;
  double leaky_slope = 0.2;
  /// The first block carries no batch-norm unless this is set.
  bool norm_first_block = false;
  TapPosition tap_position = TapPosition::AfterConv;

  static constexpr std::size_t kNumBlocks = 8;

  void validate() const;
  /// Spatial size of each block's output for the configured input size.
  [[nodiscard]] std::vector<int> tap_sizes() const;

  friend bool operator==(const DiscriminatorConfig&,
                         const DiscriminatorConfig&) = default;
};

void to_json(nlohmann::json& j, const DiscriminatorConfig& c);
void from_json(const nlohmann::json& j, DiscriminatorConfig& c);

/// Pre-activation feature maps, one per conv block, in network order.
struct FeatureTaps {
  std::vector<Tensor> maps;

  [[nodiscard]] std::size_t size() const { return maps.size(); }
  [[nodiscard]] const Tensor& operator[](std::size_t i) const { return maps[i]; }
};

struct DiscriminatorOutput {
  std::vector<double> logits;
  std::vector<double> probabilities;  // sigmoid(logits)
  FeatureTaps taps;
};

struct DiscriminatorTrace {
  struct Block {
    Tensor input;
    Tensor conv_out;
    BatchNormCache norm;
    bool has_norm = false;
    Tensor pre_activation;
  };
  std::vector<Block> blocks;
  Tensor flat;        // last block's activation as (N, F, 1, 1)
  Tensor dense1_out;  // pre-activation
  Tensor dense1_act;
  bool training = true;
};

/// Convolutional real/fake classifier with a sigmoid probability head.
class Discriminator {
 public:
  explicit Discriminator(DiscriminatorConfig config);

  [[nodiscard]] const DiscriminatorConfig& config() const { return config_; }

  /// `training` selects batch statistics (true) or running statistics.
  [[nodiscard]] DiscriminatorOutput forward(const Tensor& batch, bool training,
                                            DiscriminatorTrace* trace = nullptr) const;

  /// Backpropagate dL/dlogit (one per sample) plus optional per-tap gradients
  /// into the input. Parameter gradients accumulate only when `param_grads`.
  Tensor backward(const DiscriminatorTrace& trace,
                  std::span<const double> grad_logits,
                  const std::vector<Tensor>* tap_grads, bool param_grads);

  /// Fold a training forward's batch statistics into the running averages.
  void commit_running_stats(const DiscriminatorTrace& trace);

  [[nodiscard]] std::vector<Parameter*> parameters();
  [[nodiscard]] std::vector<NamedTensor> state_tensors();
  void zero_grad();

  Conv2d& conv(std::size_t block) { return convs_.at(block); }
  [[nodiscard]] bool has_norm(std::size_t block) const;

 private:
  DiscriminatorConfig config_;
  std::vector<Conv2d> convs_;
  std::vector<BatchNorm2d> norms_;  // index = block; unused when no norm
  Dense dense1_;
  Dense dense2_;
};

}  // namespace srfm::nn
