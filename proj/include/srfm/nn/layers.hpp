#pragma once

#include <string>
#include <vector>

#include "srfm/tensor.hpp"

namespace srfm::nn {

enum class ParamKind { Weight, Bias, NormScale, NormShift };

/// Trainable array with its gradient accumulator.
struct Parameter {
  std::string name;
  ParamKind kind = ParamKind::Weight;
  /// Inputs feeding each output unit; drives variance-scaled init.
  int fan_in = 0;
  Tensor value;
  Tensor grad;

  Parameter() = default;
  Parameter(std::string name, ParamKind kind, Shape shape, int fan_in = 0)
      : name(std::move(name)), kind(kind), fan_in(fan_in), value(shape),
        grad(shape) {}
};

/// Non-trainable state array (batch-norm running statistics).
struct Buffer {
  std::string name;
  Tensor value;
};

/// Name -> tensor handle used for checkpointing.
struct NamedTensor {
  std::string name;
  Tensor* tensor;
};

struct Conv2dSpec {
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 3;
  int stride = 1;
  int padding = 1;
};

/// 2-D convolution, weight layout (out, in, k, k).
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(const std::string& name, Conv2dSpec spec);

  [[nodiscard]] Shape output_shape(const Shape& in) const;
  [[nodiscard]] Tensor forward(const Tensor& x) const;
  /// Returns dL/dx; accumulates dL/dW and dL/db when `param_grads`.
  Tensor backward(const Tensor& x, const Tensor& grad_out, bool param_grads);

  [[nodiscard]] const Conv2dSpec& spec() const { return spec_; }
  Parameter& weight() { return weight_; }
  Parameter& bias() { return bias_; }
  [[nodiscard]] const Parameter& weight() const { return weight_; }
  [[nodiscard]] const Parameter& bias() const { return bias_; }

 private:
  Conv2dSpec spec_{};
  Parameter weight_;
  Parameter bias_;
};

/// Fully connected layer on (N, F, 1, 1) tensors; weight layout (out, in).
class Dense {
 public:
  Dense() = default;
  Dense(const std::string& name, int in_features, int out_features);

  [[nodiscard]] Tensor forward(const Tensor& x) const;
  Tensor backward(const Tensor& x, const Tensor& grad_out, bool param_grads);

  [[nodiscard]] int in_features() const { return in_; }
  [[nodiscard]] int out_features() const { return out_; }
  Parameter& weight() { return weight_; }
  Parameter& bias() { return bias_; }
  [[nodiscard]] const Parameter& weight() const { return weight_; }

 private:
  int in_ = 0;
  int out_ = 0;
  Parameter weight_;
  Parameter bias_;
};

/// Per-forward statistics kept for the backward pass.
struct BatchNormCache {
  Tensor normalized;             // x_hat
  std::vector<double> mean;      // batch mean per channel
  std::vector<double> variance;  // biased batch variance per channel
  std::vector<double> inv_std;
  bool training = false;
};

/// Batch normalization over (N, H, W) per channel.
class BatchNorm2d {
 public:
  static constexpr double kEpsilon = 1e-5;
  static constexpr double kMomentum = 0.1;

  BatchNorm2d() = default;
  BatchNorm2d(const std::string& name, int channels);

  /// Training mode uses batch statistics; evaluation uses running ones.
  [[nodiscard]] Tensor forward(const Tensor& x, bool training,
                               BatchNormCache* cache) const;
  Tensor backward(const BatchNormCache& cache, const Tensor& grad_out,
                  bool param_grads);
  /// Fold a training-mode batch's statistics into the running averages.
  void update_running_stats(const BatchNormCache& cache, std::size_t count);

  Parameter& scale() { return gamma_; }
  Parameter& shift() { return beta_; }
  Buffer& running_mean() { return running_mean_; }
  Buffer& running_var() { return running_var_; }

 private:
  int channels_ = 0;
  Parameter gamma_;
  Parameter beta_;
  Buffer running_mean_;
  Buffer running_var_;
};

[[nodiscard]] Tensor leaky_relu(const Tensor& x, double slope);
/// Gradient through leaky ReLU given the pre-activation input.
[[nodiscard]] Tensor leaky_relu_backward(const Tensor& pre,
                                         const Tensor& grad_out, double slope);

/// Sub-pixel rearrangement (N, C*r*r, H, W) -> (N, C, H*r, W*r) with
/// out[c, r*y+dy, r*x+dx] = in[c*r*r + dy*r + dx, y, x].
[[nodiscard]] Tensor pixel_shuffle(const Tensor& x, int r);
/// Exact inverse of pixel_shuffle.
[[nodiscard]] Tensor pixel_unshuffle(const Tensor& x, int r);

/// 2x2 max pooling with stride 2; records the winning flat index per output.
[[nodiscard]] Tensor max_pool2(const Tensor& x, std::vector<std::size_t>* argmax);
[[nodiscard]] Tensor max_pool2_backward(const Shape& in_shape,
                                        const std::vector<std::size_t>& argmax,
                                        const Tensor& grad_out);

}  // namespace srfm::nn
