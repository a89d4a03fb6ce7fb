#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "srfm/archive.hpp"
#include "srfm/nn/layers.hpp"

namespace srfm::train {

/// Zero-mean normal weights with std sqrt(2 / fan_in) * post_scale; biases
/// and norm shifts zero, norm scales one.
void init_msra(const std::vector<nn::Parameter*>& params, std::mt19937_64& rng,
               double post_scale = 0.1);

/// lr0 * decay^floor(epoch / decay_epochs) with epoch = update / epoch_len.
double lr_at(long update, long epoch_len, double lr0 = 1e-4, double decay = 0.1,
             int decay_epochs = 200);

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction over a fixed parameter list.
class Adam {
 public:
  Adam() = default;
  Adam(std::vector<nn::Parameter*> params, AdamOptions options);

  void step(double lr);
  [[nodiscard]] long steps() const { return t_; }

  /// Moments as `<prefix>.m.<param>` / `<prefix>.v.<param>` plus the step.
  void save(Archive& archive, const std::string& prefix) const;
  void load(const Archive& archive, const std::string& prefix);

 private:
  std::vector<nn::Parameter*> params_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  AdamOptions options_;
  long t_ = 0;
};

}  // namespace srfm::train
