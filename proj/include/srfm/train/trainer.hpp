#pragma once

#include <filesystem>
#include <fstream>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "srfm/data/dataset.hpp"
#include "srfm/losses.hpp"
#include "srfm/nn/discriminator.hpp"
#include "srfm/nn/feature_extractor.hpp"
#include "srfm/nn/generator.hpp"
#include "srfm/train/config.hpp"
#include "srfm/train/optim.hpp"

namespace srfm::train {

/// Everything measured during one update.
struct StepResult {
  long update = 0;  // counter value after the step
  double lr = 0.0;
  loss::LossBreakdown generator;
  /// Discriminator loss and accuracy before its update (NaN when skipped).
  double discriminator_loss = 0.0;
  double discriminator_accuracy = 0.0;
  bool discriminator_updated = false;
  bool generator_updated = false;

  [[nodiscard]] nlohmann::json to_json() const;
};

/// Generator loss and dL/d(estimate) for a fixed estimate.
struct GeneratorObjective {
  loss::LossBreakdown breakdown;
  Tensor grad_estimate;
};

/// Alternating discriminator / generator optimization.
///
/// The trainer owns the networks, both optimizers, the content calibration
/// and the random stream; save_checkpoint() captures all of it so a
/// resumed run continues with identical next-step losses.
class Trainer {
 public:
  Trainer(TrainConfig config, std::shared_ptr<const data::PatchSampler> sampler,
          nn::FeatureExtractor extractor);

  /// Sample a batch from the sampler and take one step.
  StepResult step();
  /// One discriminator update (when the preset is adversarial) followed
  /// by one generator update on the given batch. Throws NumericError on
  /// a non-finite loss, before any weights change.
  StepResult step(const data::PatchBatch& batch);

  /// Loss and gradient of the generator objective for `estimate`, limited
  /// to the components enabled in `mask` (and in the preset). Does not
  /// touch any network state.
  GeneratorObjective generator_objective(const Tensor& estimate, const Tensor& hr,
                                         const loss::Components& mask);

  /// Estimate per-layer content scales from one warm-up batch. Called
  /// automatically before the first step of a content preset.
  void calibrate(const data::PatchBatch& warmup);
  [[nodiscard]] bool calibrated() const { return calibrated_; }
  [[nodiscard]] const loss::ContentCalibration& calibration() const { return calibration_; }

  void save_checkpoint(const std::filesystem::path& path) const;
  /// Restore a checkpoint written with an identical configuration;
  /// otherwise a ConfigError lists the differing keys.
  void load_checkpoint(const std::filesystem::path& path);
  /// Configuration stored in a checkpoint.
  static TrainConfig checkpoint_config(const std::filesystem::path& path);

  /// Append one JSON line per step to `path`.
  void set_loss_log(const std::filesystem::path& path);

  [[nodiscard]] const TrainConfig& config() const { return config_; }
  [[nodiscard]] long update() const { return update_; }
  [[nodiscard]] long epoch_len() const { return epoch_len_; }
  [[nodiscard]] double current_lr() const;
  [[nodiscard]] const std::vector<StepResult>& history() const { return history_; }
  [[nodiscard]] const data::ChannelMean& channel_mean() const { return mean_; }

  nn::Generator& generator() { return generator_; }
  nn::Discriminator& discriminator() { return discriminator_; }
  nn::FeatureExtractor& extractor() { return extractor_; }
  std::mt19937_64& rng() { return rng_; }

 private:
  void discriminator_step(const data::PatchBatch& batch, double lr, StepResult& out);
  void check_finite(const loss::LossBreakdown& b, double d_loss) const;

  TrainConfig config_;
  loss::Components components_;
  std::shared_ptr<const data::PatchSampler> sampler_;
  data::ChannelMean mean_{};
  nn::Generator generator_;
  nn::Discriminator discriminator_;
  nn::FeatureExtractor extractor_;
  Adam adam_g_;
  Adam adam_d_;
  std::mt19937_64 rng_;
  loss::ContentCalibration calibration_;
  bool calibrated_ = false;
  long update_ = 0;
  long epoch_len_ = 1;
  std::vector<StepResult> history_;
  std::unique_ptr<std::ofstream> loss_log_;
};

/// Build the perceptual extractor a configuration asks for.
nn::FeatureExtractor make_extractor(const TrainConfig& config);

/// Generator weights, configuration and normalization stored in a
/// checkpoint, ready for inference.
struct InferenceModel {
  nn::Generator generator;
  data::ChannelMean mean{};
  data::ZeroCenter zero_center = data::ZeroCenter::Both;

  static InferenceModel load(const std::filesystem::path& checkpoint);
  /// Super-resolve an RGB image in [0, 1].
  [[nodiscard]] Image upscale(const Image& lr) const;
};

}  // namespace srfm::train
