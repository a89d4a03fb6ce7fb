#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "srfm/data/dataset.hpp"
#include "srfm/losses.hpp"
#include "srfm/nn/discriminator.hpp"
#include "srfm/nn/generator.hpp"

namespace srfm::train {

struct TrainConfig {
  loss::Preset preset = loss::Preset::Mpcsva;
  int batch = 16;
  long total_updates = 200000;
  double lr0 = 1e-4;
  double lr_decay = 0.1;
  int decay_epochs = 200;
  /// Updates per epoch for the schedule; 0 derives ceil(images / batch).
  long epoch_len = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 1;
  long checkpoint_interval = 5000;

  int hr_patch = 96;
  int scale = 4;
  bool augment = true;
  data::ZeroCenter zero_center = data::ZeroCenter::Both;

  /// Multiplier applied to variance-scaled initial weights.
  double init_scale = 0.1;
  loss::LossWeights weights;
  loss::SoftmaxInput softmax_input = loss::SoftmaxInput::Calibrated;

  nn::GeneratorConfig generator;
  nn::DiscriminatorConfig discriminator;

  /// Archive with pretrained extractor weights. Empty selects a randomly
  /// initialized extractor with `extractor_layers` (not pretrained).
  std::string extractor_path;
  std::vector<int> extractor_layers;
  std::uint64_t extractor_seed = 7;

  /// Skip the generator (or discriminator) update.
  bool freeze_generator = false;
  bool freeze_discriminator = false;

  /// Reduced model and patch size for CPU smoke runs.
  static TrainConfig tiny();

  /// Throws ConfigError on an inconsistent configuration.
  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// Keys of `a` and `b` whose serialized values differ.
std::vector<std::string> config_differences(const TrainConfig& a, const TrainConfig& b);

/// Set one configuration key from its text value (the flat file syntax).
/// Unknown keys and malformed values are ConfigErrors.
void apply_setting(TrainConfig& c, const std::string& key, const std::string& value);

/// Flat `key = value` file: one setting per line, `#` starts a comment,
/// values may be quoted and lists written as `[a, b, c]` or `a,b,c`.
/// Settings are applied on top of `base`.
TrainConfig parse_config_file(const std::filesystem::path& path, TrainConfig base = {});
std::map<std::string, std::string> parse_key_values(const std::string& text);

/// Every recognized key with a one-line description.
const std::vector<std::pair<std::string, std::string>>& config_keys();

}  // namespace srfm::train
