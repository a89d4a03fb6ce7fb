#include "srfm/train/trainer.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "srfm/archive.hpp"
#include "srfm/errors.hpp"
#include "srfm/log.hpp"

namespace fs = std::filesystem;

namespace srfm::train {

namespace {

constexpr const char* kCheckpointKind = "checkpoint";

nlohmann::json finite_or_null(double v) {
  if (std::isfinite(v)) return v;
  return std::isnan(v) ? "nan" : (v > 0 ? "inf" : "-inf");
}

loss::Components intersect(const loss::Components& a, const loss::Components& b) {
  loss::Components c;
  c.point = a.point && b.point;
  c.vgg = a.vgg && b.vgg;
  c.adv = a.adv && b.adv;
  c.content = a.content && b.content;
  c.softmax = a.softmax && b.softmax;
  return c;
}

bool centers_hr(data::ZeroCenter z) { return z == data::ZeroCenter::Both; }

}  // namespace

nlohmann::json StepResult::to_json() const {
  nlohmann::json j = generator.to_json();
  j["update"] = update;
  j["lr"] = lr;
  j["d_loss"] = discriminator_updated ? finite_or_null(discriminator_loss) : nlohmann::json();
  j["d_accuracy"] =
      discriminator_updated ? finite_or_null(discriminator_accuracy) : nlohmann::json();
  return j;
}

nn::FeatureExtractor make_extractor(const TrainConfig& config) {
  if (!loss::components(config.preset).vgg) return {};
  if (!config.extractor_path.empty()) return nn::FeatureExtractor::load(config.extractor_path);
  nn::ExtractorConfig ec = nn::ExtractorConfig::vgg19();
  ec.layers = config.extractor_layers;
  log::warn("perceptual extractor uses random weights (not pretrained)",
            {{"layers", ec.layers}, {"seed", config.extractor_seed}});
  return nn::FeatureExtractor::random(ec, config.extractor_seed);
}

Trainer::Trainer(TrainConfig config, std::shared_ptr<const data::PatchSampler> sampler,
                 nn::FeatureExtractor extractor)
    : config_(std::move(config)),
      components_(loss::components(config_.preset)),
      sampler_(std::move(sampler)),
      generator_((config_.validate(), config_.generator)),
      discriminator_(config_.discriminator),
      extractor_(std::move(extractor)),
      rng_(config_.seed) {
  if (sampler_) {
    mean_ = sampler_->mean();
    const auto& so = sampler_->options();
    if (so.hr_patch != config_.hr_patch || so.scale != config_.scale ||
        so.zero_center != config_.zero_center || so.augment != config_.augment) {
      throw ConfigError("sampler options do not match the training configuration");
    }
    epoch_len_ = config_.epoch_len > 0
                     ? config_.epoch_len
                     : static_cast<long>((sampler_->size() + config_.batch - 1) / config_.batch);
  } else {
    epoch_len_ = config_.epoch_len > 0 ? config_.epoch_len : 1;
  }
  if (components_.vgg) {
    if (!extractor_.loaded()) throw ConfigError("preset needs a perceptual feature extractor");
    if (centers_hr(config_.zero_center)) {
      // Features see the un-centered image: (x + mean - shift) / scale.
      auto shift = extractor_.config().input_shift;
      for (int c = 0; c < 3; ++c) shift[c] -= mean_[c];
      extractor_.set_input_transform(shift, extractor_.config().input_scale);
    }
  }
  init_msra(generator_.parameters(), rng_, config_.init_scale);
  init_msra(discriminator_.parameters(), rng_, config_.init_scale);
  const AdamOptions ao{config_.beta1, config_.beta2, config_.adam_eps};
  adam_g_ = Adam(generator_.parameters(), ao);
  adam_d_ = Adam(discriminator_.parameters(), ao);
}

double Trainer::current_lr() const {
  return lr_at(update_, epoch_len_, config_.lr0, config_.lr_decay, config_.decay_epochs);
}

void Trainer::set_loss_log(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  loss_log_ = std::make_unique<std::ofstream>(path, std::ios::app);
  if (!*loss_log_) throw IoError("cannot open loss log: " + path.string());
}

void Trainer::calibrate(const data::PatchBatch& warmup) {
  const Tensor est = generator_.forward(warmup.lr);
  const auto taps_est = discriminator_.forward(est, true).taps;
  const auto taps_hr = discriminator_.forward(warmup.hr, true).taps;
  std::vector<double> losses;
  for (std::size_t i = 0; i < taps_est.size(); ++i) {
    losses.push_back(loss::layer_content_loss(taps_est, taps_hr, i));
  }
  calibration_ = loss::ContentCalibration::from_warmup(losses);
  calibrated_ = true;
  log::info("content calibration", {{"scales", calibration_.scale}});
}

GeneratorObjective Trainer::generator_objective(const Tensor& est, const Tensor& hr,
                                                const loss::Components& mask) {
  require_same_shape(est, hr, "generator objective");
  const loss::Components on = intersect(components_, mask);
  GeneratorObjective out;
  out.grad_estimate = Tensor(est.shape());
  loss::LossParts parts;

  parts.point = loss::huber_loss(est, hr);

  nn::ExtractorTrace xtrace;
  Tensor f_est;
  Tensor f_hr;
  if (on.vgg) {
    f_est = extractor_.features(est, xtrace);
    f_hr = extractor_.features(hr);
    parts.vgg = loss::mean_squared_distance(f_est, f_hr);
  }

  nn::DiscriminatorTrace dtrace;
  nn::DiscriminatorOutput d_est;
  nn::FeatureTaps taps_hr;
  loss::ReweighedContent content;
  if (on.adv || on.content) {
    d_est = discriminator_.forward(est, true, &dtrace);
    parts.adv = loss::adversarial_gen_loss(d_est.probabilities);
  }
  if (on.content) {
    if (!calibrated_) throw ConfigError("content loss used before calibration");
    taps_hr = discriminator_.forward(hr, true).taps;
    for (std::size_t i = 0; i < taps_hr.size(); ++i) {
      parts.content_layer.push_back(loss::layer_content_loss(d_est.taps, taps_hr, i));
    }
    content = on.softmax ? loss::softmax_reweighed_content_loss(parts.content_layer,
                                                                calibration_,
                                                                config_.softmax_input)
                         : loss::uniform_content_loss(parts.content_layer, calibration_);
    parts.content_total = content.total;
    parts.softmax_weight = content.weights;
  }

  out.breakdown = loss::total_generator_loss(parts, config_.weights, on);
  check_finite(out.breakdown, 0.0);

  if (on.point) {
    out.grad_estimate.add_scaled(loss::huber_loss_grad(est, hr), config_.weights.eta_point);
  }
  if (on.vgg) {
    const Tensor g = extractor_.input_gradient(xtrace, loss::mean_squared_distance_grad(f_est, f_hr));
    out.grad_estimate.add_scaled(g, config_.weights.gamma_vgg);
  }
  if (on.adv || on.content) {
    std::vector<double> g_logits(d_est.logits.size(), 0.0);
    if (on.adv) {
      g_logits = loss::adversarial_gen_loss_grad_logits(d_est.probabilities);
      for (double& g : g_logits) g *= config_.weights.lambda_adv;
    }
    std::vector<Tensor> tap_grads;
    if (on.content) {
      for (std::size_t i = 0; i < taps_hr.size(); ++i) {
        Tensor g = loss::mean_squared_distance_grad(d_est.taps[i], taps_hr[i]);
        g *= content.grad_coefficients[i];
        tap_grads.push_back(std::move(g));
      }
    }
    out.grad_estimate += discriminator_.backward(dtrace, g_logits,
                                                 on.content ? &tap_grads : nullptr, false);
  }
  return out;
}

void Trainer::check_finite(const loss::LossBreakdown& b, double d_loss) const {
  if (b.all_finite() && std::isfinite(d_loss)) return;
  nlohmann::json dump = b.to_json();
  dump["d_loss"] = finite_or_null(d_loss);
  dump["update"] = update_;
  log::error("non-finite loss, aborting", dump);
  throw NumericError("non-finite loss at update " + std::to_string(update_) + ": " +
                     dump.dump());
}

void Trainer::discriminator_step(const data::PatchBatch& batch, double lr, StepResult& out) {
  const Tensor est = generator_.forward(batch.lr);
  nn::DiscriminatorTrace tr_real;
  nn::DiscriminatorTrace tr_fake;
  const auto real = discriminator_.forward(batch.hr, true, &tr_real);
  const auto fake = discriminator_.forward(est, true, &tr_fake);
  const double d_loss = loss::discriminator_loss(fake.probabilities, real.probabilities);
  check_finite(loss::LossBreakdown{}, d_loss);

  std::size_t correct = 0;
  for (double p : real.probabilities) correct += p > 0.5 ? 1 : 0;
  for (double p : fake.probabilities) correct += p < 0.5 ? 1 : 0;
  out.discriminator_loss = d_loss;
  out.discriminator_accuracy =
      static_cast<double>(correct) / static_cast<double>(2 * real.probabilities.size());

  discriminator_.zero_grad();
  discriminator_.backward(tr_real, loss::discriminator_loss_grad_real_logits(real.probabilities),
                          nullptr, true);
  discriminator_.backward(tr_fake, loss::discriminator_loss_grad_fake_logits(fake.probabilities),
                          nullptr, true);
  discriminator_.commit_running_stats(tr_real);
  discriminator_.commit_running_stats(tr_fake);
  adam_d_.step(lr);
  out.discriminator_updated = true;
}

StepResult Trainer::step() {
  if (!sampler_) throw ConfigError("trainer has no patch sampler");
  if (components_.content && !calibrated_) calibrate(sampler_->sample_batch(rng_, config_.batch));
  return step(sampler_->sample_batch(rng_, config_.batch));
}

StepResult Trainer::step(const data::PatchBatch& batch) {
  if (batch.lr.n() != batch.hr.n()) throw ShapeError("batch halves differ in size");
  if (components_.content && !calibrated_) calibrate(batch);
  StepResult out;
  out.lr = current_lr();
  out.discriminator_loss = std::numeric_limits<double>::quiet_NaN();
  out.discriminator_accuracy = std::numeric_limits<double>::quiet_NaN();

  if (components_.adv && !config_.freeze_discriminator) discriminator_step(batch, out.lr, out);

  if (!config_.freeze_generator) {
    generator_.zero_grad();
    nn::GeneratorTrace trace;
    const Tensor est = generator_.forward(batch.lr, trace);
    GeneratorObjective obj = generator_objective(est, batch.hr, loss::Components{
                                                                    true, true, true, true, true});
    generator_.backward(trace, obj.grad_estimate);
    adam_g_.step(out.lr);
    out.generator = std::move(obj.breakdown);
    out.generator_updated = true;
  } else {
    const Tensor est = generator_.forward(batch.lr);
    out.generator = generator_objective(est, batch.hr, loss::Components{true, true, true, true,
                                                                         true})
                        .breakdown;
  }

  ++update_;
  out.update = update_;
  history_.push_back(out);
  if (loss_log_) {
    *loss_log_ << out.to_json().dump() << "\n";
    loss_log_->flush();
  }
  return out;
}

void Trainer::save_checkpoint(const fs::path& path) const {
  Archive ar;
  ar.manifest["kind"] = kCheckpointKind;
  ar.manifest["config"] = config_;
  ar.manifest["update"] = update_;
  ar.manifest["epoch"] = update_ / epoch_len_;
  ar.manifest["epoch_len"] = epoch_len_;
  ar.manifest["channel_mean"] = mean_;
  ar.manifest["calibrated"] = calibrated_;
  ar.manifest["calibration"] = calibration_.scale;
  ar.manifest["extractor"] = {{"loaded", extractor_.loaded()},
                              {"pretrained", extractor_.pretrained()}};
  std::ostringstream rng_state;
  rng_state << rng_;
  ar.manifest["rng"] = rng_state.str();
  // The networks are logically const here; state_tensors() only hands out
  // handles for copying.
  auto& self = const_cast<Trainer&>(*this);
  for (const auto& nt : self.generator_.state_tensors()) ar.arrays[nt.name] = *nt.tensor;
  for (const auto& nt : self.discriminator_.state_tensors()) ar.arrays[nt.name] = *nt.tensor;
  adam_g_.save(ar, "adam.generator");
  adam_d_.save(ar, "adam.discriminator");
  write_archive(path, ar);
}

TrainConfig Trainer::checkpoint_config(const fs::path& path) {
  const Archive ar = read_archive(path);
  if (ar.manifest.value("kind", "") != kCheckpointKind) {
    throw IoError(path.string() + " is not a training checkpoint");
  }
  try {
    return ar.manifest.at("config").get<TrainConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError("checkpoint config unreadable: " + std::string(e.what()));
  }
}

void Trainer::load_checkpoint(const fs::path& path) {
  const Archive ar = read_archive(path);
  if (ar.manifest.value("kind", "") != kCheckpointKind) {
    throw IoError(path.string() + " is not a training checkpoint");
  }
  TrainConfig stored;
  try {
    stored = ar.manifest.at("config").get<TrainConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError("checkpoint config unreadable: " + std::string(e.what()));
  }
  const auto diff = config_differences(stored, config_);
  if (!diff.empty()) {
    std::string keys;
    for (const auto& k : diff) keys += (keys.empty() ? "" : ", ") + k;
    throw ConfigError("checkpoint configuration mismatch: " + keys);
  }
  try {
    for (const auto& nt : generator_.state_tensors()) {
      const Tensor& t = ar.array(nt.name);
      if (t.shape() != nt.tensor->shape()) throw IoError("shape mismatch for " + nt.name);
      *nt.tensor = t;
    }
    for (const auto& nt : discriminator_.state_tensors()) {
      const Tensor& t = ar.array(nt.name);
      if (t.shape() != nt.tensor->shape()) throw IoError("shape mismatch for " + nt.name);
      *nt.tensor = t;
    }
    adam_g_.load(ar, "adam.generator");
    adam_d_.load(ar, "adam.discriminator");
    update_ = ar.manifest.at("update").get<long>();
    calibrated_ = ar.manifest.at("calibrated").get<bool>();
    calibration_.scale = ar.manifest.at("calibration").get<std::vector<double>>();
    std::istringstream rng_state(ar.manifest.at("rng").get<std::string>());
    rng_state >> rng_;
    if (!rng_state) throw IoError("checkpoint random state unreadable");
    const auto stored_mean = ar.manifest.at("channel_mean").get<data::ChannelMean>();
    if (sampler_ && stored_mean != mean_) {
      log::warn("checkpoint channel mean differs from the dataset's",
                {{"checkpoint", stored_mean}, {"dataset", mean_}});
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError("checkpoint manifest incomplete: " + std::string(e.what()));
  }
  history_.clear();
}

InferenceModel InferenceModel::load(const fs::path& checkpoint) {
  const Archive ar = read_archive(checkpoint);
  if (ar.manifest.value("kind", "") != kCheckpointKind) {
    throw IoError(checkpoint.string() + " is not a training checkpoint");
  }
  TrainConfig cfg;
  try {
    cfg = ar.manifest.at("config").get<TrainConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError("checkpoint config unreadable: " + std::string(e.what()));
  }
  nn::Generator g(cfg.generator);
  for (const auto& nt : g.state_tensors()) {
    const Tensor& t = ar.array(nt.name);
    if (t.shape() != nt.tensor->shape()) throw IoError("shape mismatch for " + nt.name);
    *nt.tensor = t;
  }
  return InferenceModel{std::move(g), ar.manifest.at("channel_mean").get<data::ChannelMean>(),
                        cfg.zero_center};
}

Image InferenceModel::upscale(const Image& lr_in) const {
  if (lr_in.channels() != 3) throw InputError("super-resolution expects an RGB image");
  Image lr = lr_in;
  if (zero_center != data::ZeroCenter::None) data::subtract_mean(lr, mean);
  const Tensor out = generator.forward(lr.tensor());
  Image sr = from_batch(out, 0, ImageRole::SuperResolved);
  if (centers_hr(zero_center)) data::add_mean(sr, mean);
  for (double& v : sr.tensor().values()) v = std::clamp(v, 0.0, 1.0);
  return sr;
}

}  // namespace srfm::train
