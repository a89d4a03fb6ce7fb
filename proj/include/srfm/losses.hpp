#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "srfm/nn/discriminator.hpp"
#include "srfm/nn/feature_extractor.hpp"
#include "srfm/tensor.hpp"

namespace srfm::loss {

/// Probabilities are clamped to [eps, 1 - eps] before taking logs.
inline constexpr double kProbEpsilon = 1e-7;
/// Lower bound for a calibration scale.
inline constexpr double kCalibrationFloor = 1e-8;

/// Coefficients of the adversarial, point and perceptual terms.
struct LossWeights {
  double lambda_adv = 0.005;
  double eta_point = 0.01;
  double gamma_vgg = 0.5;

  void validate() const;
};

/// Per-layer divisors that bring the content losses to a common scale.
/// Estimated once before training and frozen afterwards.
struct ContentCalibration {
  std::vector<double> scale;

  void validate() const;
  /// scale[i] = max(warmup[i], floor)
  static ContentCalibration from_warmup(std::span<const double> warmup_losses,
                                        double floor = kCalibrationFloor);
  /// All-ones calibration for `layers` entries.
  static ContentCalibration unit(std::size_t layers);
};

/// Whether the softmax sees calibrated (L_i / scale_i) or raw losses.
enum class SoftmaxInput { Calibrated, Raw };

std::string to_string(SoftmaxInput s);
SoftmaxInput parse_softmax_input(std::string_view s);

/// Named loss-component subsets used in the ablation study.
enum class Preset { Mp, Mpva, Mpca, Mpcsa, Mpcsva };

struct Components {
  bool point = true;
  bool vgg = false;
  bool adv = false;
  bool content = false;
  /// Softmax reweighing of the per-layer content losses (uniform mean
  /// otherwise).
  bool softmax = false;
};

Components components(Preset p);
/// Canonical names: M_p, M_pva, M_pca, M_pcsa, M_pcsva.
std::string to_string(Preset p);
/// Also accepts the sigma spelling (M_pcσa, M_pcσva) and no underscore.
Preset parse_preset(std::string_view name);
const std::vector<Preset>& all_presets();

/// Per-step record of every generator loss component.
struct LossBreakdown {
  double point = 0.0;
  double vgg = 0.0;
  double adv = 0.0;
  double content_total = 0.0;
  std::vector<double> content_layer;
  std::vector<double> softmax_weight;
  double total = 0.0;

  [[nodiscard]] bool all_finite() const;
  [[nodiscard]] nlohmann::json to_json() const;
};

// -- point estimate ---------------------------------------------------------

/// Huber loss, mean-reduced over every element:
/// 0.5 e^2 for |e| < 1, |e| - 0.5 otherwise, with e = est - hr.
double huber_loss(const Tensor& est, const Tensor& hr);
/// d huber_loss / d est.
Tensor huber_loss_grad(const Tensor& est, const Tensor& hr);

// -- squared feature distances ----------------------------------------------

/// mean((a - b)^2)
double mean_squared_distance(const Tensor& a, const Tensor& b);
/// d mean_squared_distance / d a = 2 (a - b) / numel
Tensor mean_squared_distance_grad(const Tensor& a, const Tensor& b);

/// Mean squared distance between extractor features of est and hr.
double perceptual_loss(const nn::FeatureExtractor& extractor, const Tensor& est,
                       const Tensor& hr);

// -- adversarial --------------------------------------------------------------

/// mean(-log p_fake)
double adversarial_gen_loss(std::span<const double> p_fake);
/// d adversarial_gen_loss / d logit for each sample.
std::vector<double> adversarial_gen_loss_grad_logits(std::span<const double> p_fake);

/// mean(-log(1 - p_fake)) + mean(-log p_real)
double discriminator_loss(std::span<const double> p_fake,
                          std::span<const double> p_real);
/// d discriminator_loss / d logit for the fake and real halves.
std::vector<double> discriminator_loss_grad_fake_logits(std::span<const double> p_fake);
std::vector<double> discriminator_loss_grad_real_logits(std::span<const double> p_real);

// -- discriminator-feature content --------------------------------------------

/// Mean squared distance between tap i of the estimate and of the target.
double layer_content_loss(const nn::FeatureTaps& taps_est,
                          const nn::FeatureTaps& taps_hr, std::size_t i);

struct ReweighedContent {
  double total = 0.0;
  /// Weights applied to each scaled loss; treated as constants in backward.
  std::vector<double> weights;
  /// L_i / scale_i (or L_i for raw input).
  std::vector<double> scaled;
  /// d total / d L_i with the weights frozen: weights[i] / scale[i].
  std::vector<double> grad_coefficients;
};

/// Softmax-weighted sum of calibrated per-layer content losses. The weights
/// are exp(L_i') / sum_j exp(L_j') evaluated at the current losses and carry
/// no gradient, so d total / d theta = sum_i w_i d L_i' / d theta.
ReweighedContent softmax_reweighed_content_loss(std::span<const double> layer_losses,
                                                const ContentCalibration& calib,
                                                SoftmaxInput input = SoftmaxInput::Calibrated);

/// Plain mean of the calibrated per-layer losses (weights 1/K).
ReweighedContent uniform_content_loss(std::span<const double> layer_losses,
                                      const ContentCalibration& calib);

/// d total / d L_i if gradient were allowed to flow through the softmax,
/// for comparison against the stopped-gradient coefficients.
std::vector<double> full_softmax_grad_coefficients(std::span<const double> layer_losses,
                                                   const ContentCalibration& calib,
                                                   SoftmaxInput input = SoftmaxInput::Calibrated);

// -- composite ---------------------------------------------------------------

/// Raw component values before weighting.
struct LossParts {
  double point = 0.0;
  double vgg = 0.0;
  double adv = 0.0;
  double content_total = 0.0;
  std::vector<double> content_layer;
  std::vector<double> softmax_weight;
};

/// total = content + lambda adv + eta point + gamma vgg over the enabled
/// components; disabled components are reported and counted as 0.
LossBreakdown total_generator_loss(const LossParts& parts, const LossWeights& weights,
                                   const Components& enabled);

}  // namespace srfm::loss
