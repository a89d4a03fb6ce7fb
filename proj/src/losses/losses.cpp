#include "srfm/losses.hpp"

#include <algorithm>
#include <cmath>

#include "srfm/errors.hpp"

namespace srfm::loss {
namespace {

double clamp_probability(double p) {
  if (std::isnan(p) || p < 0.0 || p > 1.0) {
    throw NumericError("probability " + std::to_string(p) + " outside [0, 1]");
  }
  return std::clamp(p, kProbEpsilon, 1.0 - kProbEpsilon);
}

bool clamped(double p) { return p < kProbEpsilon || p > 1.0 - kProbEpsilon; }

void require_nonempty(std::span<const double> p, const char* what) {
  if (p.empty()) throw InputError(std::string(what) + ": empty probability batch");
}

std::vector<double> scaled_losses(std::span<const double> losses,
                                  const ContentCalibration& calib,
                                  SoftmaxInput input) {
  if (losses.empty()) throw InputError("content reweighing needs at least one loss");
  if (calib.scale.size() != losses.size()) {
    throw InputError("calibration has " + std::to_string(calib.scale.size()) +
                     " scales for " + std::to_string(losses.size()) + " losses");
  }
  calib.validate();
  std::vector<double> out(losses.size());
  for (std::size_t i = 0; i < losses.size(); ++i) {
    if (!std::isfinite(losses[i])) {
      throw NumericError("content loss " + std::to_string(i) + " is not finite");
    }
    out[i] = input == SoftmaxInput::Calibrated ? losses[i] / calib.scale[i] : losses[i];
  }
  return out;
}

std::vector<double> softmax(const std::vector<double>& x) {
  const double m = *std::max_element(x.begin(), x.end());
  std::vector<double> w(x.size());
  double z = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    w[i] = std::exp(x[i] - m);
    z += w[i];
  }
  for (double& v : w) v /= z;
  return w;
}

}  // namespace

void LossWeights::validate() const {
  if (lambda_adv < 0 || eta_point < 0 || gamma_vgg < 0) {
    throw ConfigError("loss weights must be non-negative");
  }
}

void ContentCalibration::validate() const {
  for (double s : scale) {
    if (!(s > 0.0) || !std::isfinite(s)) {
      throw ConfigError("content calibration scales must be positive and finite");
    }
  }
}

ContentCalibration ContentCalibration::from_warmup(std::span<const double> warmup_losses,
                                                   double floor) {
  ContentCalibration c;
  for (double l : warmup_losses) {
    if (!std::isfinite(l)) throw NumericError("non-finite warm-up content loss");
    c.scale.push_back(std::max(l, floor));
  }
  return c;
}

ContentCalibration ContentCalibration::unit(std::size_t layers) {
  return ContentCalibration{std::vector<double>(layers, 1.0)};
}

std::string to_string(SoftmaxInput s) {
  return s == SoftmaxInput::Calibrated ? "calibrated" : "raw";
}

SoftmaxInput parse_softmax_input(std::string_view s) {
  if (s == "calibrated") return SoftmaxInput::Calibrated;
  if (s == "raw") return SoftmaxInput::Raw;
  throw ConfigError("softmax input must be 'calibrated' or 'raw'");
}

Components components(Preset p) {
  switch (p) {
    case Preset::Mp:
      return {true, false, false, false, false};
    case Preset::Mpva:
      return {true, true, true, false, false};
    case Preset::Mpca:
      return {true, false, true, true, false};
    case Preset::Mpcsa:
      return {true, false, true, true, true};
    case Preset::Mpcsva:
      return {true, true, true, true, true};
  }
  return {};
}

std::string to_string(Preset p) {
  switch (p) {
    case Preset::Mp:
      return "M_p";
    case Preset::Mpva:
      return "M_pva";
    case Preset::Mpca:
      return "M_pca";
    case Preset::Mpcsa:
      return "M_pcsa";
    case Preset::Mpcsva:
      return "M_pcsva";
  }
  return "?";
}

Preset parse_preset(std::string_view name) {
  std::string s;
  for (std::size_t i = 0; i < name.size(); ++i) {
    // UTF-8 sigma (U+03C3 = CF 83) is an alias for 's'.
    if (i + 1 < name.size() && static_cast<unsigned char>(name[i]) == 0xCF &&
        static_cast<unsigned char>(name[i + 1]) == 0x83) {
      s += 's';
      ++i;
    } else if (name[i] != '_') {
      s += static_cast<char>(std::tolower(static_cast<unsigned char>(name[i])));
    }
  }
  for (Preset p : all_presets()) {
    std::string canon;
    for (char ch : to_string(p)) {
      if (ch != '_') canon += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    }
    if (canon == s) return p;
  }
  throw ConfigError("unknown preset '" + std::string(name) +
                    "' (expected M_p, M_pva, M_pca, M_pcsa or M_pcsva)");
}

const std::vector<Preset>& all_presets() {
  static const std::vector<Preset> presets{Preset::Mp, Preset::Mpva, Preset::Mpca,
                                           Preset::Mpcsa, Preset::Mpcsva};
  return presets;
}

bool LossBreakdown::all_finite() const {
  auto finite = [](double v) { return std::isfinite(v); };
  return finite(point) && finite(vgg) && finite(adv) && finite(content_total) &&
         finite(total) && std::all_of(content_layer.begin(), content_layer.end(), finite) &&
         std::all_of(softmax_weight.begin(), softmax_weight.end(), finite);
}

nlohmann::json LossBreakdown::to_json() const {
  return {{"point", point},
          {"vgg", vgg},
          {"adv", adv},
          {"content_total", content_total},
          {"content_layer", content_layer},
          {"softmax_weight", softmax_weight},
          {"total", total}};
}

double huber_loss(const Tensor& est, const Tensor& hr) {
  require_same_shape(est, hr, "huber_loss");
  if (est.empty()) throw InputError("huber_loss: empty tensors");
  double s = 0.0;
  for (std::size_t i = 0; i < est.size(); ++i) {
    const double e = std::abs(est[i] - hr[i]);
    s += e < 1.0 ? 0.5 * e * e : e - 0.5;
  }
  return s / static_cast<double>(est.size());
}

Tensor huber_loss_grad(const Tensor& est, const Tensor& hr) {
  require_same_shape(est, hr, "huber_loss_grad");
  Tensor g(est.shape());
  const double inv_n = 1.0 / static_cast<double>(est.size());
  for (std::size_t i = 0; i < est.size(); ++i) {
    const double e = est[i] - hr[i];
    const double d = std::abs(e) < 1.0 ? e : (e > 0 ? 1.0 : -1.0);
    g[i] = d * inv_n;
  }
  return g;
}

double mean_squared_distance(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mean_squared_distance");
  if (a.empty()) throw InputError("mean_squared_distance: empty tensors");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s / static_cast<double>(a.size());
}

Tensor mean_squared_distance_grad(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mean_squared_distance_grad");
  Tensor g(a.shape());
  const double k = 2.0 / static_cast<double>(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) g[i] = k * (a[i] - b[i]);
  return g;
}

double perceptual_loss(const nn::FeatureExtractor& extractor, const Tensor& est,
                       const Tensor& hr) {
  require_same_shape(est, hr, "perceptual_loss");
  return mean_squared_distance(extractor.features(est), extractor.features(hr));
}

double adversarial_gen_loss(std::span<const double> p_fake) {
  require_nonempty(p_fake, "adversarial_gen_loss");
  double s = 0.0;
  for (double p : p_fake) s -= std::log(clamp_probability(p));
  return s / static_cast<double>(p_fake.size());
}

std::vector<double> adversarial_gen_loss_grad_logits(std::span<const double> p_fake) {
  require_nonempty(p_fake, "adversarial_gen_loss_grad_logits");
  std::vector<double> g(p_fake.size());
  const double inv_n = 1.0 / static_cast<double>(p_fake.size());
  for (std::size_t i = 0; i < p_fake.size(); ++i) {
    const double p = clamp_probability(p_fake[i]);
    // d(-log p)/dz = -(1 - p); zero where the clamp is active.
    g[i] = clamped(p_fake[i]) ? 0.0 : -(1.0 - p) * inv_n;
  }
  return g;
}

double discriminator_loss(std::span<const double> p_fake, std::span<const double> p_real) {
  require_nonempty(p_fake, "discriminator_loss");
  require_nonempty(p_real, "discriminator_loss");
  double fake = 0.0;
  for (double p : p_fake) fake -= std::log(1.0 - clamp_probability(p));
  double real = 0.0;
  for (double p : p_real) real -= std::log(clamp_probability(p));
  return fake / static_cast<double>(p_fake.size()) +
         real / static_cast<double>(p_real.size());
}

std::vector<double> discriminator_loss_grad_fake_logits(std::span<const double> p_fake) {
  require_nonempty(p_fake, "discriminator_loss_grad_fake_logits");
  std::vector<double> g(p_fake.size());
  const double inv_n = 1.0 / static_cast<double>(p_fake.size());
  for (std::size_t i = 0; i < p_fake.size(); ++i) {
    const double p = clamp_probability(p_fake[i]);
    g[i] = clamped(p_fake[i]) ? 0.0 : p * inv_n;
  }
  return g;
}

std::vector<double> discriminator_loss_grad_real_logits(std::span<const double> p_real) {
  return adversarial_gen_loss_grad_logits(p_real);
}

double layer_content_loss(const nn::FeatureTaps& taps_est, const nn::FeatureTaps& taps_hr,
                          std::size_t i) {
  if (i >= taps_est.size() || i >= taps_hr.size()) {
    throw InputError("content layer index " + std::to_string(i) + " out of range");
  }
  return mean_squared_distance(taps_est[i], taps_hr[i]);
}

ReweighedContent softmax_reweighed_content_loss(std::span<const double> layer_losses,
                                                const ContentCalibration& calib,
                                                SoftmaxInput input) {
  ReweighedContent r;
  r.scaled = scaled_losses(layer_losses, calib, input);
  r.weights = softmax(r.scaled);
  r.grad_coefficients.resize(r.scaled.size());
  for (std::size_t i = 0; i < r.scaled.size(); ++i) {
    r.total += r.weights[i] * r.scaled[i];
    const double dscaled =
        input == SoftmaxInput::Calibrated ? 1.0 / calib.scale[i] : 1.0;
    r.grad_coefficients[i] = r.weights[i] * dscaled;
  }
  if (!std::isfinite(r.total)) throw NumericError("reweighed content loss is not finite");
  return r;
}

ReweighedContent uniform_content_loss(std::span<const double> layer_losses,
                                      const ContentCalibration& calib) {
  ReweighedContent r;
  r.scaled = scaled_losses(layer_losses, calib, SoftmaxInput::Calibrated);
  const double w = 1.0 / static_cast<double>(r.scaled.size());
  r.weights.assign(r.scaled.size(), w);
  r.grad_coefficients.resize(r.scaled.size());
  for (std::size_t i = 0; i < r.scaled.size(); ++i) {
    r.total += w * r.scaled[i];
    r.grad_coefficients[i] = w / calib.scale[i];
  }
  return r;
}

std::vector<double> full_softmax_grad_coefficients(std::span<const double> layer_losses,
                                                   const ContentCalibration& calib,
                                                   SoftmaxInput input) {
  const auto scaled = scaled_losses(layer_losses, calib, input);
  const auto w = softmax(scaled);
  double total = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) total += w[i] * scaled[i];
  std::vector<double> out(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double dscaled =
        input == SoftmaxInput::Calibrated ? 1.0 / calib.scale[i] : 1.0;
    out[i] = w[i] * (1.0 + scaled[i] - total) * dscaled;
  }
  return out;
}

LossBreakdown total_generator_loss(const LossParts& parts, const LossWeights& weights,
                                   const Components& enabled) {
  weights.validate();
  LossBreakdown b;
  b.point = enabled.point ? parts.point : 0.0;
  b.vgg = enabled.vgg ? parts.vgg : 0.0;
  b.adv = enabled.adv ? parts.adv : 0.0;
  if (enabled.content) {
    b.content_total = parts.content_total;
    b.content_layer = parts.content_layer;
    b.softmax_weight = parts.softmax_weight;
  }
  b.total = b.content_total + weights.lambda_adv * b.adv + weights.eta_point * b.point +
            weights.gamma_vgg * b.vgg;
  return b;
}

}  // namespace srfm::loss
