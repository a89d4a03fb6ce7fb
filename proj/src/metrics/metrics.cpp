#include "srfm/metrics.hpp"

#include <cmath>

#include "srfm/errors.hpp"

namespace srfm::metrics {

namespace {

void require_same(const Plane& a, const Plane& b, const char* what) {
  if (a.width != b.width || a.height != b.height) {
    throw ShapeError(std::string(what) + ": plane sizes differ (" + std::to_string(a.width) +
                     "x" + std::to_string(a.height) + " vs " + std::to_string(b.width) + "x" +
                     std::to_string(b.height) + ")");
  }
}

Plane multiply(const Plane& a, const Plane& b) {
  Plane out(a.width, a.height);
  for (std::size_t i = 0; i < a.values.size(); ++i) out.values[i] = a.values[i] * b.values[i];
  return out;
}

Plane subsample2(const Plane& p) {
  Plane out((p.width + 1) / 2, (p.height + 1) / 2);
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) out.at(y, x) = p.at(2 * y, 2 * x);
  }
  return out;
}

}  // namespace

double psnr(const Plane& a, const Plane& b, double peak) {
  require_same(a, b, "psnr");
  if (!(peak > 0.0)) throw InputError("psnr: peak must be positive");
  if (a.values.empty()) throw InputError("psnr: empty planes");
  double se = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    const double d = a.values[i] - b.values[i];
    se += d * d;
  }
  const double mse = se / static_cast<double>(a.values.size());
  if (mse == 0.0) return kPsnrIdentical;
  return 10.0 * std::log10(peak * peak / mse);
}

double psnr(const Image& a, const Image& b, double peak) {
  require_same_shape(a.tensor(), b.tensor(), "psnr");
  if (!(peak > 0.0)) throw InputError("psnr: peak must be positive");
  if (a.tensor().size() == 0) throw InputError("psnr: empty images");
  double se = 0.0;
  const double* pa = a.tensor().data();
  const double* pb = b.tensor().data();
  for (std::size_t i = 0; i < a.tensor().size(); ++i) se += (pa[i] - pb[i]) * (pa[i] - pb[i]);
  const double mse = se / static_cast<double>(a.tensor().size());
  if (mse == 0.0) return kPsnrIdentical;
  return 10.0 * std::log10(peak * peak / mse);
}

std::vector<double> gaussian_kernel(int n, double sigma) {
  if (n <= 0 || n % 2 == 0) throw InputError("gaussian window must be odd and positive");
  if (!(sigma > 0.0)) throw InputError("gaussian sigma must be positive");
  std::vector<double> k(n);
  const double c = (n - 1) / 2.0;
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = i - c;
    k[i] = std::exp(-x * x / (2.0 * sigma * sigma));
    sum += k[i];
  }
  for (auto& v : k) v /= sum;
  return k;
}

Plane filter_valid(const Plane& p, const std::vector<double>& k) {
  const int n = static_cast<int>(k.size());
  if (p.width < n || p.height < n) {
    throw InputError("image smaller than the " + std::to_string(n) + "-pixel window");
  }
  const int ow = p.width - n + 1;
  const int oh = p.height - n + 1;
  Plane rows(ow, p.height);
  for (int y = 0; y < p.height; ++y) {
    const double* line = p.values.data() + static_cast<std::size_t>(y) * p.width;
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int t = 0; t < n; ++t) s += k[t] * line[x + t];
      rows.at(y, x) = s;
    }
  }
  Plane out(ow, oh);
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int t = 0; t < n; ++t) s += k[t] * rows.at(y + t, x);
      out.at(y, x) = s;
    }
  }
  return out;
}

double ssim(const Plane& a, const Plane& b, double peak, const SsimOptions& opt) {
  require_same(a, b, "ssim");
  if (!(peak > 0.0)) throw InputError("ssim: peak must be positive");
  if (a.width < opt.window || a.height < opt.window) {
    throw InputError("ssim: image smaller than the window");
  }
  const auto k = gaussian_kernel(opt.window, opt.sigma);
  const double c1 = (opt.k1 * peak) * (opt.k1 * peak);
  const double c2 = (opt.k2 * peak) * (opt.k2 * peak);
  const Plane mu_a = filter_valid(a, k);
  const Plane mu_b = filter_valid(b, k);
  const Plane aa = filter_valid(multiply(a, a), k);
  const Plane bb = filter_valid(multiply(b, b), k);
  const Plane ab = filter_valid(multiply(a, b), k);
  double sum = 0.0;
  for (std::size_t i = 0; i < mu_a.values.size(); ++i) {
    const double ma = mu_a.values[i];
    const double mb = mu_b.values[i];
    const double va = aa.values[i] - ma * ma;
    const double vb = bb.values[i] - mb * mb;
    const double cov = ab.values[i] - ma * mb;
    sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) /
           ((ma * ma + mb * mb + c1) * (va + vb + c2));
  }
  return sum / static_cast<double>(mu_a.values.size());
}

double vif(const Plane& ref_in, const Plane& dist_in, double peak) {
  require_same(ref_in, dist_in, "vif");
  if (!(peak > 0.0)) throw InputError("vif: peak must be positive");
  if (ref_in.values == dist_in.values) return 1.0;

  constexpr double kNoiseVar = 2.0;
  constexpr double kTiny = 1e-10;
  Plane ref = ref_in;
  Plane dist = dist_in;
  const double to255 = 255.0 / peak;
  for (auto& v : ref.values) v *= to255;
  for (auto& v : dist.values) v *= to255;

  double num = 0.0;
  double den = 0.0;
  for (int scale = 1; scale <= 4; ++scale) {
    const int n = (1 << (5 - scale)) + 1;
    const auto k = gaussian_kernel(n, n / 5.0);
    if (scale > 1) {
      ref = subsample2(filter_valid(ref, k));
      dist = subsample2(filter_valid(dist, k));
    }
    if (ref.width < n || ref.height < n) {
      throw InputError("vif: image too small for scale " + std::to_string(scale));
    }
    const Plane mu1 = filter_valid(ref, k);
    const Plane mu2 = filter_valid(dist, k);
    const Plane s11 = filter_valid(multiply(ref, ref), k);
    const Plane s22 = filter_valid(multiply(dist, dist), k);
    const Plane s12 = filter_valid(multiply(ref, dist), k);
    for (std::size_t i = 0; i < mu1.values.size(); ++i) {
      const double m1 = mu1.values[i];
      const double m2 = mu2.values[i];
      double sigma1_sq = std::max(0.0, s11.values[i] - m1 * m1);
      const double sigma2_sq = std::max(0.0, s22.values[i] - m2 * m2);
      const double sigma12 = s12.values[i] - m1 * m2;

      double g = sigma12 / (sigma1_sq + kTiny);
      double sv_sq = sigma2_sq - g * sigma12;
      if (sigma1_sq < kTiny) {
        g = 0.0;
        sv_sq = sigma2_sq;
        sigma1_sq = 0.0;
      }
      if (sigma2_sq < kTiny) {
        g = 0.0;
        sv_sq = 0.0;
      }
      if (g < 0.0) {
        sv_sq = sigma2_sq;
        g = 0.0;
      }
      sv_sq = std::max(sv_sq, kTiny);
      num += std::log10(1.0 + g * g * sigma1_sq / (sv_sq + kNoiseVar));
      den += std::log10(1.0 + sigma1_sq / kNoiseVar);
    }
  }
  if (den == 0.0) return 0.0;
  return num / den;
}

Plane luma_601(const Image& rgb, bool round_to_integer) {
  if (rgb.channels() != 3) throw InputError("luma needs an RGB image");
  Plane y(rgb.width(), rgb.height());
  const auto r = rgb.plane(0);
  const auto g = rgb.plane(1);
  const auto b = rgb.plane(2);
  for (std::size_t i = 0; i < y.values.size(); ++i) {
    double v = 16.0 + 65.481 * r[i] + 128.553 * g[i] + 24.966 * b[i];
    y.values[i] = round_to_integer ? std::round(v) : v;
  }
  return y;
}

std::string to_string(EvalChannel c) { return c == EvalChannel::Luma ? "luma601" : "rgb"; }

EvalChannel parse_eval_channel(const std::string& s) {
  if (s == "luma" || s == "luma601" || s == "y") return EvalChannel::Luma;
  if (s == "rgb") return EvalChannel::Rgb;
  throw ConfigError("unknown evaluation channel: " + s);
}

nlohmann::json EvalConvention::to_json() const {
  return {{"channel", to_string(channel)},
          {"border", border},
          {"quantize_8bit", quantize},
          {"vif", "pixel-domain multi-scale (4 Gaussian scales)"},
          {"ssim", {{"window", 11}, {"sigma", 1.5}, {"k1", 0.01}, {"k2", 0.03}}}};
}

ImageMetrics evaluate_pair(const std::string& name, const Image& sr_in, const Image& hr_in,
                           const EvalConvention& conv) {
  if (sr_in.channels() != hr_in.channels()) {
    throw ShapeError("evaluate: channel count differs for " + name);
  }
  Image hr = hr_in;
  if (sr_in.width() != hr.width() || sr_in.height() != hr.height()) {
    const int dw = hr.width() - sr_in.width();
    const int dh = hr.height() - sr_in.height();
    if (dw < 0 || dh < 0 || dw > 7 || dh > 7) {
      throw ShapeError("evaluate: " + name + " SR is " + std::to_string(sr_in.width()) + "x" +
                       std::to_string(sr_in.height()) + ", reference is " +
                       std::to_string(hr.width()) + "x" + std::to_string(hr.height()));
    }
    hr = crop(hr, 0, 0, sr_in.width(), sr_in.height());
  }
  Image sr = sr_in;
  if (conv.quantize) quantize_8bit(sr);
  if (conv.border > 0) {
    sr = shave(sr, conv.border);
    hr = shave(hr, conv.border);
  }

  ImageMetrics m;
  m.image = name;
  const Plane y_sr = luma_601(sr);
  const Plane y_hr = luma_601(hr);
  if (conv.channel == EvalChannel::Luma) {
    m.psnr = psnr(y_sr, y_hr, 255.0);
    m.ssim = ssim(y_sr, y_hr, 255.0);
  } else {
    const double peak = hr.range().peak();
    m.psnr = psnr(sr, hr, peak);
    double s = 0.0;
    for (int c = 0; c < sr.channels(); ++c) {
      s += ssim(extract_plane(sr, c), extract_plane(hr, c), peak);
    }
    m.ssim = s / sr.channels();
  }
  m.vif = vif(y_hr, y_sr, 255.0);
  return m;
}

}  // namespace srfm::metrics
