#pragma once

#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "srfm/image.hpp"

namespace srfm::metrics {

/// Reported by psnr() when the images are identical.
inline constexpr double kPsnrIdentical = std::numeric_limits<double>::infinity();

/// 10 log10(peak^2 / MSE) over every sample; kPsnrIdentical when MSE = 0.
double psnr(const Plane& a, const Plane& b, double peak);
/// Same over every channel of two images.
double psnr(const Image& a, const Image& b, double peak);

struct SsimOptions {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
};

/// Mean SSIM over all fully-covered window positions (no padding).
double ssim(const Plane& a, const Plane& b, double peak, const SsimOptions& opt = {});

/// Pixel-domain multi-scale VIF over 4 Gaussian scales. Inputs are
/// rescaled so that `peak` maps to 255 before applying the fixed
/// noise variance of 2.
double vif(const Plane& ref, const Plane& dist, double peak = 255.0);

/// Normalized 1-D Gaussian of odd length `n`.
std::vector<double> gaussian_kernel(int n, double sigma);
/// Separable 'valid' correlation with `k` along both axes.
Plane filter_valid(const Plane& p, const std::vector<double>& k);

/// BT.601 luma on the 8-bit scale: 16 + 65.481 R + 128.553 G + 24.966 B
/// for R, G, B in [0, 1].
Plane luma_601(const Image& rgb, bool round_to_integer = true);

enum class EvalChannel { Luma, Rgb };

std::string to_string(EvalChannel c);
EvalChannel parse_eval_channel(const std::string& s);

/// How SR/HR pairs are compared.
struct EvalConvention {
  EvalChannel channel = EvalChannel::Luma;
  /// Pixels removed from every side before measuring.
  int border = 4;
  /// Round SR samples to 8 bits before measuring.
  bool quantize = true;

  [[nodiscard]] nlohmann::json to_json() const;
};

struct ImageMetrics {
  std::string image;
  double psnr = 0.0;
  double ssim = 0.0;
  double vif = 0.0;
};

/// Compare one super-resolved image against its reference. A reference
/// up to 7 pixels larger than the SR image on either side is cropped
/// (top-left anchored) to match; other size mismatches are a ShapeError.
ImageMetrics evaluate_pair(const std::string& name, const Image& sr, const Image& hr,
                           const EvalConvention& conv);

struct MetricReport {
  std::string dataset;
  EvalConvention convention;
  std::vector<ImageMetrics> images;
  /// Reference images without an SR counterpart (excluded from the means).
  std::vector<std::string> missing;
  double mean_psnr = 0.0;
  double mean_ssim = 0.0;
  double mean_vif = 0.0;

  /// Recompute the aggregate means from `images`.
  void finalize();
  [[nodiscard]] nlohmann::json to_json() const;
  void write_json(const std::filesystem::path& path) const;
  /// Columns: image, psnr_db, ssim, vif.
  void write_csv(const std::filesystem::path& path) const;
};

/// Images of `hr_dir` paired with same-stem files in `sr_dir`.
MetricReport evaluate_dirs(const std::string& dataset, const std::filesystem::path& sr_dir,
                           const std::filesystem::path& hr_dir,
                           const EvalConvention& conv = {}, int threads = 0);

/// Synthesize LR by bicubic downscaling, upscale it back bicubically and
/// measure against the (scale-cropped) reference.
MetricReport evaluate_bicubic(const std::string& dataset, const std::filesystem::path& hr_dir,
                              int scale = 4, const EvalConvention& conv = {},
                              int threads = 0);

}  // namespace srfm::metrics
