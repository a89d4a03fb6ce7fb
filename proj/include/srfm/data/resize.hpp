#pragma once

#include <vector>

#include "srfm/image.hpp"

namespace srfm::data {

/// Keys cubic convolution kernel with a = -0.5 (Catmull-Rom).
double cubic_kernel(double x);

/// One output sample's contributing input indices and normalized weights.
struct Contribution {
  std::vector<int> index;
  std::vector<double> weight;
};

/// Resampling weights along one axis, following the widely used
/// imresize construction:
///   * output sample j (1-based) sits at u = j / s + 0.5 (1 - 1/s);
///   * when shrinking with anti-aliasing the kernel is stretched by 1/s
///     (h(x) = s * cubic(s x), support 4 / s);
///   * taps falling outside the signal are mirrored (edge sample repeated);
///   * each output's weights are normalized to sum to one.
std::vector<Contribution> resize_contributions(int in_len, int out_len, double scale,
                                               bool antialias);

/// Separable bicubic resize to an explicit size (rows first, then columns).
Image resize_bicubic(const Image& img, int out_width, int out_height,
                     bool antialias = true);

/// Downscale by an integer factor. Sides that are not multiples of `factor`
/// are cropped (top-left anchored) with a logged warning.
Image downscale_bicubic(const Image& hr, int factor);

/// Bicubic upscaling by an integer factor.
Image upscale_bicubic(const Image& lr, int factor);

/// Pixel replication by an integer factor.
Image upscale_nearest(const Image& lr, int factor);

}  // namespace srfm::data
