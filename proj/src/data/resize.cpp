#include "srfm/data/resize.hpp"

#include <cmath>

#include "srfm/errors.hpp"
#include "srfm/log.hpp"

namespace srfm::data {

double cubic_kernel(double x) {
  const double ax = std::abs(x);
  const double ax2 = ax * ax;
  const double ax3 = ax2 * ax;
  if (ax <= 1.0) return 1.5 * ax3 - 2.5 * ax2 + 1.0;
  if (ax <= 2.0) return -0.5 * ax3 + 2.5 * ax2 - 4.0 * ax + 2.0;
  return 0.0;
}

std::vector<Contribution> resize_contributions(int in_len, int out_len, double scale,
                                               bool antialias) {
  if (in_len <= 0 || out_len <= 0 || !(scale > 0.0)) {
    throw InputError("resize: lengths and scale must be positive");
  }
  const bool stretch = antialias && scale < 1.0;
  const double kernel_width = stretch ? 4.0 / scale : 4.0;
  const int taps = static_cast<int>(std::ceil(kernel_width)) + 2;
  const int period = 2 * in_len;

  std::vector<Contribution> out(out_len);
  for (int j = 0; j < out_len; ++j) {
    const double u = (j + 1) / scale + 0.5 * (1.0 - 1.0 / scale);
    const int left = static_cast<int>(std::floor(u - kernel_width / 2.0));
    std::vector<double> w(taps);
    double total = 0.0;
    for (int t = 0; t < taps; ++t) {
      const double d = u - (left + t);
      w[t] = stretch ? scale * cubic_kernel(scale * d) : cubic_kernel(d);
      total += w[t];
    }
    Contribution& c = out[j];
    for (int t = 0; t < taps; ++t) {
      if (w[t] == 0.0) continue;
      // 1-based index mirrored over [1, in_len] with the edge repeated.
      int m = ((left + t - 1) % period + period) % period;
      const int idx = m < in_len ? m : period - 1 - m;
      const double weight = w[t] / total;
      bool merged = false;
      for (std::size_t k = 0; k < c.index.size(); ++k) {
        if (c.index[k] == idx) {
          c.weight[k] += weight;
          merged = true;
          break;
        }
      }
      if (!merged) {
        c.index.push_back(idx);
        c.weight.push_back(weight);
      }
    }
  }
  return out;
}

Image resize_bicubic(const Image& img, int out_width, int out_height, bool antialias) {
  const int w = img.width();
  const int h = img.height();
  const auto rows = resize_contributions(h, out_height, static_cast<double>(out_height) / h,
                                         antialias);
  const auto cols = resize_contributions(w, out_width, static_cast<double>(out_width) / w,
                                         antialias);
  Image out(out_width, out_height, img.channels(), img.role(), img.range());
  std::vector<double> tmp(static_cast<std::size_t>(out_height) * w);
  for (int c = 0; c < img.channels(); ++c) {
    auto src = img.plane(c);
    for (int y = 0; y < out_height; ++y) {
      const Contribution& r = rows[y];
      double* dst = tmp.data() + static_cast<std::size_t>(y) * w;
      std::fill_n(dst, w, 0.0);
      for (std::size_t k = 0; k < r.index.size(); ++k) {
        const double* line = src.data() + static_cast<std::size_t>(r.index[k]) * w;
        const double wt = r.weight[k];
        for (int x = 0; x < w; ++x) dst[x] += wt * line[x];
      }
    }
    auto dst = out.plane(c);
    for (int y = 0; y < out_height; ++y) {
      const double* line = tmp.data() + static_cast<std::size_t>(y) * w;
      for (int x = 0; x < out_width; ++x) {
        const Contribution& cc = cols[x];
        double s = 0.0;
        for (std::size_t k = 0; k < cc.index.size(); ++k) s += cc.weight[k] * line[cc.index[k]];
        dst[static_cast<std::size_t>(y) * out_width + x] = s;
      }
    }
  }
  return out;
}

Image downscale_bicubic(const Image& hr, int factor) {
  if (factor <= 0) throw InputError("downscale factor must be positive");
  Image src = hr;
  if (hr.width() % factor != 0 || hr.height() % factor != 0) {
    src = crop_to_multiple(hr, factor);
    log::warn("cropped image to a multiple of the scale factor",
              {{"from", {hr.width(), hr.height()}},
               {"to", {src.width(), src.height()}},
               {"factor", factor}});
  }
  if (src.width() == 0 || src.height() == 0) {
    throw InputError("image smaller than the downscale factor");
  }
  Image out = resize_bicubic(src, src.width() / factor, src.height() / factor, true);
  out.set_role(ImageRole::LowRes);
  return out;
}

Image upscale_bicubic(const Image& lr, int factor) {
  if (factor <= 0) throw InputError("upscale factor must be positive");
  Image out = resize_bicubic(lr, lr.width() * factor, lr.height() * factor, true);
  out.set_role(ImageRole::SuperResolved);
  return out;
}

Image upscale_nearest(const Image& lr, int factor) {
  if (factor <= 0) throw InputError("upscale factor must be positive");
  Image out(lr.width() * factor, lr.height() * factor, lr.channels(),
            ImageRole::SuperResolved, lr.range());
  for (int c = 0; c < lr.channels(); ++c) {
    for (int y = 0; y < out.height(); ++y) {
      for (int x = 0; x < out.width(); ++x) {
        out.at(c, y, x) = lr.at(c, y / factor, x / factor);
      }
    }
  }
  return out;
}

}  // namespace srfm::data
