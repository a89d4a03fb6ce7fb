#include "srfm/image.hpp"

#include <algorithm>
#include <cmath>

#include "srfm/errors.hpp"

namespace srfm {

std::string to_string(ImageRole role) {
  switch (role) {
    case ImageRole::HighRes:
      return "hr";
    case ImageRole::LowRes:
      return "lr";
    case ImageRole::SuperResolved:
      return "sr";
    case ImageRole::Unspecified:
      break;
  }
  return "unspecified";
}

Image::Image(int width, int height, int channels, ImageRole role,
             ValueRange range)
    : pixels_(Shape{1, channels, height, width}), role_(role), range_(range) {}

Image::Image(Tensor pixels, ImageRole role, ValueRange range)
    : pixels_(std::move(pixels)), role_(role), range_(range) {
  if (pixels_.n() != 1) {
    throw ShapeError("image tensor must have batch size 1, got " +
                     pixels_.shape().str());
  }
}

Plane extract_plane(const Image& img, int channel) {
  Plane p(img.width(), img.height());
  auto src = img.plane(channel);
  std::copy(src.begin(), src.end(), p.values.begin());
  return p;
}

Tensor to_batch(std::span<const Image> images) {
  std::vector<Tensor> parts;
  parts.reserve(images.size());
  for (const Image& img : images) parts.push_back(img.tensor());
  return concat_batch(parts);
}

Image from_batch(const Tensor& batch, int n, ImageRole role, ValueRange range) {
  return Image(slice_batch(batch, n, 1), role, range);
}

Image crop(const Image& img, int x0, int y0, int w, int h) {
  if (x0 < 0 || y0 < 0 || w < 0 || h < 0 || x0 + w > img.width() ||
      y0 + h > img.height()) {
    throw InputError("crop window out of bounds");
  }
  Image out(w, h, img.channels(), img.role(), img.range());
  for (int c = 0; c < img.channels(); ++c) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) out.at(c, y, x) = img.at(c, y0 + y, x0 + x);
    }
  }
  return out;
}

Image crop_to_multiple(const Image& img, int factor) {
  const int w = img.width() - img.width() % factor;
  const int h = img.height() - img.height() % factor;
  if (w == img.width() && h == img.height()) return img;
  return crop(img, 0, 0, w, h);
}

Image shave(const Image& img, int border) {
  if (border == 0) return img;
  if (2 * border >= img.width() || 2 * border >= img.height()) {
    throw InputError("border crop larger than image");
  }
  return crop(img, border, border, img.width() - 2 * border,
              img.height() - 2 * border);
}

void quantize_8bit(Image& img) {
  for (double& v : img.tensor().values()) {
    v = std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
  }
}

Image ImageU8::to_image(ImageRole role) const {
  Image img(width, height, channels, role, ValueRange{0.0, 1.0});
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const std::size_t base =
          (static_cast<std::size_t>(y) * width + x) * channels;
      for (int c = 0; c < channels; ++c) {
        img.at(c, y, x) = interleaved[base + c] / 255.0;
      }
    }
  }
  return img;
}

}  // namespace srfm
