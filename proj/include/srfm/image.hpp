#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "srfm/tensor.hpp"

namespace srfm {

enum class ImageRole { Unspecified, HighRes, LowRes, SuperResolved };

std::string to_string(ImageRole role);

/// Declared intensity range of an image's samples.
struct ValueRange {
  double lo = 0.0;
  double hi = 1.0;

  [[nodiscard]] double peak() const { return hi - lo; }
  friend bool operator==(const ValueRange&, const ValueRange&) = default;
};

/// Planar single image (C x H x W) with its role and value range.
///
/// Pixels live in a (1, C, H, W) tensor so an image can be fed to the
/// networks without copying channel data around.
class Image {
 public:
  Image() = default;
  Image(int width, int height, int channels,
        ImageRole role = ImageRole::Unspecified, ValueRange range = {});
  Image(Tensor pixels, ImageRole role, ValueRange range = {});

  [[nodiscard]] int width() const { return pixels_.w(); }
  [[nodiscard]] int height() const { return pixels_.h(); }
  [[nodiscard]] int channels() const { return pixels_.c(); }
  [[nodiscard]] bool empty() const { return pixels_.empty(); }
  [[nodiscard]] ImageRole role() const { return role_; }
  [[nodiscard]] const ValueRange& range() const { return range_; }
  void set_role(ImageRole role) { role_ = role; }
  void set_range(ValueRange range) { range_ = range; }

  [[nodiscard]] double& at(int c, int y, int x) { return pixels_(0, c, y, x); }
  [[nodiscard]] double at(int c, int y, int x) const {
    return pixels_(0, c, y, x);
  }
  [[nodiscard]] std::span<double> plane(int c) { return pixels_.plane(0, c); }
  [[nodiscard]] std::span<const double> plane(int c) const {
    return pixels_.plane(0, c);
  }

  [[nodiscard]] const Tensor& tensor() const { return pixels_; }
  [[nodiscard]] Tensor& tensor() { return pixels_; }

 private:
  Tensor pixels_;
  ImageRole role_ = ImageRole::Unspecified;
  ValueRange range_{};
};

/// Single-channel view used by the metrics.
struct Plane {
  int width = 0;
  int height = 0;
  std::vector<double> values;

  Plane() = default;
  Plane(int w, int h, double fill = 0.0)
      : width(w), height(h), values(static_cast<std::size_t>(w) * h, fill) {}

  [[nodiscard]] double& at(int y, int x) { return values[y * width + x]; }
  [[nodiscard]] double at(int y, int x) const { return values[y * width + x]; }
};

Plane extract_plane(const Image& img, int channel);

/// Stack same-sized images into an (N, C, H, W) batch.
Tensor to_batch(std::span<const Image> images);
/// Extract batch entry `n` as an image.
Image from_batch(const Tensor& batch, int n, ImageRole role,
                 ValueRange range = {});

/// Crop [x0, x0+w) x [y0, y0+h).
Image crop(const Image& img, int x0, int y0, int w, int h);
/// Crop to the largest size whose sides are multiples of `factor`
/// (top-left anchored).
Image crop_to_multiple(const Image& img, int factor);
/// Remove `border` pixels from every side.
Image shave(const Image& img, int border);

/// Round every sample to the nearest 1/255 step inside [0, 1].
void quantize_8bit(Image& img);

/// Lossless 8-bit image as decoded from disk (interleaved RGB).
struct ImageU8 {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<std::uint8_t> interleaved;

  [[nodiscard]] Image to_image(ImageRole role = ImageRole::Unspecified) const;
};

/// Decode a PNG/BMP/PPM/TIFF file to 3-channel RGB. Throws IoError.
ImageU8 read_image_u8(const std::filesystem::path& path);
/// Decode to a [0, 1] RGB image.
Image read_image(const std::filesystem::path& path,
                 ImageRole role = ImageRole::Unspecified);
/// Encode an image (clamped to its value range, scaled to 8 bits).
void write_image(const std::filesystem::path& path, const Image& img);

/// True for the lossless formats the corpus loaders accept.
bool is_image_file(const std::filesystem::path& path);

}  // namespace srfm
