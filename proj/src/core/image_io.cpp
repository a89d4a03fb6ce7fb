// Image decoding/encoding is delegated to OpenCV's imgcodecs.
#include <algorithm>
#include <cctype>
#include <cmath>

#include <opencv2/imgcodecs.hpp>

#include "srfm/errors.hpp"
#include "srfm/image.hpp"

namespace srfm {

bool is_image_file(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char ch) { return std::tolower(ch); });
  return ext == ".png" || ext == ".bmp" || ext == ".ppm" || ext == ".pgm" ||
         ext == ".pnm" || ext == ".tif" || ext == ".tiff";
}

ImageU8 read_image_u8(const std::filesystem::path& path) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) {
    throw IoError("cannot decode image " + path.string());
  }
  ImageU8 out;
  out.width = bgr.cols;
  out.height = bgr.rows;
  out.channels = 3;
  out.interleaved.resize(static_cast<std::size_t>(bgr.cols) * bgr.rows * 3);
  for (int y = 0; y < bgr.rows; ++y) {
    const auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < bgr.cols; ++x) {
      const std::size_t base = (static_cast<std::size_t>(y) * bgr.cols + x) * 3;
      out.interleaved[base + 0] = row[x][2];
      out.interleaved[base + 1] = row[x][1];
      out.interleaved[base + 2] = row[x][0];
    }
  }
  return out;
}

Image read_image(const std::filesystem::path& path, ImageRole role) {
  return read_image_u8(path).to_image(role);
}

void write_image(const std::filesystem::path& path, const Image& img) {
  if (img.channels() != 1 && img.channels() != 3) {
    throw InputError("write_image supports 1 or 3 channels");
  }
  const ValueRange r = img.range();
  const double span = r.peak() > 0 ? r.peak() : 1.0;
  auto to_u8 = [&](double v) {
    const double unit = std::clamp((v - r.lo) / span, 0.0, 1.0);
    return static_cast<std::uint8_t>(std::lround(unit * 255.0));
  };
  cv::Mat mat;
  if (img.channels() == 1) {
    mat.create(img.height(), img.width(), CV_8UC1);
    for (int y = 0; y < img.height(); ++y) {
      auto* row = mat.ptr<std::uint8_t>(y);
      for (int x = 0; x < img.width(); ++x) row[x] = to_u8(img.at(0, y, x));
    }
  } else {
    mat.create(img.height(), img.width(), CV_8UC3);
    for (int y = 0; y < img.height(); ++y) {
      auto* row = mat.ptr<cv::Vec3b>(y);
      for (int x = 0; x < img.width(); ++x) {
        row[x] = cv::Vec3b(to_u8(img.at(2, y, x)), to_u8(img.at(1, y, x)),
                           to_u8(img.at(0, y, x)));
      }
    }
  }
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  if (!cv::imwrite(path.string(), mat)) {
    throw IoError("cannot encode image " + path.string());
  }
}

}  // namespace srfm
