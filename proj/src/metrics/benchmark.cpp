#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include "srfm/data/resize.hpp"
#include "srfm/errors.hpp"
#include "srfm/log.hpp"
#include "srfm/metrics.hpp"
#include "srfm/parallel.hpp"

namespace fs = std::filesystem;

namespace srfm::metrics {

namespace {

nlohmann::json number(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  return v;
}

std::map<std::string, fs::path> images_by_stem(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::map<std::string, fs::path> out;
  for (const auto& de : fs::directory_iterator(dir)) {
    if (de.is_regular_file() && is_image_file(de.path())) {
      out.emplace(de.path().stem().string(), de.path());
    }
  }
  return out;
}

}  // namespace

void MetricReport::finalize() {
  mean_psnr = mean_ssim = mean_vif = 0.0;
  if (images.empty()) return;
  for (const auto& m : images) {
    mean_psnr += m.psnr;
    mean_ssim += m.ssim;
    mean_vif += m.vif;
  }
  const double n = static_cast<double>(images.size());
  mean_psnr /= n;
  mean_ssim /= n;
  mean_vif /= n;
}

nlohmann::json MetricReport::to_json() const {
  nlohmann::json per = nlohmann::json::array();
  for (const auto& m : images) {
    per.push_back({{"image", m.image},
                   {"psnr_db", number(m.psnr)},
                   {"ssim", number(m.ssim)},
                   {"vif", number(m.vif)}});
  }
  return {{"dataset", dataset},
          {"convention", convention.to_json()},
          {"count", images.size()},
          {"mean", {{"psnr_db", number(mean_psnr)},
                    {"ssim", number(mean_ssim)},
                    {"vif", number(mean_vif)}}},
          {"images", per},
          {"missing", missing}};
}

void MetricReport::write_json(const fs::path& path) const {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write report: " + path.string());
  out << to_json().dump(2) << "\n";
}

void MetricReport::write_csv(const fs::path& path) const {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write report: " + path.string());
  out.precision(10);
  out << "image,psnr_db,ssim,vif\n";
  for (const auto& m : images) {
    out << m.image << "," << m.psnr << "," << m.ssim << "," << m.vif << "\n";
  }
}

MetricReport evaluate_dirs(const std::string& dataset, const fs::path& sr_dir,
                           const fs::path& hr_dir, const EvalConvention& conv, int threads) {
  const auto hr = images_by_stem(hr_dir);
  const auto sr = images_by_stem(sr_dir);
  MetricReport report;
  report.dataset = dataset;
  report.convention = conv;
  std::vector<std::pair<fs::path, fs::path>> jobs;
  std::vector<std::string> names;
  for (const auto& [stem, path] : hr) {
    auto it = sr.find(stem);
    if (it == sr.end()) {
      report.missing.push_back(stem);
      log::warn("no SR counterpart", {{"image", stem}});
      continue;
    }
    jobs.emplace_back(it->second, path);
    names.push_back(stem);
  }
  report.images.resize(jobs.size());
  parallel_for(jobs.size(), threads, [&](std::size_t i) {
    const Image s = read_image(jobs[i].first, ImageRole::SuperResolved);
    const Image h = read_image(jobs[i].second, ImageRole::HighRes);
    report.images[i] = evaluate_pair(names[i], s, h, conv);
  });
  report.finalize();
  return report;
}

MetricReport evaluate_bicubic(const std::string& dataset, const fs::path& hr_dir, int scale,
                              const EvalConvention& conv, int threads) {
  const auto hr = images_by_stem(hr_dir);
  if (hr.empty()) throw IoError("no images in " + hr_dir.string());
  MetricReport report;
  report.dataset = dataset;
  report.convention = conv;
  std::vector<std::pair<std::string, fs::path>> jobs(hr.begin(), hr.end());
  report.images.resize(jobs.size());
  parallel_for(jobs.size(), threads, [&](std::size_t i) {
    const Image h = crop_to_multiple(read_image(jobs[i].second, ImageRole::HighRes), scale);
    Image lr = data::downscale_bicubic(h, scale);
    quantize_8bit(lr);
    const Image sr = data::upscale_bicubic(lr, scale);
    report.images[i] = evaluate_pair(jobs[i].first, sr, h, conv);
  });
  report.finalize();
  return report;
}

}  // namespace srfm::metrics
