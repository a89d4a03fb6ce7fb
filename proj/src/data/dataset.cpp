#include "srfm/data/dataset.hpp"

#include <algorithm>
#include <fstream>

#include "srfm/data/resize.hpp"
#include "srfm/errors.hpp"
#include "srfm/log.hpp"

namespace fs = std::filesystem;

namespace srfm::data {

void to_json(nlohmann::json& j, const DatasetIndex& idx) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : idx.entries) {
    entries.push_back({{"path", e.path}, {"width", e.width}, {"height", e.height}});
  }
  j = {{"roots", idx.roots},
       {"split", idx.split},
       {"channel_mean", idx.channel_mean},
       {"entries", entries}};
}

void from_json(const nlohmann::json& j, DatasetIndex& idx) {
  idx.roots = j.value("roots", std::vector<std::string>{});
  idx.split = j.value("split", std::string("train"));
  idx.channel_mean = j.at("channel_mean").get<ChannelMean>();
  idx.entries.clear();
  for (const auto& e : j.at("entries")) {
    idx.entries.push_back(
        {e.at("path").get<std::string>(), e.at("width").get<int>(), e.at("height").get<int>()});
  }
}

void DatasetIndex::save(const fs::path& path) const {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write dataset index: " + path.string());
  out << nlohmann::json(*this).dump(2) << "\n";
}

DatasetIndex DatasetIndex::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read dataset index: " + path.string());
  try {
    return nlohmann::json::parse(in).get<DatasetIndex>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed dataset index " + path.string() + ": " + e.what());
  }
}

ChannelMean compute_channel_mean(std::span<const Image> images) {
  ChannelMean sum{0.0, 0.0, 0.0};
  double count = 0.0;
  for (const auto& img : images) {
    if (img.channels() != 3) throw InputError("channel mean needs RGB images");
    for (int c = 0; c < 3; ++c) {
      for (double v : img.plane(c)) sum[c] += v;
    }
    count += static_cast<double>(img.width()) * img.height();
  }
  if (count == 0.0) throw InputError("channel mean of an empty image set");
  for (auto& s : sum) s /= count;
  return sum;
}

DatasetIndex ingest_dataset(const std::vector<fs::path>& roots, const std::string& split,
                            const ChannelMean* train_mean) {
  DatasetIndex idx;
  idx.split = split;
  std::vector<fs::path> files;
  for (const auto& root : roots) {
    idx.roots.push_back(root.string());
    if (!fs::exists(root)) {
      log::warn("dataset root does not exist", {{"root", root.string()}});
      continue;
    }
    if (fs::is_regular_file(root)) {
      if (is_image_file(root)) files.push_back(root);
      continue;
    }
    for (const auto& de : fs::recursive_directory_iterator(root)) {
      if (de.is_regular_file() && is_image_file(de.path())) files.push_back(de.path());
    }
  }
  std::sort(files.begin(), files.end());

  ChannelMean sum{0.0, 0.0, 0.0};
  double count = 0.0;
  for (const auto& f : files) {
    ImageU8 img;
    try {
      img = read_image_u8(f);
    } catch (const IoError& e) {
      log::warn("skipping unreadable image", {{"path", f.string()}, {"error", e.what()}});
      continue;
    }
    idx.entries.push_back({f.string(), img.width, img.height});
    for (std::size_t i = 0; i < img.interleaved.size(); i += 3) {
      for (int c = 0; c < 3; ++c) sum[c] += img.interleaved[i + c];
    }
    count += static_cast<double>(img.width) * img.height;
  }
  if (idx.entries.empty()) {
    throw ConfigError("no readable images found for split '" + split + "'");
  }
  if (split == "train") {
    for (int c = 0; c < 3; ++c) idx.channel_mean[c] = sum[c] / (255.0 * count);
  } else if (train_mean != nullptr) {
    idx.channel_mean = *train_mean;
  }
  log::info("dataset ingested", {{"split", split},
                                 {"images", idx.entries.size()},
                                 {"channel_mean", idx.channel_mean}});
  return idx;
}

int Augmentation::dihedral_index() const {
  if (rotation % 90 != 0) throw InputError("rotation must be a multiple of 90");
  // A vertical flip equals a horizontal flip followed by a half turn.
  const int k = ((rotation / 90) % 4 + 4) % 4;
  const int v = vflip ? 1 : 0;
  const int f = (hflip != vflip) ? 1 : 0;
  return (k + 2 * v) % 4 + 4 * f;
}

Image apply_augmentation(const Image& img, const Augmentation& aug) {
  if (aug.rotation % 90 != 0) throw InputError("rotation must be a multiple of 90");
  const int w = img.width();
  const int h = img.height();
  Image cur(w, h, img.channels(), img.role(), img.range());
  for (int c = 0; c < img.channels(); ++c) {
    for (int y = 0; y < h; ++y) {
      const int sy = aug.vflip ? h - 1 - y : y;
      for (int x = 0; x < w; ++x) {
        const int sx = aug.hflip ? w - 1 - x : x;
        cur.at(c, y, x) = img.at(c, sy, sx);
      }
    }
  }
  const int turns = ((aug.rotation / 90) % 4 + 4) % 4;
  for (int t = 0; t < turns; ++t) {
    const int cw = cur.width();
    const int ch = cur.height();
    Image rot(ch, cw, cur.channels(), cur.role(), cur.range());
    for (int c = 0; c < cur.channels(); ++c) {
      for (int y = 0; y < cw; ++y) {
        for (int x = 0; x < ch; ++x) rot.at(c, y, x) = cur.at(c, x, cw - 1 - y);
      }
    }
    cur = std::move(rot);
  }
  return cur;
}

std::string to_string(ZeroCenter z) {
  switch (z) {
    case ZeroCenter::Both: return "both";
    case ZeroCenter::LowResOnly: return "lr";
    case ZeroCenter::None: return "none";
  }
  return "both";
}

ZeroCenter parse_zero_center(const std::string& s) {
  if (s == "both") return ZeroCenter::Both;
  if (s == "lr" || s == "lr_only") return ZeroCenter::LowResOnly;
  if (s == "none") return ZeroCenter::None;
  throw ConfigError("unknown zero-centering mode: " + s);
}

void subtract_mean(Image& img, const ChannelMean& mean) {
  if (img.channels() != 3) throw InputError("mean subtraction needs RGB images");
  for (int c = 0; c < 3; ++c) {
    for (double& v : img.plane(c)) v -= mean[c];
  }
}

void add_mean(Image& img, const ChannelMean& mean) {
  if (img.channels() != 3) throw InputError("mean restoration needs RGB images");
  for (int c = 0; c < 3; ++c) {
    for (double& v : img.plane(c)) v += mean[c];
  }
}

PatchBatch make_batch(std::span<const PatchPair> pairs) {
  if (pairs.empty()) throw InputError("empty batch");
  std::vector<Image> lr;
  std::vector<Image> hr;
  lr.reserve(pairs.size());
  hr.reserve(pairs.size());
  for (const auto& p : pairs) {
    lr.push_back(p.lr);
    hr.push_back(p.hr);
  }
  return {to_batch(lr), to_batch(hr)};
}

namespace {

void check_options(const SamplerOptions& o) {
  if (o.scale <= 0) throw ConfigError("scale must be positive");
  if (o.hr_patch <= 0 || o.hr_patch % o.scale != 0) {
    throw ConfigError("hr_patch must be a positive multiple of the scale");
  }
  if (o.cache_capacity == 0) throw ConfigError("cache_capacity must be positive");
}

}  // namespace

PatchSampler::PatchSampler(DatasetIndex index, SamplerOptions options)
    : index_(std::move(index)), mean_(index_.channel_mean), options_(options) {
  check_options(options_);
  if (index_.entries.empty()) throw ConfigError("dataset index has no entries");
  for (std::size_t i = 0; i < index_.entries.size(); ++i) {
    const auto& e = index_.entries[i];
    if (e.width >= options_.hr_patch && e.height >= options_.hr_patch) {
      eligible_.push_back(i);
    } else {
      log::warn("image smaller than the patch size, never sampled", {{"path", e.path}});
    }
  }
  if (eligible_.empty()) throw ConfigError("no image is as large as the patch size");
}

PatchSampler::PatchSampler(std::vector<Image> images, ChannelMean mean,
                           SamplerOptions options)
    : memory_(std::move(images)), mean_(mean), options_(options) {
  check_options(options_);
  if (memory_.empty()) throw ConfigError("sampler needs at least one image");
  for (std::size_t i = 0; i < memory_.size(); ++i) {
    if (memory_[i].width() >= options_.hr_patch && memory_[i].height() >= options_.hr_patch) {
      eligible_.push_back(i);
    }
  }
  if (eligible_.empty()) throw ConfigError("no image is as large as the patch size");
}

std::size_t PatchSampler::size() const {
  return memory_.empty() ? index_.entries.size() : memory_.size();
}

std::pair<int, int> PatchSampler::dims(std::size_t i) const {
  if (!memory_.empty()) return {memory_.at(i).width(), memory_.at(i).height()};
  const auto& e = index_.entries.at(i);
  return {e.width, e.height};
}

std::shared_ptr<const Image> PatchSampler::image(std::size_t i) const {
  if (!memory_.empty()) {
    return std::shared_ptr<const Image>(&memory_.at(i), [](const Image*) {});
  }
  {
    std::lock_guard lock(cache_mutex_);
    if (auto it = cache_.find(i); it != cache_.end()) {
      lru_.remove(i);
      lru_.push_front(i);
      return it->second;
    }
  }
  auto img = std::make_shared<const Image>(
      read_image_u8(index_.entries.at(i).path).to_image(ImageRole::HighRes));
  std::lock_guard lock(cache_mutex_);
  if (cache_.find(i) == cache_.end()) {
    cache_[i] = img;
    lru_.push_front(i);
    while (cache_.size() > options_.cache_capacity) {
      cache_.erase(lru_.back());
      lru_.pop_back();
    }
  }
  return img;
}

PatchPair PatchSampler::make_pair(std::size_t source, int x0, int y0,
                                  const Augmentation& aug) const {
  const auto [w, h] = dims(source);
  const int p = options_.hr_patch;
  if (x0 < 0 || y0 < 0 || x0 + p > w || y0 + p > h) {
    throw InputError("patch window outside the image");
  }
  auto src = image(source);
  PatchPair pair;
  pair.hr = apply_augmentation(crop(*src, x0, y0, p, p), aug);
  pair.hr.set_role(ImageRole::HighRes);
  pair.lr = downscale_bicubic(pair.hr, options_.scale);
  switch (options_.zero_center) {
    case ZeroCenter::Both:
      subtract_mean(pair.lr, mean_);
      subtract_mean(pair.hr, mean_);
      break;
    case ZeroCenter::LowResOnly:
      subtract_mean(pair.lr, mean_);
      break;
    case ZeroCenter::None:
      break;
  }
  pair.augmentation = aug;
  pair.source = source;
  pair.x0 = x0;
  pair.y0 = y0;
  return pair;
}

PatchPair PatchSampler::sample(std::mt19937_64& rng) const {
  std::uniform_int_distribution<std::size_t> pick(0, eligible_.size() - 1);
  const std::size_t source = eligible_[pick(rng)];
  const auto [w, h] = dims(source);
  const int p = options_.hr_patch;
  const int x0 = std::uniform_int_distribution<int>(0, w - p)(rng);
  const int y0 = std::uniform_int_distribution<int>(0, h - p)(rng);
  Augmentation aug;
  if (options_.augment) {
    aug.rotation = 90 * std::uniform_int_distribution<int>(0, 3)(rng);
    aug.hflip = std::bernoulli_distribution(0.5)(rng);
    aug.vflip = std::bernoulli_distribution(0.5)(rng);
  }
  return make_pair(source, x0, y0, aug);
}

PatchBatch PatchSampler::sample_batch(std::mt19937_64& rng, int batch) const {
  if (batch <= 0) throw ConfigError("batch size must be positive");
  std::vector<PatchPair> pairs;
  pairs.reserve(batch);
  for (int i = 0; i < batch; ++i) pairs.push_back(sample(rng));
  return make_batch(pairs);
}

}  // namespace srfm::data
