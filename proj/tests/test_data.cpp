#include <doctest.h>

#include <array>
#include <cmath>
#include <fstream>
#include <random>
#include <set>

#include "srfm/data/dataset.hpp"
#include "srfm/data/resize.hpp"
#include "srfm/errors.hpp"
#include "support.hpp"

using namespace srfm;
using namespace srfm::data;

namespace {

Image gray_image(int w, int h, const std::vector<double>& values) {
  Image img(w, h, 3);
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < w * h; ++i) img.plane(c)[i] = values[i];
  return img;
}

// Patch of the camera fixture used to freeze the resize oracles.
Image oracle_patch(const nlohmann::json& o) {
  const Image ref = read_image(test::data_dir() / "pairs" / "ref.png");
  const int off = o["input_offset"][0].get<int>();
  const int n = o["input_size"].get<int>();
  return crop(ref, off, off, n, n);
}

double max_diff(const Image& img, const std::vector<double>& expect, int margin) {
  const int w = img.width(), h = img.height();
  double m = 0.0;
  for (int y = margin; y < h - margin; ++y)
    for (int x = margin; x < w - margin; ++x)
      for (int c = 0; c < 3; ++c) m = std::max(m, std::abs(img.at(c, y, x) - expect[y * w + x]));
  return m;
}

// Dense (out x in) resampling matrix built straight from the kernel: rows
// are kernel values at the output centres, folded back at the edges.
std::vector<std::vector<double>> dense_downscale_matrix(int in, int out) {
  const double s = static_cast<double>(out) / in;
  std::vector<std::vector<double>> m(out, std::vector<double>(in, 0.0));
  for (int j = 0; j < out; ++j) {
    const double centre = (j + 0.5) / s - 0.5;  // 0-based input coordinate
    double total = 0.0;
    std::vector<double> row(in, 0.0);
    for (int t = static_cast<int>(std::floor(centre - 2.0 / s)) - 1;
         t <= static_cast<int>(std::ceil(centre + 2.0 / s)) + 1; ++t) {
      const double w = s * cubic_kernel(s * (centre - t));
      int i = t;
      while (i < 0 || i >= in) i = i < 0 ? -1 - i : 2 * in - 1 - i;
      row[i] += w;
      total += w;
    }
    for (int i = 0; i < in; ++i) m[j][i] = row[i] / total;
  }
  return m;
}

void write_gray_png(const std::filesystem::path& p, int w, int h, double v) {
  Image img(w, h, 3);
  img.tensor().fill(v);
  write_image(p, img);
}

}  // namespace

TEST_CASE("cubic kernel values") {
  CHECK(cubic_kernel(0.0) == 1.0);
  CHECK(cubic_kernel(1.0) == 0.0);
  CHECK(cubic_kernel(2.0) == 0.0);
  CHECK(cubic_kernel(0.5) == doctest::Approx(0.5625));
  CHECK(cubic_kernel(-1.5) == doctest::Approx(-0.0625));
  CHECK(cubic_kernel(2.5) == 0.0);
}

TEST_CASE("resize matches the frozen reference arrays") {
  const auto o = test::oracles()["resize"];
  const Image patch = oracle_patch(o);
  const Image d4 = downscale_bicubic(patch, 4);
  const Image d2 = resize_bicubic(patch, 32, 32);
  const Image u4 = upscale_bicubic(d4, 4);
  CHECK(max_diff(d4, o["down4"].get<std::vector<double>>(), 0) < 1e-12);
  CHECK(max_diff(d2, o["down2"].get<std::vector<double>>(), 0) < 1e-12);
  CHECK(max_diff(u4, o["up4"].get<std::vector<double>>(), 0) < 1e-12);
  // The second library pads by clamping instead of mirroring, so only
  // outputs whose support stays inside the image are comparable.
  CHECK(max_diff(d4, o["torch_down4"].get<std::vector<double>>(), 2) < 1e-9);
  CHECK(max_diff(u4, o["torch_up4"].get<std::vector<double>>(), 6) < 1e-9);
}

TEST_CASE("downscaling preserves constants") {
  Image img(96, 96, 3);
  img.tensor().fill(0.7);
  const Image d = downscale_bicubic(img, 4);
  REQUIRE(d.width() == 24);
  REQUIRE(d.height() == 24);
  for (double v : d.tensor().values()) CHECK(std::abs(v - 0.7) < 1e-6);
}

TEST_CASE("horizontal ramp matches a dense kernel-matrix oracle") {
  std::vector<double> vals(96 * 96);
  for (int y = 0; y < 96; ++y)
    for (int x = 0; x < 96; ++x) vals[y * 96 + x] = x / 95.0;
  const Image d = downscale_bicubic(gray_image(96, 96, vals), 4);
  const auto m = dense_downscale_matrix(96, 24);
  for (int y = 0; y < 24; ++y)
    for (int j = 0; j < 24; ++j) {
      double e = 0.0;
      for (int i = 0; i < 96; ++i) e += m[j][i] * (i / 95.0);
      CHECK(std::abs(d.at(0, y, j) - e) < 1e-6);
    }
}

TEST_CASE("indivisible sizes are cropped before downscaling") {
  Image img(98, 97, 3);
  img.tensor().fill(0.25);
  const Image d = downscale_bicubic(img, 4);
  CHECK(d.width() == 24);
  CHECK(d.height() == 24);
}

TEST_CASE("downscaling commutes with the eight symmetries") {
  const Image src = read_image(test::data_dir() / "train" / "coffee.png");
  const Image hr = crop(src, 40, 50, 64, 64);
  for (int rot : {0, 90, 180, 270})
    for (bool h : {false, true})
      for (bool v : {false, true}) {
        const Augmentation a{rot, h, v};
        const Image x = downscale_bicubic(apply_augmentation(hr, a), 4);
        const Image y = apply_augmentation(downscale_bicubic(hr, 4), a);
        CHECK(test::max_abs_diff(x.tensor(), y.tensor()) < 1e-6);
      }
}

TEST_CASE("augmentations form the dihedral group") {
  std::set<int> seen;
  std::vector<double> vals(12);
  for (int i = 0; i < 12; ++i) vals[i] = i;
  const Image img = gray_image(4, 3, vals);
  std::set<std::vector<double>> outputs;
  for (int rot : {0, 90, 180, 270})
    for (bool h : {false, true})
      for (bool v : {false, true}) {
        const Augmentation a{rot, h, v};
        seen.insert(a.dihedral_index());
        const Image out = apply_augmentation(img, a);
        outputs.insert(std::vector<double>(out.plane(0).begin(), out.plane(0).end()));
        if (rot % 180 == 0) {
          CHECK(out.width() == 4);
        } else {
          CHECK(out.width() == 3);
        }
      }
  CHECK(seen.size() == 8);
  CHECK(outputs.size() == 8);
  const Image r90 = apply_augmentation(img, {90, false, false});
  // Counter-clockwise: the top-right corner moves to the top-left.
  CHECK(r90.at(0, 0, 0) == img.at(0, 0, 3));
  const Image hv = apply_augmentation(img, {0, true, true});
  const Image r180 = apply_augmentation(img, {180, false, false});
  CHECK(test::max_abs_diff(hv.tensor(), r180.tensor()) == 0.0);
  CHECK_THROWS_AS(apply_augmentation(img, {45, false, false}), InputError);
}

TEST_CASE("zero-centering round trip") {
  std::mt19937_64 rng(1);
  Image img(9, 7, 3);
  img.tensor() = test::random_tensor({1, 3, 7, 9}, rng, 0.0, 1.0);
  const Image orig = img;
  const ChannelMean m{0.41, 0.37, 0.33};
  subtract_mean(img, m);
  CHECK(img.at(1, 2, 3) == doctest::Approx(orig.at(1, 2, 3) - 0.37));
  add_mean(img, m);
  CHECK(test::max_abs_diff(img.tensor(), orig.tensor()) < 1e-7);
  CHECK(parse_zero_center("both") == ZeroCenter::Both);
  CHECK(parse_zero_center(to_string(ZeroCenter::LowResOnly)) == ZeroCenter::LowResOnly);
  CHECK_THROWS_AS(parse_zero_center("sometimes"), ConfigError);
}

TEST_CASE("channel mean of gray images") {
  std::vector<Image> imgs;
  for (int i = 0; i < 2; ++i) {
    Image g(5, 4, 3);
    g.tensor().fill(0.5);
    imgs.push_back(g);
  }
  const auto m = compute_channel_mean(imgs);
  for (double v : m) CHECK(v == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("ingest sorts, skips unreadable files and computes the train mean") {
  test::TempDir dir("ingest");
  std::filesystem::create_directories(dir / "sub");
  write_gray_png(dir / "b.png", 8, 6, 128.0 / 255.0);
  write_gray_png(dir / "sub" / "a.png", 4, 4, 128.0 / 255.0);
  {
    std::ofstream f(dir / "broken.png");
    f << "garbage";
  }
  const auto idx = ingest_dataset({dir.path()}, "train");
  REQUIRE(idx.entries.size() == 2);
  CHECK(idx.entries[0].path < idx.entries[1].path);
  CHECK(idx.entries[0].width == 8);
  for (double v : idx.channel_mean) CHECK(v == doctest::Approx(128.0 / 255.0).epsilon(1e-12));

  idx.save(dir / "index.json");
  const auto back = DatasetIndex::load(dir / "index.json");
  CHECK(back.entries.size() == 2);
  CHECK(back.channel_mean == idx.channel_mean);

  const auto val = ingest_dataset({dir / "sub"}, "val", &idx.channel_mean);
  CHECK(val.channel_mean == idx.channel_mean);

  test::TempDir empty("ingest_empty");
  CHECK_THROWS_AS(ingest_dataset({empty.path()}, "train"), ConfigError);
}

TEST_CASE("sampler is deterministic for a fixed seed") {
  const auto idx = ingest_dataset({test::data_dir() / "train"}, "train");
  SamplerOptions o;
  o.hr_patch = 32;
  const PatchSampler s(idx, o);
  std::mt19937_64 a(5), b(5);
  for (int i = 0; i < 5; ++i) {
    const auto p = s.sample(a);
    const auto q = s.sample(b);
    CHECK(p.source == q.source);
    CHECK(p.augmentation == q.augmentation);
    CHECK(test::max_abs_diff(p.hr.tensor(), q.hr.tensor()) == 0.0);
    CHECK(test::max_abs_diff(p.lr.tensor(), q.lr.tensor()) == 0.0);
    CHECK(p.lr.width() == 8);
  }
}

TEST_CASE("whole-image patch without augmentation is the centred source") {
  std::mt19937_64 rng(6);
  Image src(96, 96, 3);
  src.tensor() = test::random_tensor({1, 3, 96, 96}, rng, 0.0, 1.0);
  const ChannelMean mean{0.2, 0.3, 0.4};
  SamplerOptions o;
  o.augment = false;
  const PatchSampler s({src}, mean, o);
  const auto p = s.sample(rng);
  CHECK(p.x0 == 0);
  CHECK(p.y0 == 0);
  Image expect = src;
  subtract_mean(expect, mean);
  CHECK(test::max_abs_diff(p.hr.tensor(), expect.tensor()) < 1e-15);
  Image lr_expect = downscale_bicubic(src, 4);
  subtract_mean(lr_expect, mean);
  CHECK(test::max_abs_diff(p.lr.tensor(), lr_expect.tensor()) < 1e-12);
}

TEST_CASE("low-resolution-only centring leaves the target untouched") {
  Image src(16, 16, 3);
  src.tensor().fill(0.6);
  SamplerOptions o;
  o.hr_patch = 16;
  o.zero_center = ZeroCenter::LowResOnly;
  const PatchSampler s({src}, {0.5, 0.5, 0.5}, o);
  std::mt19937_64 rng(1);
  const auto p = s.sample(rng);
  CHECK(p.hr.at(0, 3, 3) == doctest::Approx(0.6));
  CHECK(p.lr.at(0, 1, 1) == doctest::Approx(0.1));
}

TEST_CASE("each symmetry is drawn with probability 1/8") {
  Image src(8, 8, 3);
  src.tensor().fill(0.5);
  SamplerOptions o;
  o.hr_patch = 8;
  const PatchSampler s({src}, {0, 0, 0}, o);
  std::mt19937_64 rng(7);
  std::array<int, 8> counts{};
  const int n = 10000;
  for (int i = 0; i < n; ++i) ++counts[s.sample(rng).augmentation.dihedral_index()];
  const double p = 1.0 / 8.0;
  const double sigma = std::sqrt(n * p * (1 - p));
  for (int c : counts) CHECK(std::abs(c - n * p) < 3.0 * sigma);
}

TEST_CASE("undersized images are never sampled") {
  Image big(32, 32, 3), small(8, 40, 3);
  big.tensor().fill(0.3);
  small.tensor().fill(0.9);
  SamplerOptions o;
  o.hr_patch = 16;
  const PatchSampler s({small, big}, {0, 0, 0}, o);
  std::mt19937_64 rng(8);
  for (int i = 0; i < 50; ++i) CHECK(s.sample(rng).source == 1);
  CHECK_THROWS_AS(PatchSampler({small}, {0, 0, 0}, o), ConfigError);
}

TEST_CASE("low-resolution patches stay aligned with their targets") {
  const auto idx = ingest_dataset({test::data_dir() / "train"}, "train");
  const PatchSampler s(idx, SamplerOptions{});
  std::mt19937_64 rng(9);
  for (int i = 0; i < 20; ++i) {
    const auto p = s.sample(rng);
    const Image up = upscale_nearest(p.lr, 4);
    double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
    const auto& a = up.tensor();
    const auto& b = p.hr.tensor();
    const double n = static_cast<double>(a.size());
    for (std::size_t k = 0; k < a.size(); ++k) {
      sa += a[k];
      sb += b[k];
      saa += a[k] * a[k];
      sbb += b[k] * b[k];
      sab += a[k] * b[k];
    }
    const double cov = sab / n - sa * sb / (n * n);
    const double rho = cov / std::sqrt((saa / n - sa * sa / (n * n)) * (sbb / n - sb * sb / (n * n)));
    CHECK(rho > 0.5);
  }
}

TEST_CASE("batches stack pairs along N") {
  Image src(32, 32, 3);
  src.tensor().fill(0.5);
  SamplerOptions o;
  o.hr_patch = 16;
  const PatchSampler s({src}, {0, 0, 0}, o);
  std::mt19937_64 rng(10);
  const auto b = s.sample_batch(rng, 3);
  CHECK(b.lr.shape() == Shape{3, 3, 4, 4});
  CHECK(b.hr.shape() == Shape{3, 3, 16, 16});
}
