#include <doctest.h>

#include <fstream>
#include <random>

#include "srfm/archive.hpp"
#include "srfm/errors.hpp"
#include "srfm/image.hpp"
#include "srfm/parallel.hpp"
#include "srfm/tensor.hpp"
#include "support.hpp"

using namespace srfm;

TEST_CASE("tensor indexing is NCHW row-major") {
  Tensor t({2, 3, 4, 5});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<double>(i);
  CHECK(t(1, 2, 3, 4) == doctest::Approx(119));
  CHECK(t(1, 0, 0, 0) == doctest::Approx(60));
  CHECK(t.plane(1, 1)[0] == doctest::Approx(80));
  CHECK(t.sample(1).size() == 60);
}

TEST_CASE("tensor arithmetic and shape checks") {
  Tensor a({1, 1, 2, 2}, {1, 2, 3, 4});
  Tensor b({1, 1, 2, 2}, {4, 3, 2, 1});
  CHECK((a + b).sum() == doctest::Approx(20));
  CHECK((a - b).sum() == doctest::Approx(0));
  a.add_scaled(b, 0.5);
  CHECK(a[0] == doctest::Approx(3));
  CHECK(a.mean() == doctest::Approx(3.75));
  CHECK_THROWS_AS(a += Tensor({1, 1, 1, 4}), ShapeError);
  CHECK_THROWS_AS(a.reshape({1, 1, 3, 1}), ShapeError);
  a.reshape({4, 1, 1, 1});
  CHECK(a.n() == 4);
  Tensor bad({1, 1, 1, 1}, {std::nan("")});
  CHECK_FALSE(bad.all_finite());
}

TEST_CASE("slice and concat along the batch axis are inverse") {
  std::mt19937_64 rng(3);
  const Tensor t = test::random_tensor({5, 2, 3, 3}, rng);
  const Tensor parts[] = {slice_batch(t, 0, 2), slice_batch(t, 2, 3)};
  const Tensor back = concat_batch(parts);
  CHECK(back.shape() == t.shape());
  CHECK(test::max_abs_diff(back, t) == 0.0);
}

TEST_CASE("archive round trip preserves arrays and manifest bit-exactly") {
  test::TempDir dir("archive");
  std::mt19937_64 rng(11);
  Archive a;
  a.manifest = {{"kind", "test"}, {"update", 42}};
  a.arrays["b.weight"] = test::random_tensor({3, 2, 3, 3}, rng);
  a.arrays["a.bias"] = test::random_tensor({1, 3, 1, 1}, rng);
  a.arrays["empty"] = Tensor({0, 0, 0, 0});
  write_archive(dir / "x.srfm", a);
  const Archive b = read_archive(dir / "x.srfm");
  CHECK(b.manifest == a.manifest);
  REQUIRE(b.arrays.size() == 3);
  for (const auto& [name, t] : a.arrays) {
    CHECK(b.array(name).shape() == t.shape());
    CHECK(test::max_abs_diff(b.array(name), t) == 0.0);
  }
  CHECK_THROWS_AS((void)b.array("missing"), Error);
}

TEST_CASE("truncated or foreign archives are rejected") {
  test::TempDir dir("archive_bad");
  Archive a;
  a.arrays["w"] = Tensor({1, 1, 4, 4}, 1.0);
  write_archive(dir / "ok.srfm", a);
  const auto full = std::filesystem::file_size(dir / "ok.srfm");
  std::filesystem::copy_file(dir / "ok.srfm", dir / "cut.srfm");
  std::filesystem::resize_file(dir / "cut.srfm", full - 8);
  CHECK_THROWS_AS(read_archive(dir / "cut.srfm"), IoError);
  {
    std::ofstream f(dir / "junk.srfm");
    f << "not an archive at all";
  }
  CHECK_THROWS_AS(read_archive(dir / "junk.srfm"), IoError);
  CHECK_THROWS_AS(read_archive(dir / "absent.srfm"), IoError);
}

TEST_CASE("PNG round trip is lossless for 8-bit content") {
  test::TempDir dir("png");
  Image img(7, 5, 3, ImageRole::HighRes);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 5; ++y)
      for (int x = 0; x < 7; ++x) img.at(c, y, x) = ((c * 31 + y * 7 + x * 13) % 256) / 255.0;
  write_image(dir / "a.png", img);
  const Image back = read_image(dir / "a.png");
  REQUIRE(back.width() == 7);
  REQUIRE(back.height() == 5);
  CHECK(test::max_abs_diff(back.tensor(), img.tensor()) < 1e-12);
  CHECK_THROWS_AS(read_image(dir / "nope.png"), IoError);
}

TEST_CASE("crop helpers") {
  Image img(10, 9, 3);
  CHECK(crop_to_multiple(img, 4).width() == 8);
  CHECK(crop_to_multiple(img, 4).height() == 8);
  CHECK(shave(img, 2).width() == 6);
  CHECK(shave(img, 2).height() == 5);
  CHECK_THROWS_AS(crop(img, 5, 5, 6, 1), InputError);
}

TEST_CASE("quantize_8bit snaps to the 1/255 grid and clamps") {
  Image img(3, 1, 1);
  img.at(0, 0, 0) = -0.2;
  img.at(0, 0, 1) = 0.5;
  img.at(0, 0, 2) = 1.7;
  quantize_8bit(img);
  CHECK(img.at(0, 0, 0) == 0.0);
  CHECK(img.at(0, 0, 1) == doctest::Approx(128.0 / 255.0));
  CHECK(img.at(0, 0, 2) == 1.0);
}

TEST_CASE("parallel_for visits every index once and propagates errors") {
  std::vector<int> hits(1000, 0);
  parallel_for(hits.size(), 4, [&](std::size_t i) { hits[i] += 1; });
  for (int h : hits) CHECK(h == 1);
  CHECK_THROWS_AS(parallel_for(10, 3,
                               [](std::size_t i) {
                                 if (i == 7) throw InputError("seven");
                               }),
                  InputError);
}
