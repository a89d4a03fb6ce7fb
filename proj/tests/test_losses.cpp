#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "srfm/errors.hpp"
#include "srfm/losses.hpp"
#include "srfm/nn/feature_extractor.hpp"
#include "srfm/nn/layers.hpp"
#include "support.hpp"

using namespace srfm;
using namespace srfm::loss;

namespace {

Tensor constant_residual(double e, Tensor* hr_out) {
  std::mt19937_64 rng(1);
  Tensor hr = test::random_tensor({2, 3, 4, 5}, rng);
  Tensor est = hr;
  for (auto& v : est.values()) v += e;
  *hr_out = hr;
  return est;
}

// Quadratic toy model: L_i(theta) = mean((A_i theta - b_i)^2), A_i is 3x10.
struct ToyModel {
  static constexpr int kParams = 10;
  static constexpr int kRows = 3;
  std::vector<std::vector<double>> a;  // per layer, row-major kRows x kParams
  std::vector<std::vector<double>> b;

  ToyModel(int layers, std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    a.resize(layers);
    b.resize(layers);
    for (int i = 0; i < layers; ++i) {
      for (int k = 0; k < kRows * kParams; ++k) a[i].push_back(n(rng));
      for (int k = 0; k < kRows; ++k) b[i].push_back(3.0 * n(rng));
    }
  }
  [[nodiscard]] std::vector<double> losses(const std::vector<double>& th) const {
    std::vector<double> out;
    for (std::size_t i = 0; i < a.size(); ++i) {
      double s = 0.0;
      for (int r = 0; r < kRows; ++r) {
        double v = -b[i][r];
        for (int k = 0; k < kParams; ++k) v += a[i][r * kParams + k] * th[k];
        s += v * v;
      }
      out.push_back(s / kRows);
    }
    return out;
  }
  [[nodiscard]] std::vector<double> grad(std::size_t i, const std::vector<double>& th) const {
    std::vector<double> g(kParams, 0.0);
    for (int r = 0; r < kRows; ++r) {
      double v = -b[i][r];
      for (int k = 0; k < kParams; ++k) v += a[i][r * kParams + k] * th[k];
      for (int k = 0; k < kParams; ++k) g[k] += 2.0 * v * a[i][r * kParams + k] / kRows;
    }
    return g;
  }
};

double rel_norm_diff(const std::vector<double>& x, const std::vector<double>& y) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    num += (x[i] - y[i]) * (x[i] - y[i]);
    den += y[i] * y[i];
  }
  return std::sqrt(num / std::max(den, 1e-300));
}

}  // namespace

TEST_CASE("huber loss example values") {
  Tensor hr;
  CHECK(huber_loss(hr = Tensor({1, 3, 2, 2}, 0.3), hr) == 0.0);
  Tensor est = constant_residual(0.5, &hr);
  CHECK(huber_loss(est, hr) == doctest::Approx(0.125).epsilon(1e-12));
  est = constant_residual(2.0, &hr);
  CHECK(huber_loss(est, hr) == doctest::Approx(1.5).epsilon(1e-12));
  est = constant_residual(-2.0, &hr);
  CHECK(huber_loss(est, hr) == doctest::Approx(1.5).epsilon(1e-12));
  CHECK_THROWS_AS(huber_loss(Tensor({1, 1, 2, 2}), Tensor({1, 1, 2, 3})), InputError);
}

TEST_CASE("huber loss is continuous and C1 at |e| = 1") {
  Tensor hr({1, 1, 1, 1}, 0.0);
  const double below = huber_loss(Tensor({1, 1, 1, 1}, 1.0 - 1e-9), hr);
  const double above = huber_loss(Tensor({1, 1, 1, 1}, 1.0 + 1e-9), hr);
  CHECK(std::abs(above - below) < 1e-8);
  CHECK(huber_loss_grad(Tensor({1, 1, 1, 1}, 1.0 - 1e-9), hr)[0] ==
        doctest::Approx(huber_loss_grad(Tensor({1, 1, 1, 1}, 1.0 + 1e-9), hr)[0]));
}

TEST_CASE("huber gradient matches central differences") {
  for (double mag : {0.1, 0.99, 1.01, 5.0}) {
    for (double sign : {-1.0, 1.0}) {
      Tensor hr({1, 2, 2, 2}, 0.25);
      Tensor est = hr;
      for (auto& v : est.values()) v += sign * mag;
      const Tensor g = huber_loss_grad(est, hr);
      for (std::size_t i = 0; i < est.size(); ++i) {
        const double fd =
            test::central_difference(est, i, 1e-6, [&] { return huber_loss(est, hr); });
        CHECK(test::rel_err(g[i], fd) < 1e-5);
      }
      const double expect = (mag < 1.0 ? sign * mag : sign) / static_cast<double>(est.size());
      CHECK(g[0] == doctest::Approx(expect).epsilon(1e-12));
    }
  }
}

TEST_CASE("adversarial generator loss example values") {
  const double p1[] = {1.0};
  CHECK(adversarial_gen_loss(p1) == doctest::Approx(0.0).epsilon(1e-6));
  const double pe[] = {std::exp(-1.0)};
  CHECK(adversarial_gen_loss(pe) == doctest::Approx(1.0).epsilon(1e-12));
  const double pb[] = {0.5, 0.25};
  CHECK(std::abs(adversarial_gen_loss(pb) - 1.5 * std::log(2.0)) < 1e-9);
  const double bad[] = {1.5};
  CHECK_THROWS_AS(adversarial_gen_loss(bad), NumericError);
}

TEST_CASE("adversarial loss decreases in p") {
  double prev = 1e300;
  for (double p = 0.05; p < 1.0; p += 0.05) {
    const double v = adversarial_gen_loss(std::span<const double>(&p, 1));
    CHECK(v < prev);
    prev = v;
  }
}

TEST_CASE("discriminator loss example values") {
  const double f5[] = {0.5}, r5[] = {0.5};
  CHECK(std::abs(discriminator_loss(f5, r5) - 2.0 * std::log(2.0)) < 1e-9);
  const double f0[] = {0.0}, r1[] = {1.0};
  CHECK(discriminator_loss(f0, r1) < 1e-6);
  const double f25[] = {0.25}, r75[] = {0.75};
  CHECK(std::abs(discriminator_loss(f25, r75) - 2.0 * (std::log(4.0) - std::log(3.0))) < 1e-9);
}

TEST_CASE("adversarial logit gradients match finite differences") {
  const std::vector<double> z = {-1.2, 0.3, 2.0};
  auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  auto probs = [&](std::vector<double> zz) {
    for (auto& v : zz) v = sig(v);
    return zz;
  };
  const auto p = probs(z);
  const auto g_gen = adversarial_gen_loss_grad_logits(p);
  const auto g_fake = discriminator_loss_grad_fake_logits(p);
  const auto g_real = discriminator_loss_grad_real_logits(p);
  for (std::size_t i = 0; i < z.size(); ++i) {
    auto zp = z, zm = z;
    zp[i] += 1e-6;
    zm[i] -= 1e-6;
    const double fd_gen =
        (adversarial_gen_loss(probs(zp)) - adversarial_gen_loss(probs(zm))) / 2e-6;
    CHECK(test::rel_err(g_gen[i], fd_gen) < 1e-6);
    const auto pr = p;
    const double fd_fake =
        (discriminator_loss(probs(zp), pr) - discriminator_loss(probs(zm), pr)) / 2e-6;
    CHECK(test::rel_err(g_fake[i], fd_fake) < 1e-6);
    const double fd_real =
        (discriminator_loss(pr, probs(zp)) - discriminator_loss(pr, probs(zm))) / 2e-6;
    CHECK(test::rel_err(g_real[i], fd_real) < 1e-6);
  }
}

TEST_CASE("perceptual loss with the identity extractor is the pixel MSE") {
  std::mt19937_64 rng(2);
  const Tensor a = test::random_tensor({2, 3, 5, 5}, rng);
  const Tensor b = test::random_tensor({2, 3, 5, 5}, rng);
  const auto fx = nn::FeatureExtractor::identity();
  CHECK(perceptual_loss(fx, a, b) == doctest::Approx(mean_squared_distance(a, b)).epsilon(1e-14));
  CHECK(perceptual_loss(fx, a, a) == 0.0);
  CHECK_THROWS_AS(perceptual_loss(nn::FeatureExtractor{}, a, b), ConfigError);
}

TEST_CASE("perceptual loss of a random 2-layer extractor matches a direct oracle") {
  nn::ExtractorConfig c;
  c.layers = {3, 4};
  auto fx = nn::FeatureExtractor::random(c, 3);
  std::mt19937_64 rng(4);
  const Tensor a = test::random_tensor({1, 3, 6, 5}, rng, 0.0, 1.0);
  const Tensor b = test::random_tensor({1, 3, 6, 5}, rng, 0.0, 1.0);
  auto feat = [&](const Tensor& x) {
    Tensor h = test::naive_conv(x, fx.convs()[0].weight().value, fx.convs()[0].bias().value, 1, 1);
    for (auto& v : h.values()) v = std::max(v, 0.0);
    return test::naive_conv(h, fx.convs()[1].weight().value, fx.convs()[1].bias().value, 1, 1);
  };
  const Tensor fa = feat(a), fb = feat(b);
  double s = 0.0;
  for (std::size_t i = 0; i < fa.size(); ++i) s += (fa[i] - fb[i]) * (fa[i] - fb[i]);
  CHECK(perceptual_loss(fx, a, b) == doctest::Approx(s / fa.size()).epsilon(1e-12));
}

TEST_CASE("layer content loss: linear probe and elementwise oracle") {
  nn::Conv2d probe("probe", {1, 1, 1, 1, 0});
  probe.weight().value[0] = 1.7;
  probe.bias().value[0] = 0.3;
  std::mt19937_64 rng(5);
  const Tensor x = test::random_tensor({1, 1, 4, 4}, rng);
  Tensor xd = x;
  for (auto& v : xd.values()) v += 0.2;
  nn::FeatureTaps te{{probe.forward(xd)}}, th{{probe.forward(x)}};
  CHECK(layer_content_loss(te, th, 0) == doctest::Approx(1.7 * 0.2 * 1.7 * 0.2).epsilon(1e-12));
  CHECK(layer_content_loss(th, th, 0) == 0.0);
  CHECK_THROWS_AS(layer_content_loss(te, th, 1), InputError);

  nn::FeatureTaps ra, rb;
  const int sizes[] = {96, 48, 48, 24, 24, 12, 12, 6};
  const int chans[] = {64, 64, 128, 128, 256, 256, 512, 512};
  for (int i = 0; i < 8; ++i) {
    ra.maps.push_back(test::random_tensor({1, chans[i] / 16, sizes[i], sizes[i]}, rng));
    rb.maps.push_back(test::random_tensor({1, chans[i] / 16, sizes[i], sizes[i]}, rng));
  }
  for (std::size_t i = 0; i < 8; ++i) {
    std::vector<double> flat_a(ra[i].values().begin(), ra[i].values().end());
    std::vector<double> flat_b(rb[i].values().begin(), rb[i].values().end());
    double s = 0.0;
    for (std::size_t k = 0; k < flat_a.size(); ++k) s += std::pow(flat_a[k] - flat_b[k], 2);
    CHECK(layer_content_loss(ra, rb, i) == doctest::Approx(s / flat_a.size()).epsilon(1e-12));
  }
}

TEST_CASE("softmax reweighing examples") {
  const std::vector<double> eq(8, 0.37);
  const auto r = softmax_reweighed_content_loss(eq, ContentCalibration::unit(8));
  for (double w : r.weights) CHECK(w == doctest::Approx(0.125).epsilon(1e-12));
  CHECK(r.total == doctest::Approx(0.37).epsilon(1e-12));

  const std::vector<double> two = {0.0, std::log(3.0)};
  const auto t = softmax_reweighed_content_loss(two, ContentCalibration::unit(2));
  CHECK(t.weights[0] == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(t.weights[1] == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("softmax reweighing stays finite for large losses") {
  const std::vector<double> big = {1000.0, 1001.0, 999.0};
  const auto r = softmax_reweighed_content_loss(big, ContentCalibration::unit(3));
  CHECK(std::isfinite(r.total));
  CHECK(std::accumulate(r.weights.begin(), r.weights.end(), 0.0) == doctest::Approx(1.0));
  const std::vector<double> nan = {0.1, std::nan("")};
  CHECK_THROWS_AS(softmax_reweighed_content_loss(nan, ContentCalibration::unit(2)), NumericError);
  CHECK_THROWS_AS(softmax_reweighed_content_loss(big, ContentCalibration::unit(2)), InputError);
}

TEST_CASE("calibration divides before the softmax and raw mode skips it") {
  const std::vector<double> l = {2.0, 6.0};
  ContentCalibration c{{2.0, 3.0}};
  const auto cal = softmax_reweighed_content_loss(l, c, SoftmaxInput::Calibrated);
  CHECK(cal.scaled == std::vector<double>{1.0, 2.0});
  CHECK(cal.weights[1] == doctest::Approx(std::exp(2.0) / (std::exp(1.0) + std::exp(2.0))));
  CHECK(cal.grad_coefficients[1] == doctest::Approx(cal.weights[1] / 3.0));
  const auto raw = softmax_reweighed_content_loss(l, c, SoftmaxInput::Raw);
  CHECK(raw.scaled == l);
  CHECK(raw.grad_coefficients[0] == doctest::Approx(raw.weights[0]));
  CHECK(ContentCalibration::from_warmup(std::vector<double>{0.0, 0.5}).scale[0] ==
        kCalibrationFloor);
}

TEST_CASE("softmax weight properties over random instances") {
  std::mt19937_64 rng(6);
  std::uniform_int_distribution<int> kdist(2, 8);
  std::uniform_real_distribution<double> u(0.0, 5.0);
  for (int trial = 0; trial < 1000; ++trial) {
    const int k = kdist(rng);
    std::vector<double> l(k);
    ContentCalibration c;
    for (int i = 0; i < k; ++i) {
      l[i] = u(rng);
      c.scale.push_back(0.5 + u(rng));
    }
    const auto r = softmax_reweighed_content_loss(l, c);
    REQUIRE(std::abs(std::accumulate(r.weights.begin(), r.weights.end(), 0.0) - 1.0) < 1e-6);

    std::vector<int> perm(k);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<double> lp(k);
    ContentCalibration cp;
    for (int i = 0; i < k; ++i) {
      lp[i] = l[perm[i]];
      cp.scale.push_back(c.scale[perm[i]]);
    }
    const auto rp = softmax_reweighed_content_loss(lp, cp);
    for (int i = 0; i < k; ++i) REQUIRE(std::abs(rp.weights[i] - r.weights[perm[i]]) < 1e-12);

    const int j = trial % k;
    auto lu = l;
    lu[j] += 0.1 + u(rng);
    REQUIRE(softmax_reweighed_content_loss(lu, c).weights[j] > r.weights[j]);
  }
}

TEST_CASE("stopped-gradient reweighing on a 10-parameter toy model") {
  std::mt19937_64 rng(7);
  const ToyModel toy(5, rng);
  ContentCalibration calib;
  std::uniform_real_distribution<double> u(0.5, 3.0);
  for (int i = 0; i < 5; ++i) calib.scale.push_back(u(rng) * 10.0);
  std::vector<double> th(ToyModel::kParams);
  std::normal_distribution<double> n(0.0, 1.0);
  for (auto& t : th) t = n(rng);

  const auto r = softmax_reweighed_content_loss(toy.losses(th), calib);
  std::vector<double> analytic(ToyModel::kParams, 0.0);
  for (std::size_t i = 0; i < 5; ++i) {
    const auto gi = toy.grad(i, th);
    for (int k = 0; k < ToyModel::kParams; ++k) analytic[k] += r.grad_coefficients[i] * gi[k];
  }
  // Frozen weights: the weights of the base point multiply the moved losses.
  auto frozen = [&](const std::vector<double>& t) {
    const auto l = toy.losses(t);
    double s = 0.0;
    for (std::size_t i = 0; i < l.size(); ++i) s += r.weights[i] * l[i] / calib.scale[i];
    return s;
  };
  std::vector<double> fd(ToyModel::kParams);
  for (int k = 0; k < ToyModel::kParams; ++k) {
    auto tp = th, tm = th;
    tp[k] += 1e-6;
    tm[k] -= 1e-6;
    fd[k] = (frozen(tp) - frozen(tm)) / 2e-6;
  }
  CHECK(rel_norm_diff(analytic, fd) < 1e-3);

  const auto full_c = full_softmax_grad_coefficients(toy.losses(th), calib);
  std::vector<double> full(ToyModel::kParams, 0.0), full_fd(ToyModel::kParams);
  for (std::size_t i = 0; i < 5; ++i) {
    const auto gi = toy.grad(i, th);
    for (int k = 0; k < ToyModel::kParams; ++k) full[k] += full_c[i] * gi[k];
  }
  for (int k = 0; k < ToyModel::kParams; ++k) {
    auto tp = th, tm = th;
    tp[k] += 1e-6;
    tm[k] -= 1e-6;
    full_fd[k] = (softmax_reweighed_content_loss(toy.losses(tp), calib).total -
                  softmax_reweighed_content_loss(toy.losses(tm), calib).total) / 2e-6;
  }
  CHECK(rel_norm_diff(full, full_fd) < 1e-3);
  CHECK(rel_norm_diff(analytic, full) > 1e-2);
}

TEST_CASE("total loss weights and presets") {
  LossParts ones;
  ones.point = ones.vgg = ones.adv = ones.content_total = 1.0;
  const LossWeights w;
  Components all{true, true, true, true, true};
  CHECK(std::abs(total_generator_loss(ones, w, all).total - 1.515) < 1e-9);

  LossParts p;
  p.point = 0.7;
  p.vgg = 0.4;
  p.adv = 2.0;
  p.content_total = 3.0;
  CHECK(std::abs(total_generator_loss(p, w, components(Preset::Mp)).total - 0.01 * 0.7) < 1e-12);
  const double with_vgg = total_generator_loss(p, w, components(Preset::Mpcsva)).total;
  const double without = total_generator_loss(p, w, components(Preset::Mpcsa)).total;
  CHECK(std::abs((with_vgg - without) - 0.5 * 0.4) < 1e-12);
  const auto mp = total_generator_loss(p, w, components(Preset::Mp));
  CHECK(mp.adv == 0.0);
  CHECK(mp.vgg == 0.0);
  CHECK(mp.content_total == 0.0);

  LossWeights neg;
  neg.lambda_adv = -1.0;
  CHECK_THROWS_AS(total_generator_loss(p, neg, all), ConfigError);
}

TEST_CASE("total loss is linear in each component") {
  const LossWeights w;
  const Components all{true, true, true, true, true};
  LossParts base;
  base.point = 0.3;
  base.vgg = 0.2;
  base.adv = 0.9;
  base.content_total = 1.1;
  const double t0 = total_generator_loss(base, w, all).total;
  const double coef[] = {1.0, w.lambda_adv, w.eta_point, w.gamma_vgg};
  for (int k = 0; k < 4; ++k) {
    LossParts q = base;
    double* field[] = {&q.content_total, &q.adv, &q.point, &q.vgg};
    *field[k] += 2.0;
    CHECK(total_generator_loss(q, w, all).total - t0 == doctest::Approx(2.0 * coef[k]));
  }
}

TEST_CASE("preset names and components") {
  CHECK(parse_preset("M_pcσva") == Preset::Mpcsva);
  CHECK(parse_preset("M_pcsa") == Preset::Mpcsa);
  CHECK(parse_preset("Mpva") == Preset::Mpva);
  CHECK_THROWS_AS(parse_preset("M_x"), ConfigError);
  for (auto p : all_presets()) CHECK(parse_preset(to_string(p)) == p);
  CHECK(components(Preset::Mpca).content);
  CHECK_FALSE(components(Preset::Mpca).softmax);
  CHECK(components(Preset::Mpcsa).softmax);
  CHECK_FALSE(components(Preset::Mpcsa).vgg);
  CHECK(components(Preset::Mpva).vgg);
  CHECK_FALSE(components(Preset::Mpva).content);
}
