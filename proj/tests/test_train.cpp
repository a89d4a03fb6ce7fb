#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "srfm/archive.hpp"
#include "srfm/errors.hpp"
#include "srfm/train/config.hpp"
#include "srfm/train/optim.hpp"
#include "srfm/train/trainer.hpp"
#include "support.hpp"

using namespace srfm;
using namespace srfm::train;

namespace {

std::shared_ptr<const data::PatchSampler> fixture_sampler(const TrainConfig& c) {
  const auto idx = data::ingest_dataset({test::data_dir() / "train"}, "train");
  data::SamplerOptions o;
  o.hr_patch = c.hr_patch;
  o.scale = c.scale;
  o.augment = c.augment;
  o.zero_center = c.zero_center;
  return std::make_shared<const data::PatchSampler>(idx, o);
}

TrainConfig tiny(loss::Preset p) {
  TrainConfig c = TrainConfig::tiny();
  c.preset = p;
  return c;
}

bool same_breakdown(const loss::LossBreakdown& a, const loss::LossBreakdown& b, double tol) {
  auto close = [&](double x, double y) { return std::abs(x - y) <= tol; };
  if (!close(a.total, b.total) || !close(a.point, b.point) || !close(a.vgg, b.vgg) ||
      !close(a.adv, b.adv) || !close(a.content_total, b.content_total)) {
    return false;
  }
  if (a.content_layer.size() != b.content_layer.size()) return false;
  for (std::size_t i = 0; i < a.content_layer.size(); ++i) {
    if (!close(a.content_layer[i], b.content_layer[i])) return false;
    if (!close(a.softmax_weight[i], b.softmax_weight[i])) return false;
  }
  return true;
}

double param_distance(const std::vector<nn::Parameter*>& a,
                      const std::vector<nn::Parameter*>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, test::max_abs_diff(a[i]->value, b[i]->value));
  return m;
}

}  // namespace

TEST_CASE("scaled MSRA initialization statistics") {
  std::vector<nn::Parameter> store;
  for (int i = 0; i < 3; ++i) store.emplace_back("w" + std::to_string(i), nn::ParamKind::Weight, Shape{64, 64, 3, 3}, 9 * 64);
  store.emplace_back("b", nn::ParamKind::Bias, Shape{1, 64, 1, 1}, 9 * 64);
  store.emplace_back("g", nn::ParamKind::NormScale, Shape{1, 8, 1, 1});
  std::vector<nn::Parameter*> ptrs;
  for (auto& p : store) ptrs.push_back(&p);
  for (double post : {0.1, 1.0}) {
    std::mt19937_64 rng(1);
    for (auto& p : store) p.value.fill(7.0);
    init_msra(ptrs, rng, post);
    double s = 0.0, ss = 0.0, n = 0.0;
    for (int i = 0; i < 3; ++i)
      for (double v : store[i].value.values()) {
        s += v;
        ss += v * v;
        n += 1.0;
      }
    CHECK(n > 1e5);
    const double sd = std::sqrt(ss / n - (s / n) * (s / n));
    const double expect = post * std::sqrt(2.0 / (9 * 64));
    CHECK(std::abs(sd / expect - 1.0) < 0.05);
    CHECK(store[3].value.sum() == 0.0);
    CHECK(store[4].value.sum() == 8.0);
  }
  std::mt19937_64 r1(9), r2(9);
  nn::Parameter a("a", nn::ParamKind::Weight, {4, 4, 3, 3}, 36), b = a;
  std::vector<nn::Parameter*> pa{&a}, pb{&b};
  init_msra(pa, r1);
  init_msra(pb, r2);
  CHECK(test::max_abs_diff(a.value, b.value) == 0.0);
}

TEST_CASE("learning-rate schedule boundaries") {
  const long len = 7;
  CHECK(lr_at(0, len) == doctest::Approx(1e-4));
  CHECK(lr_at(199 * len + 6, len) == doctest::Approx(1e-4));
  CHECK(lr_at(200 * len, len) == doctest::Approx(1e-5));
  CHECK(lr_at(399 * len, len) == doctest::Approx(1e-5));
  CHECK(lr_at(400 * len, len) == doctest::Approx(1e-6));
}

TEST_CASE("Adam matches the bias-corrected update by hand") {
  nn::Parameter p("p", nn::ParamKind::Weight, {1, 1, 1, 2}, 1);
  p.value[0] = 1.0;
  p.value[1] = -2.0;
  Adam opt({&p}, AdamOptions{});
  double m = 0.0, v = 0.0, x = 1.0;
  const double grads[] = {0.5, -0.25, 0.75};
  for (int t = 1; t <= 3; ++t) {
    p.grad[0] = grads[t - 1];
    p.grad[1] = 0.0;
    opt.step(1e-2);
    m = 0.9 * m + 0.1 * grads[t - 1];
    v = 0.999 * v + 0.001 * grads[t - 1] * grads[t - 1];
    const double mh = m / (1 - std::pow(0.9, t));
    const double vh = v / (1 - std::pow(0.999, t));
    x -= 1e-2 * mh / (std::sqrt(vh) + 1e-8);
    CHECK(p.value[0] == doctest::Approx(x).epsilon(1e-12));
    CHECK(p.value[1] == -2.0);
  }
  CHECK(opt.steps() == 3);
}

TEST_CASE("configuration parsing and overrides") {
  TrainConfig c = TrainConfig::tiny();
  CHECK_NOTHROW(c.validate());
  apply_setting(c, "batch", "8");
  apply_setting(c, "preset", "M_pva");
  apply_setting(c, "loss.gamma_vgg", "0.25");
  apply_setting(c, "hr_patch", "48");
  apply_setting(c, "extractor_layers", "[4, 0, 8]");
  CHECK(c.batch == 8);
  CHECK(c.preset == loss::Preset::Mpva);
  CHECK(c.weights.gamma_vgg == 0.25);
  CHECK(c.discriminator.input_size == 48);
  CHECK(c.extractor_layers == std::vector<int>{4, 0, 8});
  CHECK_THROWS_AS(apply_setting(c, "no_such_key", "1"), ConfigError);
  CHECK_THROWS_AS(apply_setting(c, "batch", "many"), ConfigError);

  const auto kv = parse_key_values("# comment\nbatch = 2\nname = \"x # y\" # trailing\n\n");
  CHECK(kv.at("batch") == "2");
  CHECK(kv.at("name") == "\"x # y\"");
  CHECK(kv.size() == 2);

  test::TempDir dir("config");
  {
    std::ofstream f(dir / "t.toml");
    f << "preset = \"M_pcsa\"\nlr0 = 2e-4\nseed = 5\n";
  }
  const TrainConfig parsed = parse_config_file(dir / "t.toml", TrainConfig::tiny());
  CHECK(parsed.preset == loss::Preset::Mpcsa);
  CHECK(parsed.lr0 == 2e-4);
  CHECK(parsed.batch == 4);
  const auto diff = config_differences(parsed, TrainConfig::tiny());
  CHECK(std::find(diff.begin(), diff.end(), "seed") != diff.end());

  const TrainConfig round = nlohmann::json(parsed).get<TrainConfig>();
  CHECK(config_differences(round, parsed).empty());

  TrainConfig bad = TrainConfig::tiny();
  bad.discriminator.input_size = 96;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  CHECK(!config_keys().empty());
}

TEST_CASE("epoch length derives from the corpus when unset") {
  TrainConfig c = tiny(loss::Preset::Mp);
  c.epoch_len = 0;
  c.batch = 3;
  Trainer t(c, fixture_sampler(c), {});
  CHECK(t.epoch_len() == 2);
}

TEST_CASE("two runs with one seed give identical loss streams") {
  const TrainConfig c = tiny(loss::Preset::Mpcsva);
  Trainer a(c, fixture_sampler(c), make_extractor(c));
  Trainer b(c, fixture_sampler(c), make_extractor(c));
  for (int i = 0; i < 10; ++i) {
    const auto ra = a.step();
    const auto rb = b.step();
    CHECK(same_breakdown(ra.generator, rb.generator, 0.0));
    CHECK(ra.discriminator_loss == rb.discriminator_loss);
  }
}

TEST_CASE("checkpoint round trip preserves the next step") {
  test::TempDir dir("ckpt");
  const TrainConfig c = tiny(loss::Preset::Mpcsva);
  Trainer a(c, fixture_sampler(c), make_extractor(c));
  for (int i = 0; i < 3; ++i) (void)a.step();
  a.save_checkpoint(dir / "c.srfm");
  const Archive ar = read_archive(dir / "c.srfm");
  CHECK(ar.manifest["update"] == a.update());
  const auto next_a = a.step();

  TrainConfig other = c;
  other.seed = 99;  // overwritten by the checkpoint state
  Trainer b(c, fixture_sampler(c), make_extractor(c));
  b.load_checkpoint(dir / "c.srfm");
  CHECK(b.update() == 3);
  CHECK(b.calibrated());
  const auto next_b = b.step();
  CHECK(same_breakdown(next_a.generator, next_b.generator, 1e-6));
  CHECK(std::abs(next_a.discriminator_loss - next_b.discriminator_loss) < 1e-6);

  Trainer mismatch(other, fixture_sampler(other), make_extractor(other));
  try {
    mismatch.load_checkpoint(dir / "c.srfm");
    FAIL("expected a configuration mismatch");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("seed") != std::string::npos);
  }
  CHECK_THROWS_AS(b.load_checkpoint(dir / "missing.srfm"), IoError);
}

TEST_CASE("zero residual gives no perceptual or content gradient") {
  TrainConfig c = tiny(loss::Preset::Mpcsva);
  c.freeze_discriminator = true;
  Trainer t(c, fixture_sampler(c), make_extractor(c));
  std::mt19937_64 rng(3);
  const auto batch = fixture_sampler(c)->sample_batch(rng, 4);
  t.calibrate(batch);
  loss::Components mask{false, true, false, true, true};
  const auto obj = t.generator_objective(batch.hr, batch.hr, mask);
  CHECK(obj.breakdown.vgg == 0.0);
  CHECK(obj.breakdown.content_total == 0.0);
  double m = 0.0;
  for (double g : obj.grad_estimate.values()) m = std::max(m, std::abs(g));
  CHECK(m == 0.0);
}

TEST_CASE("generator objective gradient matches frozen-weight differences") {
  TrainConfig c = tiny(loss::Preset::Mpcsva);
  c.hr_patch = 16;
  c.discriminator.input_size = 16;
  Trainer t(c, nullptr, make_extractor(c));
  std::mt19937_64 rng(4);
  const Tensor hr = test::random_tensor({2, 3, 16, 16}, rng, -0.5, 0.5);
  Tensor est = test::random_tensor({2, 3, 16, 16}, rng, -0.5, 0.5);
  t.calibrate({test::random_tensor({2, 3, 4, 4}, rng), hr});
  const loss::Components all{true, true, true, true, true};
  const auto obj = t.generator_objective(est, hr, all);
  const auto& w = obj.breakdown.softmax_weight;
  const auto& scale = t.calibration().scale;
  const auto& lw = t.config().weights;

  auto frozen_total = [&] {
    const auto d = t.discriminator().forward(est, true);
    const auto dh = t.discriminator().forward(hr, true);
    double content = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i)
      content += w[i] * loss::layer_content_loss(d.taps, dh.taps, i) / scale[i];
    return content + lw.lambda_adv * loss::adversarial_gen_loss(d.probabilities) +
           lw.eta_point * loss::huber_loss(est, hr) +
           lw.gamma_vgg * loss::perceptual_loss(t.extractor(), est, hr);
  };
  CHECK(frozen_total() == doctest::Approx(obj.breakdown.total).epsilon(1e-12));
  int checked = 0;
  for (std::size_t i = 0; i < est.size(); i += 41) {
    const double fd = test::central_difference(est, i, 1e-6, frozen_total);
    CHECK(test::rel_err(obj.grad_estimate[i], fd, 1e-9) < 1e-4);
    ++checked;
  }
  CHECK(checked > 30);
}

TEST_CASE("vgg term does not touch the first discriminator update") {
  const TrainConfig cv = tiny(loss::Preset::Mpcsva);
  const TrainConfig ca = tiny(loss::Preset::Mpcsa);
  Trainer a(cv, fixture_sampler(cv), make_extractor(cv));
  Trainer b(ca, fixture_sampler(ca), make_extractor(ca));
  const auto ra = a.step();
  const auto rb = b.step();
  CHECK(ra.discriminator_loss == rb.discriminator_loss);
  CHECK(param_distance(a.discriminator().parameters(), b.discriminator().parameters()) == 0.0);
  CHECK(ra.generator.vgg > 0.0);
  CHECK(rb.generator.vgg == 0.0);
}

TEST_CASE("non-finite inputs abort before any weights change") {
  const TrainConfig c = tiny(loss::Preset::Mpva);
  Trainer t(c, fixture_sampler(c), make_extractor(c));
  std::mt19937_64 rng(5);
  auto batch = fixture_sampler(c)->sample_batch(rng, 4);
  batch.lr[10] = std::numeric_limits<double>::quiet_NaN();
  std::vector<Tensor> before;
  for (auto* p : t.generator().parameters()) before.push_back(p->value);
  for (auto* p : t.discriminator().parameters()) before.push_back(p->value);
  CHECK_THROWS_AS(t.step(batch), NumericError);
  std::size_t k = 0;
  for (auto* p : t.generator().parameters()) CHECK(test::max_abs_diff(p->value, before[k++]) == 0.0);
  for (auto* p : t.discriminator().parameters()) CHECK(test::max_abs_diff(p->value, before[k++]) == 0.0);
  CHECK(t.update() == 0);
}

TEST_CASE("discriminator learns to separate a frozen generator's output") {
  TrainConfig c = tiny(loss::Preset::Mpva);
  c.freeze_generator = true;
  Trainer t(c, fixture_sampler(c), make_extractor(c));
  double best = 0.0, window = 0.0;
  for (int i = 1; i <= 500; ++i) {
    const auto r = t.step();
    CHECK_FALSE(r.generator_updated);
    window += r.discriminator_accuracy;
    if (i % 25 == 0) {
      best = std::max(best, window / 25.0);
      window = 0.0;
    }
    if (best > 0.9) break;
  }
  CHECK(best > 0.9);
}

TEST_CASE("point-only training reduces the point loss") {
  const TrainConfig c = tiny(loss::Preset::Mp);
  Trainer t(c, fixture_sampler(c), make_extractor(c));
  std::vector<double> windows;
  double acc = 0.0;
  for (int i = 1; i <= 500; ++i) {
    const auto r = t.step();
    CHECK(r.generator.all_finite());
    CHECK_FALSE(r.discriminator_updated);
    CHECK(r.generator.adv == 0.0);
    acc += r.generator.point;
    if (i % 50 == 0) {
      windows.push_back(acc / 50.0);
      acc = 0.0;
    }
  }
  for (std::size_t i = 1; i < windows.size(); ++i) CHECK(windows[i] <= windows[i - 1]);
  CHECK(windows.back() <= 0.7 * windows.front());
}

TEST_CASE("inference model reproduces the trainer's generator") {
  test::TempDir dir("infer");
  const TrainConfig c = tiny(loss::Preset::Mp);
  Trainer t(c, fixture_sampler(c), {});
  (void)t.step();
  t.save_checkpoint(dir / "c.srfm");
  const auto m = InferenceModel::load(dir / "c.srfm");
  Image lr(10, 7, 3);
  lr.tensor().fill(0.4);
  const Image sr = m.upscale(lr);
  CHECK(sr.width() == 40);
  CHECK(sr.height() == 28);
  Image centred = lr;
  data::subtract_mean(centred, t.channel_mean());
  Tensor expect = t.generator().forward(centred.tensor());
  for (int ch = 0; ch < 3; ++ch)
    for (double& v : expect.plane(0, ch)) v = std::clamp(v + t.channel_mean()[ch], 0.0, 1.0);
  CHECK(test::max_abs_diff(sr.tensor(), expect) < 1e-12);
  CHECK(Trainer::checkpoint_config(dir / "c.srfm").preset == loss::Preset::Mp);
}
