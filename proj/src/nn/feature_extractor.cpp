#include "srfm/nn/feature_extractor.hpp"

#include <cmath>
#include <random>

#include "srfm/archive.hpp"
#include "srfm/errors.hpp"

namespace srfm::nn {

ExtractorConfig ExtractorConfig::vgg19() {
  ExtractorConfig c;
  c.layers = {64,  64,  0,   128, 128, 0,   256, 256, 256, 256, 0,
              512, 512, 512, 512, 0,   512, 512, 512, 512};
  c.tap_conv = -1;
  // ImageNet statistics; the trainer shifts these by the dataset mean.
  c.input_shift = {0.485, 0.456, 0.406};
  c.input_scale = {0.229, 0.224, 0.225};
  return c;
}

int ExtractorConfig::num_convs() const {
  int n = 0;
  for (int l : layers) n += l > 0 ? 1 : 0;
  return n;
}

int ExtractorConfig::resolved_tap() const {
  return tap_conv < 0 ? num_convs() - 1 : tap_conv;
}

void FeatureExtractor::build() {
  if (config_.image_channels != 3 && config_.image_channels != 1) {
    throw ConfigError("extractor supports 1 or 3 image channels");
  }
  if (config_.num_convs() > 0 &&
      (config_.resolved_tap() < 0 || config_.resolved_tap() >= config_.num_convs())) {
    throw ConfigError("extractor tap index out of range");
  }
  convs_.clear();
  int in = config_.image_channels;
  int idx = 0;
  for (int l : config_.layers) {
    if (l < 0) throw ConfigError("extractor layer widths must be >= 0");
    if (l == 0) continue;
    convs_.emplace_back("features." + std::to_string(idx++), Conv2dSpec{in, l, 3, 1, 1});
    in = l;
  }
}

FeatureExtractor FeatureExtractor::random(ExtractorConfig config, std::uint64_t seed) {
  FeatureExtractor fx;
  fx.config_ = std::move(config);
  fx.build();
  std::mt19937_64 rng(seed);
  for (auto& conv : fx.convs_) {
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / conv.weight().fan_in));
    for (double& w : conv.weight().value.values()) w = dist(rng);
  }
  fx.loaded_ = true;
  fx.pretrained_ = false;
  return fx;
}

FeatureExtractor FeatureExtractor::identity(int image_channels) {
  FeatureExtractor fx;
  fx.config_.image_channels = image_channels;
  fx.build();
  fx.loaded_ = true;
  return fx;
}

FeatureExtractor FeatureExtractor::load(const std::filesystem::path& path) {
  const Archive ar = read_archive(path);
  const auto& m = ar.manifest;
  if (m.value("kind", "") != "feature_extractor") {
    throw ConfigError(path.string() + " is not a feature extractor archive");
  }
  FeatureExtractor fx;
  try {
    fx.config_.layers = m.at("layers").get<std::vector<int>>();
    fx.config_.tap_conv = m.value("tap_conv", -1);
    fx.config_.image_channels = m.value("image_channels", 3);
    fx.config_.input_shift = m.at("input_shift").get<std::array<double, 3>>();
    fx.config_.input_scale = m.at("input_scale").get<std::array<double, 3>>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": bad extractor manifest: " + e.what());
  }
  fx.build();
  for (auto& conv : fx.convs_) {
    for (Parameter* p : {&conv.weight(), &conv.bias()}) {
      const Tensor& t = ar.array(p->name);
      if (t.size() != p->value.size()) {
        throw ConfigError(path.string() + ": array '" + p->name + "' has " +
                          std::to_string(t.size()) + " values, expected " +
                          std::to_string(p->value.size()));
      }
      std::copy(t.values().begin(), t.values().end(), p->value.values().begin());
    }
  }
  fx.loaded_ = true;
  fx.pretrained_ = m.value("pretrained", false);
  return fx;
}

void FeatureExtractor::save(const std::filesystem::path& path) const {
  require_loaded();
  Archive ar;
  ar.manifest = {{"kind", "feature_extractor"},
                 {"layers", config_.layers},
                 {"tap_conv", config_.tap_conv},
                 {"image_channels", config_.image_channels},
                 {"input_shift", config_.input_shift},
                 {"input_scale", config_.input_scale},
                 {"pretrained", pretrained_}};
  for (const auto& conv : convs_) {
    ar.arrays[conv.weight().name] = conv.weight().value;
    ar.arrays[conv.bias().name] = conv.bias().value;
  }
  write_archive(path, ar);
}

void FeatureExtractor::set_input_transform(std::array<double, 3> shift,
                                           std::array<double, 3> scale) {
  config_.input_shift = shift;
  config_.input_scale = scale;
}

void FeatureExtractor::require_loaded() const {
  if (!loaded_) {
    throw ConfigError("perceptual feature extractor has no weights loaded");
  }
}

Tensor FeatureExtractor::features(const Tensor& x) const {
  ExtractorTrace scratch;
  return features(x, scratch);
}

Tensor FeatureExtractor::features(const Tensor& x, ExtractorTrace& trace) const {
  require_loaded();
  if (x.c() != config_.image_channels) {
    throw InputError("extractor expects " + std::to_string(config_.image_channels) +
                     " channels, got " + x.shape().str());
  }
  Tensor t = x;
  for (int n = 0; n < t.n(); ++n) {
    for (int c = 0; c < t.c(); ++c) {
      const double shift = config_.input_shift[c];
      const double inv = 1.0 / config_.input_scale[c];
      for (double& v : t.plane(n, c)) v = (v - shift) * inv;
    }
  }
  trace = ExtractorTrace{};
  trace.input = t;
  if (convs_.empty()) return t;

  const int tap = config_.resolved_tap();
  int conv_idx = 0;
  for (int l : config_.layers) {
    ExtractorTrace::Step step;
    step.input = t;
    if (l == 0) {
      step.is_pool = true;
      t = max_pool2(t, &step.argmax);
      trace.steps.push_back(std::move(step));
      continue;
    }
    step.conv_out = convs_[conv_idx].forward(t);
    if (conv_idx == tap) {
      Tensor out = step.conv_out;
      trace.steps.push_back(std::move(step));
      return out;
    }
    t = leaky_relu(step.conv_out, 0.0);
    trace.steps.push_back(std::move(step));
    ++conv_idx;
  }
  return t;
}

Tensor FeatureExtractor::input_gradient(const ExtractorTrace& trace,
                                        const Tensor& grad_features) {
  require_loaded();
  Tensor g = grad_features;
  if (!convs_.empty()) {
    // Walk back from the tap; the last recorded step is the tap conv.
    int conv_idx = 0;
    for (const auto& s : trace.steps) conv_idx += s.is_pool ? 0 : 1;
    bool at_tap = true;
    for (std::size_t i = trace.steps.size(); i-- > 0;) {
      const auto& s = trace.steps[i];
      if (s.is_pool) {
        g = max_pool2_backward(s.input.shape(), s.argmax, g);
        continue;
      }
      --conv_idx;
      if (!at_tap) g = leaky_relu_backward(s.conv_out, g, 0.0);
      at_tap = false;
      g = convs_[conv_idx].backward(s.input, g, false);
    }
  }
  for (int n = 0; n < g.n(); ++n) {
    for (int c = 0; c < g.c(); ++c) {
      const double inv = 1.0 / config_.input_scale[c];
      for (double& v : g.plane(n, c)) v *= inv;
    }
  }
  return g;
}

}  // namespace srfm::nn
