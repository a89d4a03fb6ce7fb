#include "srfm/train/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "srfm/errors.hpp"

namespace srfm::train {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string unquote(std::string s) {
  if (s.size() >= 2 && (s.front() == '"' || s.front() == '\'') && s.back() == s.front()) {
    return s.substr(1, s.size() - 2);
  }
  return s;
}

nlohmann::json parse_scalar(const nlohmann::json& like, const std::string& key,
                            const std::string& text) {
  try {
    std::size_t used = 0;
    switch (like.type()) {
      case nlohmann::json::value_t::boolean:
        if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
        if (text == "false" || text == "0" || text == "no" || text == "off") return false;
        break;
      case nlohmann::json::value_t::number_unsigned: {
        if (!text.empty() && text.front() == '-') break;
        const auto v = std::stoull(text, &used);
        if (used == text.size()) return v;
        break;
      }
      case nlohmann::json::value_t::number_integer: {
        const auto v = std::stoll(text, &used);
        if (used == text.size()) return v;
        break;
      }
      case nlohmann::json::value_t::number_float: {
        const double v = std::stod(text, &used);
        if (used == text.size()) return v;
        break;
      }
      case nlohmann::json::value_t::string:
        return text;
      default:
        break;
    }
  } catch (const std::exception&) {
  }
  throw ConfigError("invalid value '" + text + "' for " + key);
}

const std::map<std::string, std::string> kDescriptions = {
    {"preset", "loss preset: M_p, M_pva, M_pca, M_pcsa, M_pcsva"},
    {"batch", "patches per update"},
    {"total_updates", "number of generator updates"},
    {"lr0", "initial learning rate"},
    {"lr_decay", "learning-rate factor applied every decay_epochs"},
    {"decay_epochs", "epochs between learning-rate decays"},
    {"epoch_len", "updates per epoch (0: ceil(images / batch))"},
    {"beta1", "Adam first-moment decay"},
    {"beta2", "Adam second-moment decay"},
    {"adam_eps", "Adam denominator epsilon"},
    {"seed", "seed for every random stream"},
    {"checkpoint_interval", "updates between checkpoints"},
    {"hr_patch", "high-resolution patch side (also the discriminator input)"},
    {"scale", "upscale factor (power of two)"},
    {"augment", "random flips and right-angle rotations"},
    {"zero_center", "mean subtraction: both, lr or none"},
    {"init_scale", "multiplier on variance-scaled initial weights"},
    {"loss.lambda_adv", "adversarial weight"},
    {"loss.eta_point", "Huber point-loss weight"},
    {"loss.gamma_vgg", "perceptual-loss weight"},
    {"softmax_input", "content reweighing input: calibrated or raw"},
    {"generator.num_residual_blocks", "residual blocks"},
    {"generator.channels", "feature channels"},
    {"generator.kernel_size", "conv kernel size"},
    {"generator.leaky_slope", "leaky ReLU slope"},
    {"generator.upscale_stages", "x2 sub-pixel stages"},
    {"generator.image_channels", "image channels"},
    {"discriminator.conv_channels", "8 conv block widths"},
    {"discriminator.image_channels", "image channels"},
    {"discriminator.input_size", "input patch side"},
    {"discriminator.dense_units", "hidden dense width"},
    {"discriminator.leaky_slope", "leaky ReLU slope"},
    {"discriminator.norm_first_block", "batch-norm on the first block"},
    {"discriminator.tap_position", "content tap: after_conv or after_norm"},
    {"extractor_path", "pretrained perceptual extractor archive"},
    {"extractor_layers", "layer plan of a random extractor (0 = pool)"},
    {"extractor_seed", "seed of a random extractor"},
    {"freeze_generator", "skip generator updates"},
    {"freeze_discriminator", "skip discriminator updates"},
};

}  // namespace

TrainConfig TrainConfig::tiny() {
  TrainConfig c;
  c.batch = 4;
  c.total_updates = 500;
  c.epoch_len = 100;
  c.checkpoint_interval = 250;
  c.hr_patch = 32;
  c.generator.num_residual_blocks = 2;
  c.generator.channels = 16;
  c.discriminator.conv_channels = {8, 8, 16, 16, 32, 32, 64, 64};
  c.discriminator.dense_units = 64;
  c.discriminator.input_size = 32;
  c.extractor_layers = {8, 8, 0, 16, 16};
  return c;
}

void TrainConfig::validate() const {
  if (batch <= 0) throw ConfigError("batch must be positive");
  if (total_updates < 0) throw ConfigError("total_updates must be non-negative");
  if (!(lr0 > 0.0)) throw ConfigError("lr0 must be positive");
  if (!(lr_decay > 0.0) || lr_decay > 1.0) throw ConfigError("lr_decay must be in (0, 1]");
  if (decay_epochs <= 0) throw ConfigError("decay_epochs must be positive");
  if (epoch_len < 0) throw ConfigError("epoch_len must be non-negative");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
    throw ConfigError("Adam betas must be in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be positive");
  if (checkpoint_interval < 0) throw ConfigError("checkpoint_interval must be non-negative");
  if (!(init_scale > 0.0)) throw ConfigError("init_scale must be positive");
  weights.validate();
  generator.validate();
  discriminator.validate();
  if (generator.scale() != scale) {
    throw ConfigError("generator upscale stages do not match scale " + std::to_string(scale));
  }
  if (hr_patch % scale != 0) throw ConfigError("hr_patch must be a multiple of scale");
  if (discriminator.input_size != hr_patch) {
    throw ConfigError("discriminator input size must equal hr_patch");
  }
  if (generator.image_channels != 3 || discriminator.image_channels != 3) {
    throw ConfigError("training expects RGB images");
  }
  if (extractor_path.empty() && extractor_layers.empty()) {
    const auto comps = loss::components(preset);
    if (comps.vgg) throw ConfigError("preset needs extractor_path or extractor_layers");
  }
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"preset", loss::to_string(c.preset)},
       {"batch", c.batch},
       {"total_updates", c.total_updates},
       {"lr0", c.lr0},
       {"lr_decay", c.lr_decay},
       {"decay_epochs", c.decay_epochs},
       {"epoch_len", c.epoch_len},
       {"beta1", c.beta1},
       {"beta2", c.beta2},
       {"adam_eps", c.adam_eps},
       {"seed", c.seed},
       {"checkpoint_interval", c.checkpoint_interval},
       {"hr_patch", c.hr_patch},
       {"scale", c.scale},
       {"augment", c.augment},
       {"zero_center", data::to_string(c.zero_center)},
       {"init_scale", c.init_scale},
       {"loss",
        {{"lambda_adv", c.weights.lambda_adv},
         {"eta_point", c.weights.eta_point},
         {"gamma_vgg", c.weights.gamma_vgg}}},
       {"softmax_input", loss::to_string(c.softmax_input)},
       {"generator", c.generator},
       {"discriminator", c.discriminator},
       {"extractor_path", c.extractor_path},
       {"extractor_layers", c.extractor_layers},
       {"extractor_seed", c.extractor_seed},
       {"freeze_generator", c.freeze_generator},
       {"freeze_discriminator", c.freeze_discriminator}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.preset = loss::parse_preset(j.at("preset").get<std::string>());
  j.at("batch").get_to(c.batch);
  j.at("total_updates").get_to(c.total_updates);
  j.at("lr0").get_to(c.lr0);
  j.at("lr_decay").get_to(c.lr_decay);
  j.at("decay_epochs").get_to(c.decay_epochs);
  j.at("epoch_len").get_to(c.epoch_len);
  j.at("beta1").get_to(c.beta1);
  j.at("beta2").get_to(c.beta2);
  j.at("adam_eps").get_to(c.adam_eps);
  j.at("seed").get_to(c.seed);
  j.at("checkpoint_interval").get_to(c.checkpoint_interval);
  j.at("hr_patch").get_to(c.hr_patch);
  j.at("scale").get_to(c.scale);
  j.at("augment").get_to(c.augment);
  c.zero_center = data::parse_zero_center(j.at("zero_center").get<std::string>());
  j.at("init_scale").get_to(c.init_scale);
  const auto& l = j.at("loss");
  l.at("lambda_adv").get_to(c.weights.lambda_adv);
  l.at("eta_point").get_to(c.weights.eta_point);
  l.at("gamma_vgg").get_to(c.weights.gamma_vgg);
  c.softmax_input = loss::parse_softmax_input(j.at("softmax_input").get<std::string>());
  j.at("generator").get_to(c.generator);
  j.at("discriminator").get_to(c.discriminator);
  j.at("extractor_path").get_to(c.extractor_path);
  j.at("extractor_layers").get_to(c.extractor_layers);
  j.at("extractor_seed").get_to(c.extractor_seed);
  j.at("freeze_generator").get_to(c.freeze_generator);
  j.at("freeze_discriminator").get_to(c.freeze_discriminator);
}

std::vector<std::string> config_differences(const TrainConfig& a, const TrainConfig& b) {
  const auto fa = nlohmann::json(a).flatten();
  const auto fb = nlohmann::json(b).flatten();
  std::vector<std::string> diff;
  for (const auto& [k, v] : fa.items()) {
    if (!fb.contains(k) || fb.at(k) != v) diff.push_back(k);
  }
  for (const auto& [k, v] : fb.items()) {
    if (!fa.contains(k)) diff.push_back(k);
  }
  std::sort(diff.begin(), diff.end());
  diff.erase(std::unique(diff.begin(), diff.end()), diff.end());
  for (auto& k : diff) {
    // "/generator/channels" or "/discriminator/conv_channels/3"
    std::string key = k.substr(1);
    std::replace(key.begin(), key.end(), '/', '.');
    k = key;
  }
  return diff;
}

void apply_setting(TrainConfig& c, const std::string& raw_key, const std::string& raw_value) {
  const std::string key = trim(raw_key);
  const std::string value = unquote(trim(raw_value));
  if (!kDescriptions.contains(key)) throw ConfigError("unknown configuration key: " + key);

  nlohmann::json j = c;
  std::string ptr = "/" + key;
  std::replace(ptr.begin(), ptr.end(), '.', '/');
  const nlohmann::json::json_pointer jp(ptr);
  const nlohmann::json& like = j.at(jp);

  if (key == "preset") {
    j[jp] = loss::to_string(loss::parse_preset(value));
  } else if (like.is_array()) {
    std::string list = value;
    if (!list.empty() && list.front() == '[' && list.back() == ']') {
      list = list.substr(1, list.size() - 2);
    }
    nlohmann::json arr = nlohmann::json::array();
    std::stringstream ss(list);
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      if (item.empty()) continue;
      arr.push_back(parse_scalar(nlohmann::json(0), key, item));
    }
    j[jp] = arr;
  } else {
    nlohmann::json typed = like;
    // Integers written where a float is expected ("lr0 = 1") are fine.
    if (like.is_number_float()) typed = 0.0;
    j[jp] = parse_scalar(typed, key, value);
  }
  if (key == "hr_patch") j["discriminator"]["input_size"] = j["hr_patch"];
  if (key == "scale") {
    const int s = j["scale"].get<int>();
    j["generator"]["upscale_stages"] = nn::GeneratorConfig::for_scale(s).upscale_stages;
  }
  try {
    c = j.get<TrainConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("invalid value for " + key + ": " + e.what());
  }
}

std::map<std::string, std::string> parse_key_values(const std::string& text) {
  std::map<std::string, std::string> out;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') quoted = !quoted;
      if (line[i] == '#' && !quoted) {
        line.resize(i);
        break;
      }
    }
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
    out[key] = trim(line.substr(eq + 1));
  }
  return out;
}

TrainConfig parse_config_file(const std::filesystem::path& path, TrainConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file: " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  const auto kv = parse_key_values(buf.str());
  // Order matters for the coupled keys: apply them first so explicit
  // discriminator/generator settings win.
  for (const char* first : {"scale", "hr_patch"}) {
    if (auto it = kv.find(first); it != kv.end()) apply_setting(base, it->first, it->second);
  }
  for (const auto& [k, v] : kv) {
    if (k == "scale" || k == "hr_patch") continue;
    apply_setting(base, k, v);
  }
  return base;
}

const std::vector<std::pair<std::string, std::string>>& config_keys() {
  static const std::vector<std::pair<std::string, std::string>> keys(kDescriptions.begin(),
                                                                     kDescriptions.end());
  return keys;
}

}  // namespace srfm::train
