#include "srfm/nn/generator.hpp"

#include "srfm/errors.hpp"

namespace srfm::nn {

void GeneratorConfig::validate() const {
  if (num_residual_blocks <= 0) {
    throw ConfigError("generator needs at least one residual block");
  }
  if (channels <= 0 || image_channels <= 0) {
    throw ConfigError("generator channel counts must be positive");
  }
  if (kernel_size <= 0 || kernel_size % 2 == 0) {
    throw ConfigError("generator kernel size must be odd and positive");
  }
  if (upscale_stages < 0 || upscale_stages > 4) {
    throw ConfigError("generator upscale stages must be in [0, 4]");
  }
  if (!(leaky_slope >= 0.0 && leaky_slope < 1.0)) {
    throw ConfigError("generator leaky slope must be in [0, 1)");
  }
}

GeneratorConfig GeneratorConfig::for_scale(int factor) {
  if (factor <= 0 || (factor & (factor - 1)) != 0) {
    throw ConfigError("upscale factor " + std::to_string(factor) +
                      " is not a power of two");
  }
  GeneratorConfig c;
  c.upscale_stages = 0;
  while ((1 << c.upscale_stages) < factor) ++c.upscale_stages;
  c.validate();
  return c;
}

void to_json(nlohmann::json& j, const GeneratorConfig& c) {
  j = {{"num_residual_blocks", c.num_residual_blocks},
       {"channels", c.channels},
       {"kernel_size", c.kernel_size},
       {"leaky_slope", c.leaky_slope},
       {"upscale_stages", c.upscale_stages},
       {"image_channels", c.image_channels}};
}

void from_json(const nlohmann::json& j, GeneratorConfig& c) {
  j.at("num_residual_blocks").get_to(c.num_residual_blocks);
  j.at("channels").get_to(c.channels);
  j.at("kernel_size").get_to(c.kernel_size);
  j.at("leaky_slope").get_to(c.leaky_slope);
  j.at("upscale_stages").get_to(c.upscale_stages);
  j.at("image_channels").get_to(c.image_channels);
}

Generator::Generator(GeneratorConfig config) : config_(config) {
  config_.validate();
  const int ch = config_.channels;
  const int k = config_.kernel_size;
  const int pad = k / 2;
  head_ = Conv2d("generator.head", {config_.image_channels, ch, k, 1, pad});
  for (int b = 0; b < config_.num_residual_blocks; ++b) {
    const std::string prefix = "generator.blocks." + std::to_string(b);
    block_convs_.emplace_back(prefix + ".conv1", Conv2dSpec{ch, ch, k, 1, pad});
    block_convs_.emplace_back(prefix + ".conv2", Conv2dSpec{ch, ch, k, 1, pad});
  }
  body_ = Conv2d("generator.body", {ch, ch, k, 1, pad});
  for (int s = 0; s < config_.upscale_stages; ++s) {
    up_convs_.emplace_back("generator.upsample." + std::to_string(s),
                           Conv2dSpec{ch, 4 * ch, k, 1, pad});
  }
  tail_ = Conv2d("generator.tail", {ch, config_.image_channels, k, 1, pad});
}

Conv2d& Generator::block_conv(int block, int which) {
  return block_convs_.at(static_cast<std::size_t>(2 * block + which));
}

void Generator::check_input(const Tensor& lr) const {
  if (lr.n() < 1 || lr.h() < 1 || lr.w() < 1) {
    throw InputError("generator input must be non-empty, got " + lr.shape().str());
  }
  if (lr.c() != config_.image_channels) {
    throw InputError("generator expects " + std::to_string(config_.image_channels) +
                     " channels, got " + lr.shape().str());
  }
}

Tensor Generator::forward(const Tensor& lr) const {
  GeneratorTrace scratch;
  return forward(lr, scratch);
}

Tensor Generator::forward(const Tensor& lr, GeneratorTrace& trace) const {
  check_input(lr);
  const double slope = config_.leaky_slope;
  trace = GeneratorTrace{};
  trace.input = lr;
  trace.head_out = head_.forward(lr);
  Tensor skip = leaky_relu(trace.head_out, slope);
  Tensor x = skip;
  trace.blocks.resize(config_.num_residual_blocks);
  for (int b = 0; b < config_.num_residual_blocks; ++b) {
    auto& rec = trace.blocks[b];
    rec.input = x;
    rec.conv1_out = block_convs_[2 * b].forward(x);
    Tensor y = block_convs_[2 * b + 1].forward(leaky_relu(rec.conv1_out, slope));
    x += y;
  }
  trace.body_in = x;
  x = body_.forward(x);
  x += skip;
  trace.ups.resize(up_convs_.size());
  for (std::size_t s = 0; s < up_convs_.size(); ++s) {
    trace.ups[s].input = x;
    trace.ups[s].shuffled = pixel_shuffle(up_convs_[s].forward(x), 2);
    x = leaky_relu(trace.ups[s].shuffled, slope);
  }
  trace.tail_in = x;
  return tail_.forward(x);
}

Tensor Generator::backward(const GeneratorTrace& trace, const Tensor& grad_out) {
  const double slope = config_.leaky_slope;
  Tensor g = tail_.backward(trace.tail_in, grad_out, true);
  for (std::size_t s = up_convs_.size(); s-- > 0;) {
    g = leaky_relu_backward(trace.ups[s].shuffled, g, slope);
    g = pixel_unshuffle(g, 2);
    g = up_convs_[s].backward(trace.ups[s].input, g, true);
  }
  // g is now d/d(body(x) + skip)
  Tensor grad_skip = g;
  g = body_.backward(trace.body_in, g, true);
  for (int b = config_.num_residual_blocks; b-- > 0;) {
    const auto& rec = trace.blocks[b];
    Tensor gy = block_convs_[2 * b + 1].backward(
        leaky_relu(rec.conv1_out, slope), g, true);
    gy = leaky_relu_backward(rec.conv1_out, gy, slope);
    g += block_convs_[2 * b].backward(rec.input, gy, true);
  }
  g += grad_skip;
  g = leaky_relu_backward(trace.head_out, g, slope);
  return head_.backward(trace.input, g, true);
}

std::vector<Parameter*> Generator::parameters() {
  std::vector<Parameter*> out{&head_.weight(), &head_.bias()};
  for (auto& c : block_convs_) {
    out.push_back(&c.weight());
    out.push_back(&c.bias());
  }
  out.push_back(&body_.weight());
  out.push_back(&body_.bias());
  for (auto& c : up_convs_) {
    out.push_back(&c.weight());
    out.push_back(&c.bias());
  }
  out.push_back(&tail_.weight());
  out.push_back(&tail_.bias());
  return out;
}

std::vector<NamedTensor> Generator::state_tensors() {
  std::vector<NamedTensor> out;
  for (Parameter* p : parameters()) out.push_back({p->name, &p->value});
  return out;
}

std::size_t Generator::parameter_count() const {
  std::size_t total = head_.weight().value.size() + head_.bias().value.size();
  for (const auto& c : block_convs_) {
    total += c.weight().value.size() + c.bias().value.size();
  }
  total += body_.weight().value.size() + body_.bias().value.size();
  for (const auto& c : up_convs_) {
    total += c.weight().value.size() + c.bias().value.size();
  }
  total += tail_.weight().value.size() + tail_.bias().value.size();
  return total;
}

void Generator::zero_grad() {
  for (Parameter* p : parameters()) p->grad.set_zero();
}

}  // namespace srfm::nn
