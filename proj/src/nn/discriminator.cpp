#include "srfm/nn/discriminator.hpp"

#include <cmath>

#include "srfm/errors.hpp"

namespace srfm::nn {
namespace {

Conv2dSpec block_spec(std::size_t block, int in, int out) {
  if (block % 2 == 0) return Conv2dSpec{in, out, 3, 1, 1};
  return Conv2dSpec{in, out, 4, 2, 1};
}

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace

std::string to_string(TapPosition p) {
  return p == TapPosition::AfterConv ? "after_conv" : "after_norm";
}

TapPosition parse_tap_position(const std::string& s) {
  if (s == "after_conv" || s == "conv") return TapPosition::AfterConv;
  if (s == "after_norm" || s == "norm") return TapPosition::AfterNorm;
  throw ConfigError("unknown tap position '" + s + "'");
}

void DiscriminatorConfig::validate() const {
  if (conv_channels.size() != kNumBlocks) {
    throw ConfigError("discriminator needs exactly 8 conv blocks");
  }
  for (std::size_t i = 0; i < conv_channels.size(); ++i) {
    if (conv_channels[i] <= 0) throw ConfigError("conv channels must be positive");
    if (i > 0 && conv_channels[i] < conv_channels[i - 1]) {
      throw ConfigError("discriminator channel sequence must be non-decreasing");
    }
  }
  if (image_channels <= 0 || dense_units <= 0) {
    throw ConfigError("discriminator sizes must be positive");
  }
  if (input_size % 16 != 0 || input_size < 16) {
    throw ConfigError("discriminator input size must be a positive multiple of 16");
  }
}

std::vector<int> DiscriminatorConfig::tap_sizes() const {
  std::vector<int> sizes;
  int s = input_size;
  for (std::size_t i = 0; i < conv_channels.size(); ++i) {
    if (i % 2 == 1) s = (s + 2 - 4) / 2 + 1;
    sizes.push_back(s);
  }
  return sizes;
}

void to_json(nlohmann::json& j, const DiscriminatorConfig& c) {
  j = {{"conv_channels", c.conv_channels},
       {"image_channels", c.image_channels},
       {"input_size", c.input_size},
       {"dense_units", c.dense_units},
       {"leaky_slope", c.leaky_slope},
       {"norm_first_block", c.norm_first_block},
       {"tap_position", to_string(c.tap_position)}};
}

void from_json(const nlohmann::json& j, DiscriminatorConfig& c) {
  j.at("conv_channels").get_to(c.conv_channels);
  j.at("image_channels").get_to(c.image_channels);
  j.at("input_size").get_to(c.input_size);
  j.at("dense_units").get_to(c.dense_units);
  j.at("leaky_slope").get_to(c.leaky_slope);
  j.at("norm_first_block").get_to(c.norm_first_block);
  c.tap_position = parse_tap_position(j.at("tap_position").get<std::string>());
}

Discriminator::Discriminator(DiscriminatorConfig config) : config_(std::move(config)) {
  config_.validate();
  int in = config_.image_channels;
  for (std::size_t b = 0; b < config_.conv_channels.size(); ++b) {
    const int out = config_.conv_channels[b];
    const std::string prefix = "discriminator.blocks." + std::to_string(b);
    convs_.emplace_back(prefix + ".conv", block_spec(b, in, out));
    norms_.emplace_back(prefix + ".norm", out);
    in = out;
  }
  const int side = config_.tap_sizes().back();
  dense1_ = Dense("discriminator.dense1", in * side * side, config_.dense_units);
  dense2_ = Dense("discriminator.dense2", config_.dense_units, 1);
}

bool Discriminator::has_norm(std::size_t block) const {
  return block > 0 || config_.norm_first_block;
}

DiscriminatorOutput Discriminator::forward(const Tensor& batch, bool training,
                                           DiscriminatorTrace* trace) const {
  if (batch.c() != config_.image_channels || batch.h() != config_.input_size ||
      batch.w() != config_.input_size) {
    throw InputError("discriminator expects (N, " +
                     std::to_string(config_.image_channels) + ", " +
                     std::to_string(config_.input_size) + ", " +
                     std::to_string(config_.input_size) + "), got " +
                     batch.shape().str());
  }
  const double slope = config_.leaky_slope;
  DiscriminatorOutput out;
  if (trace != nullptr) {
    *trace = DiscriminatorTrace{};
    trace->blocks.resize(convs_.size());
    trace->training = training;
  }
  Tensor x = batch;
  for (std::size_t b = 0; b < convs_.size(); ++b) {
    Tensor conv_out = convs_[b].forward(x);
    Tensor pre;
    BatchNormCache cache;
    if (has_norm(b)) {
      pre = norms_[b].forward(conv_out, training, &cache);
    } else {
      pre = conv_out;
    }
    out.taps.maps.push_back(config_.tap_position == TapPosition::AfterConv
                                ? conv_out
                                : pre);
    Tensor act = leaky_relu(pre, slope);
    if (trace != nullptr) {
      auto& rec = trace->blocks[b];
      rec.input = std::move(x);
      rec.conv_out = std::move(conv_out);
      rec.norm = std::move(cache);
      rec.has_norm = has_norm(b);
      rec.pre_activation = std::move(pre);
    }
    x = std::move(act);
  }
  x.reshape(Shape{x.n(), static_cast<int>(x.shape().sample_size()), 1, 1});
  Tensor h1 = dense1_.forward(x);
  Tensor a1 = leaky_relu(h1, slope);
  Tensor logits = dense2_.forward(a1);
  out.logits.assign(logits.values().begin(), logits.values().end());
  out.probabilities.reserve(out.logits.size());
  for (double z : out.logits) out.probabilities.push_back(sigmoid(z));
  if (trace != nullptr) {
    trace->flat = std::move(x);
    trace->dense1_out = std::move(h1);
    trace->dense1_act = std::move(a1);
  }
  return out;
}

Tensor Discriminator::backward(const DiscriminatorTrace& trace,
                               std::span<const double> grad_logits,
                               const std::vector<Tensor>* tap_grads,
                               bool param_grads) {
  const double slope = config_.leaky_slope;
  const int n = trace.flat.n();
  if (grad_logits.size() != static_cast<std::size_t>(n)) {
    throw InputError("discriminator backward: one logit gradient per sample");
  }
  if (tap_grads != nullptr && tap_grads->size() != convs_.size()) {
    throw InputError("discriminator backward: one tap gradient per block");
  }
  Tensor g_logit(Shape{n, 1, 1, 1},
                 std::vector<double>(grad_logits.begin(), grad_logits.end()));
  Tensor g = dense2_.backward(trace.dense1_act, g_logit, param_grads);
  g = leaky_relu_backward(trace.dense1_out, g, slope);
  g = dense1_.backward(trace.flat, g, param_grads);
  const Tensor& last = trace.blocks.back().pre_activation;
  g.reshape(last.shape());
  for (std::size_t b = convs_.size(); b-- > 0;) {
    const auto& rec = trace.blocks[b];
    g = leaky_relu_backward(rec.pre_activation, g, slope);
    const Tensor* tap_grad =
        (tap_grads != nullptr && !(*tap_grads)[b].empty()) ? &(*tap_grads)[b] : nullptr;
    if (tap_grad != nullptr && config_.tap_position == TapPosition::AfterNorm) {
      g += *tap_grad;
    }
    if (rec.has_norm) g = norms_[b].backward(rec.norm, g, param_grads);
    if (tap_grad != nullptr && config_.tap_position == TapPosition::AfterConv) {
      g += *tap_grad;
    }
    g = convs_[b].backward(rec.input, g, param_grads);
  }
  return g;
}

void Discriminator::commit_running_stats(const DiscriminatorTrace& trace) {
  if (!trace.training) return;
  for (std::size_t b = 0; b < convs_.size(); ++b) {
    const auto& rec = trace.blocks[b];
    if (!rec.has_norm) continue;
    norms_[b].update_running_stats(
        rec.norm, rec.conv_out.shape().plane_size() * rec.conv_out.n());
  }
}

std::vector<Parameter*> Discriminator::parameters() {
  std::vector<Parameter*> out;
  for (std::size_t b = 0; b < convs_.size(); ++b) {
    out.push_back(&convs_[b].weight());
    out.push_back(&convs_[b].bias());
    if (has_norm(b)) {
      out.push_back(&norms_[b].scale());
      out.push_back(&norms_[b].shift());
    }
  }
  out.push_back(&dense1_.weight());
  out.push_back(&dense1_.bias());
  out.push_back(&dense2_.weight());
  out.push_back(&dense2_.bias());
  return out;
}

std::vector<NamedTensor> Discriminator::state_tensors() {
  std::vector<NamedTensor> out;
  for (Parameter* p : parameters()) out.push_back({p->name, &p->value});
  for (std::size_t b = 0; b < norms_.size(); ++b) {
    if (!has_norm(b)) continue;
    out.push_back({norms_[b].running_mean().name, &norms_[b].running_mean().value});
    out.push_back({norms_[b].running_var().name, &norms_[b].running_var().value});
  }
  return out;
}

void Discriminator::zero_grad() {
  for (Parameter* p : parameters()) p->grad.set_zero();
}

}  // namespace srfm::nn
