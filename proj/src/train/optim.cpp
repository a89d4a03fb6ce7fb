#include "srfm/train/optim.hpp"

#include <cmath>

#include "srfm/errors.hpp"

namespace srfm::train {

void init_msra(const std::vector<nn::Parameter*>& params, std::mt19937_64& rng,
               double post_scale) {
  for (nn::Parameter* p : params) {
    switch (p->kind) {
      case nn::ParamKind::Weight: {
        if (p->fan_in <= 0) throw ConfigError("parameter without fan-in: " + p->name);
        std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / p->fan_in) * post_scale);
        for (double& v : p->value.values()) v = dist(rng);
        break;
      }
      case nn::ParamKind::Bias:
      case nn::ParamKind::NormShift:
        p->value.fill(0.0);
        break;
      case nn::ParamKind::NormScale:
        p->value.fill(1.0);
        break;
    }
  }
}

double lr_at(long update, long epoch_len, double lr0, double decay, int decay_epochs) {
  if (epoch_len <= 0) throw ConfigError("epoch length must be positive");
  if (decay_epochs <= 0) throw ConfigError("decay interval must be positive");
  const long epoch = update / epoch_len;
  return lr0 * std::pow(decay, static_cast<double>(epoch / decay_epochs));
}

Adam::Adam(std::vector<nn::Parameter*> params, AdamOptions options)
    : params_(std::move(params)), options_(options) {
  for (nn::Parameter* p : params_) {
    m_.emplace_back(p->value.shape());
    v_.emplace_back(p->value.shape());
  }
}

void Adam::step(double lr) {
  ++t_;
  const double b1 = options_.beta1;
  const double b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    double* w = params_[i]->value.data();
    const double* g = params_[i]->grad.data();
    double* m = m_[i].data();
    double* v = v_[i].data();
    const std::size_t n = params_[i]->value.size();
    for (std::size_t k = 0; k < n; ++k) {
      m[k] = b1 * m[k] + (1.0 - b1) * g[k];
      v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
      w[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + options_.eps);
    }
  }
}

void Adam::save(Archive& archive, const std::string& prefix) const {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    archive.arrays[prefix + ".m." + params_[i]->name] = m_[i];
    archive.arrays[prefix + ".v." + params_[i]->name] = v_[i];
  }
  archive.manifest["optimizers"][prefix] = {{"steps", t_},
                                            {"beta1", options_.beta1},
                                            {"beta2", options_.beta2},
                                            {"eps", options_.eps}};
}

void Adam::load(const Archive& archive, const std::string& prefix) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const Tensor& m = archive.array(prefix + ".m." + params_[i]->name);
    const Tensor& v = archive.array(prefix + ".v." + params_[i]->name);
    if (m.shape() != m_[i].shape() || v.shape() != v_[i].shape()) {
      throw IoError("optimizer state shape mismatch for " + params_[i]->name);
    }
    m_[i] = m;
    v_[i] = v;
  }
  t_ = archive.manifest.at("optimizers").at(prefix).at("steps").get<long>();
}

}  // namespace srfm::train
