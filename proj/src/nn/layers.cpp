#include "srfm/nn/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Dense>

#include "srfm/errors.hpp"

namespace srfm::nn {
namespace {

using MatrixRM =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatrixRM>;
using ConstMapRM = Eigen::Map<const MatrixRM>;

// Unfold one sample (C, H, W) into columns of shape (C*k*k, Ho*Wo).
void im2col(const double* src, int channels, int height, int width,
            const Conv2dSpec& s, int out_h, int out_w, double* col) {
  const int k = s.kernel;
  const std::size_t cols = static_cast<std::size_t>(out_h) * out_w;
  for (int c = 0; c < channels; ++c) {
    const double* plane = src + static_cast<std::size_t>(c) * height * width;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        double* row = col + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * cols;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * s.stride - s.padding + ky;
          double* dst = row + static_cast<std::size_t>(oy) * out_w;
          if (iy < 0 || iy >= height) {
            std::fill_n(dst, out_w, 0.0);
            continue;
          }
          const double* line = plane + static_cast<std::size_t>(iy) * width;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * s.stride - s.padding + kx;
            dst[ox] = (ix >= 0 && ix < width) ? line[ix] : 0.0;
          }
        }
      }
    }
  }
}

// Scatter-add columns back into a (C, H, W) gradient buffer.
void col2im(const double* col, int channels, int height, int width,
            const Conv2dSpec& s, int out_h, int out_w, double* dst) {
  const int k = s.kernel;
  const std::size_t cols = static_cast<std::size_t>(out_h) * out_w;
  for (int c = 0; c < channels; ++c) {
    double* plane = dst + static_cast<std::size_t>(c) * height * width;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const double* row =
            col + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * cols;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * s.stride - s.padding + ky;
          if (iy < 0 || iy >= height) continue;
          double* line = plane + static_cast<std::size_t>(iy) * width;
          const double* src = row + static_cast<std::size_t>(oy) * out_w;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * s.stride - s.padding + kx;
            if (ix >= 0 && ix < width) line[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(const std::string& name, Conv2dSpec spec)
    : spec_(spec),
      weight_(name + ".weight", ParamKind::Weight,
              Shape{spec.out_channels, spec.in_channels, spec.kernel, spec.kernel},
              spec.in_channels * spec.kernel * spec.kernel),
      bias_(name + ".bias", ParamKind::Bias, Shape{1, spec.out_channels, 1, 1}) {
  if (spec.in_channels <= 0 || spec.out_channels <= 0 || spec.kernel <= 0 ||
      spec.stride <= 0 || spec.padding < 0) {
    throw ConfigError("invalid convolution spec for " + name);
  }
}

Shape Conv2d::output_shape(const Shape& in) const {
  const int oh = (in.h + 2 * spec_.padding - spec_.kernel) / spec_.stride + 1;
  const int ow = (in.w + 2 * spec_.padding - spec_.kernel) / spec_.stride + 1;
  return Shape{in.n, spec_.out_channels, oh, ow};
}

Tensor Conv2d::forward(const Tensor& x) const {
  if (x.c() != spec_.in_channels) {
    throw InputError(weight_.name + ": expected " +
                     std::to_string(spec_.in_channels) + " input channels, got " +
                     x.shape().str());
  }
  const Shape out_shape = output_shape(x.shape());
  if (out_shape.h <= 0 || out_shape.w <= 0) {
    throw InputError(weight_.name + ": input too small " + x.shape().str());
  }
  Tensor out(out_shape);
  const int rows = spec_.in_channels * spec_.kernel * spec_.kernel;
  const int cols = out_shape.h * out_shape.w;
  MatrixRM col(rows, cols);
  ConstMapRM w(weight_.value.data(), spec_.out_channels, rows);
  const Eigen::Map<const Eigen::VectorXd> b(bias_.value.data(), spec_.out_channels);
  for (int n = 0; n < x.n(); ++n) {
    im2col(x.sample(n).data(), x.c(), x.h(), x.w(), spec_, out_shape.h,
           out_shape.w, col.data());
    MapRM y(out.sample(n).data(), spec_.out_channels, cols);
    y.noalias() = w * col;
    y.colwise() += b;
  }
  return out;
}

Tensor Conv2d::backward(const Tensor& x, const Tensor& grad_out,
                        bool param_grads) {
  const Shape out_shape = output_shape(x.shape());
  if (grad_out.shape() != out_shape) {
    throw ShapeError(weight_.name + ": gradient shape " + grad_out.shape().str() +
                     " does not match output " + out_shape.str());
  }
  Tensor grad_in(x.shape());
  const int rows = spec_.in_channels * spec_.kernel * spec_.kernel;
  const int cols = out_shape.h * out_shape.w;
  MatrixRM col(rows, cols);
  MatrixRM dcol(rows, cols);
  ConstMapRM w(weight_.value.data(), spec_.out_channels, rows);
  MapRM dw(weight_.grad.data(), spec_.out_channels, rows);
  Eigen::Map<Eigen::VectorXd> db(bias_.grad.data(), spec_.out_channels);
  for (int n = 0; n < x.n(); ++n) {
    ConstMapRM g(grad_out.sample(n).data(), spec_.out_channels, cols);
    if (param_grads) {
      im2col(x.sample(n).data(), x.c(), x.h(), x.w(), spec_, out_shape.h,
             out_shape.w, col.data());
      dw.noalias() += g * col.transpose();
      db += g.rowwise().sum();
    }
    dcol.noalias() = w.transpose() * g;
    col2im(dcol.data(), x.c(), x.h(), x.w(), spec_, out_shape.h, out_shape.w,
           grad_in.sample(n).data());
  }
  return grad_in;
}

// ----------------------------------------------------------------- Dense

Dense::Dense(const std::string& name, int in_features, int out_features)
    : in_(in_features),
      out_(out_features),
      weight_(name + ".weight", ParamKind::Weight,
              Shape{out_features, in_features, 1, 1}, in_features),
      bias_(name + ".bias", ParamKind::Bias, Shape{1, out_features, 1, 1}) {
  if (in_features <= 0 || out_features <= 0) {
    throw ConfigError("invalid dense layer size for " + name);
  }
}

Tensor Dense::forward(const Tensor& x) const {
  if (x.shape().sample_size() != static_cast<std::size_t>(in_)) {
    throw InputError(weight_.name + ": expected " + std::to_string(in_) +
                     " features per sample, got " + x.shape().str());
  }
  Tensor out(Shape{x.n(), out_, 1, 1});
  ConstMapRM xin(x.data(), x.n(), in_);
  ConstMapRM w(weight_.value.data(), out_, in_);
  const Eigen::Map<const Eigen::RowVectorXd> b(bias_.value.data(), out_);
  MapRM y(out.data(), x.n(), out_);
  y.noalias() = xin * w.transpose();
  y.rowwise() += b;
  return out;
}

Tensor Dense::backward(const Tensor& x, const Tensor& grad_out,
                       bool param_grads) {
  Tensor grad_in(x.shape());
  ConstMapRM xin(x.data(), x.n(), in_);
  ConstMapRM g(grad_out.data(), x.n(), out_);
  ConstMapRM w(weight_.value.data(), out_, in_);
  if (param_grads) {
    MapRM dw(weight_.grad.data(), out_, in_);
    dw.noalias() += g.transpose() * xin;
    Eigen::Map<Eigen::RowVectorXd> db(bias_.grad.data(), out_);
    db += g.colwise().sum();
  }
  MapRM dx(grad_in.data(), x.n(), in_);
  dx.noalias() = g * w;
  return grad_in;
}

// ----------------------------------------------------------- BatchNorm2d

BatchNorm2d::BatchNorm2d(const std::string& name, int channels)
    : channels_(channels),
      gamma_(name + ".weight", ParamKind::NormScale, Shape{1, channels, 1, 1}),
      beta_(name + ".bias", ParamKind::NormShift, Shape{1, channels, 1, 1}),
      running_mean_{name + ".running_mean", Tensor(Shape{1, channels, 1, 1})},
      running_var_{name + ".running_var", Tensor(Shape{1, channels, 1, 1}, 1.0)} {
  gamma_.value.fill(1.0);
}

Tensor BatchNorm2d::forward(const Tensor& x, bool training,
                            BatchNormCache* cache) const {
  if (x.c() != channels_) {
    throw InputError(gamma_.name + ": channel mismatch " + x.shape().str());
  }
  const std::size_t plane = x.shape().plane_size();
  const double count = static_cast<double>(plane) * x.n();
  std::vector<double> mean(channels_), var(channels_), inv_std(channels_);
  for (int c = 0; c < channels_; ++c) {
    if (training) {
      double s = 0.0;
      for (int n = 0; n < x.n(); ++n) {
        for (double v : x.plane(n, c)) s += v;
      }
      const double mu = s / count;
      double ss = 0.0;
      for (int n = 0; n < x.n(); ++n) {
        for (double v : x.plane(n, c)) ss += (v - mu) * (v - mu);
      }
      mean[c] = mu;
      var[c] = ss / count;
    } else {
      mean[c] = running_mean_.value[c];
      var[c] = running_var_.value[c];
    }
    inv_std[c] = 1.0 / std::sqrt(var[c] + kEpsilon);
  }
  Tensor out(x.shape());
  Tensor normalized(x.shape());
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < channels_; ++c) {
      auto src = x.plane(n, c);
      auto xh = normalized.plane(n, c);
      auto dst = out.plane(n, c);
      for (std::size_t i = 0; i < plane; ++i) {
        xh[i] = (src[i] - mean[c]) * inv_std[c];
        dst[i] = gamma_.value[c] * xh[i] + beta_.value[c];
      }
    }
  }
  if (cache != nullptr) {
    cache->normalized = std::move(normalized);
    cache->mean = std::move(mean);
    cache->variance = std::move(var);
    cache->inv_std = std::move(inv_std);
    cache->training = training;
  }
  return out;
}

Tensor BatchNorm2d::backward(const BatchNormCache& cache, const Tensor& grad_out,
                             bool param_grads) {
  const Tensor& xh = cache.normalized;
  Tensor grad_in(xh.shape());
  const std::size_t plane = xh.shape().plane_size();
  const double count = static_cast<double>(plane) * xh.n();
  for (int c = 0; c < channels_; ++c) {
    double sum_g = 0.0;
    double sum_gx = 0.0;
    for (int n = 0; n < xh.n(); ++n) {
      auto g = grad_out.plane(n, c);
      auto h = xh.plane(n, c);
      for (std::size_t i = 0; i < plane; ++i) {
        sum_g += g[i];
        sum_gx += g[i] * h[i];
      }
    }
    if (param_grads) {
      gamma_.grad[c] += sum_gx;
      beta_.grad[c] += sum_g;
    }
    const double scale = gamma_.value[c] * cache.inv_std[c];
    for (int n = 0; n < xh.n(); ++n) {
      auto g = grad_out.plane(n, c);
      auto h = xh.plane(n, c);
      auto dst = grad_in.plane(n, c);
      if (cache.training) {
        for (std::size_t i = 0; i < plane; ++i) {
          dst[i] = scale * (g[i] - sum_g / count - h[i] * sum_gx / count);
        }
      } else {
        for (std::size_t i = 0; i < plane; ++i) dst[i] = scale * g[i];
      }
    }
  }
  return grad_in;
}

void BatchNorm2d::update_running_stats(const BatchNormCache& cache,
                                       std::size_t count) {
  const double unbias =
      count > 1 ? static_cast<double>(count) / static_cast<double>(count - 1) : 1.0;
  for (int c = 0; c < channels_; ++c) {
    running_mean_.value[c] =
        (1.0 - kMomentum) * running_mean_.value[c] + kMomentum * cache.mean[c];
    running_var_.value[c] = (1.0 - kMomentum) * running_var_.value[c] +
                            kMomentum * cache.variance[c] * unbias;
  }
}

// ----------------------------------------------------------- activations

Tensor leaky_relu(const Tensor& x, double slope) {
  Tensor out(x.shape());
  const double* src = x.data();
  double* dst = out.data();
  for (std::size_t i = 0; i < x.size(); ++i) {
    dst[i] = src[i] > 0.0 ? src[i] : slope * src[i];
  }
  return out;
}

Tensor leaky_relu_backward(const Tensor& pre, const Tensor& grad_out,
                           double slope) {
  require_same_shape(pre, grad_out, "leaky_relu_backward");
  Tensor out(pre.shape());
  for (std::size_t i = 0; i < pre.size(); ++i) {
    out[i] = pre[i] > 0.0 ? grad_out[i] : slope * grad_out[i];
  }
  return out;
}

// --------------------------------------------------------- pixel shuffle

Tensor pixel_shuffle(const Tensor& x, int r) {
  if (r <= 0) throw ShapeError("pixel_shuffle: factor must be positive");
  const int rr = r * r;
  if (x.c() % rr != 0) {
    throw ShapeError("pixel_shuffle: " + std::to_string(x.c()) +
                     " channels not divisible by r^2 = " + std::to_string(rr));
  }
  const int oc = x.c() / rr;
  Tensor out(Shape{x.n(), oc, x.h() * r, x.w() * r});
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < oc; ++c) {
      for (int dy = 0; dy < r; ++dy) {
        for (int dx = 0; dx < r; ++dx) {
          const int ic = c * rr + dy * r + dx;
          for (int y = 0; y < x.h(); ++y) {
            for (int xx = 0; xx < x.w(); ++xx) {
              out(n, c, r * y + dy, r * xx + dx) = x(n, ic, y, xx);
            }
          }
        }
      }
    }
  }
  return out;
}

Tensor pixel_unshuffle(const Tensor& x, int r) {
  if (r <= 0) throw ShapeError("pixel_unshuffle: factor must be positive");
  if (x.h() % r != 0 || x.w() % r != 0) {
    throw ShapeError("pixel_unshuffle: spatial size " + x.shape().str() +
                     " not divisible by " + std::to_string(r));
  }
  const int rr = r * r;
  Tensor out(Shape{x.n(), x.c() * rr, x.h() / r, x.w() / r});
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < x.c(); ++c) {
      for (int dy = 0; dy < r; ++dy) {
        for (int dx = 0; dx < r; ++dx) {
          const int oc = c * rr + dy * r + dx;
          for (int y = 0; y < out.h(); ++y) {
            for (int xx = 0; xx < out.w(); ++xx) {
              out(n, oc, y, xx) = x(n, c, r * y + dy, r * xx + dx);
            }
          }
        }
      }
    }
  }
  return out;
}

// ------------------------------------------------------------- max pool

Tensor max_pool2(const Tensor& x, std::vector<std::size_t>* argmax) {
  const int oh = x.h() / 2;
  const int ow = x.w() / 2;
  if (oh == 0 || ow == 0) throw InputError("max_pool2: input too small");
  Tensor out(Shape{x.n(), x.c(), oh, ow});
  if (argmax != nullptr) argmax->assign(out.size(), 0);
  std::size_t o = 0;
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < x.c(); ++c) {
      const std::size_t base =
          (static_cast<std::size_t>(n) * x.c() + c) * x.shape().plane_size();
      for (int y = 0; y < oh; ++y) {
        for (int xx = 0; xx < ow; ++xx, ++o) {
          double best = -std::numeric_limits<double>::infinity();
          std::size_t best_idx = 0;
          for (int dy = 0; dy < 2; ++dy) {
            for (int dx = 0; dx < 2; ++dx) {
              const std::size_t idx = base +
                                      static_cast<std::size_t>(2 * y + dy) * x.w() +
                                      (2 * xx + dx);
              if (x[idx] > best) {
                best = x[idx];
                best_idx = idx;
              }
            }
          }
          out[o] = best;
          if (argmax != nullptr) (*argmax)[o] = best_idx;
        }
      }
    }
  }
  return out;
}

Tensor max_pool2_backward(const Shape& in_shape,
                          const std::vector<std::size_t>& argmax,
                          const Tensor& grad_out) {
  Tensor grad_in(in_shape);
  for (std::size_t o = 0; o < grad_out.size(); ++o) {
    grad_in[argmax[o]] += grad_out[o];
  }
  return grad_in;
}

}  // namespace srfm::nn
