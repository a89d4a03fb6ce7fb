#include "srfm/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "srfm/errors.hpp"

namespace srfm {

std::string Shape::str() const {
  return "(" + std::to_string(n) + "," + std::to_string(c) + "," +
         std::to_string(h) + "," + std::to_string(w) + ")";
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(shape), data_(shape.numel(), fill) {
  if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0) {
    throw ShapeError("negative tensor dimension " + shape.str());
  }
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(shape), data_(values.begin(), values.end()) {
  if (data_.size() != shape.numel()) {
    throw ShapeError("value count " + std::to_string(data_.size()) +
                     " does not match shape " + shape.str());
  }
}

std::span<double> Tensor::sample(int n) {
  return std::span<double>(data_).subspan(n * shape_.sample_size(),
                                          shape_.sample_size());
}

std::span<const double> Tensor::sample(int n) const {
  return std::span<const double>(data_).subspan(n * shape_.sample_size(),
                                                shape_.sample_size());
}

std::span<double> Tensor::plane(int n, int c) {
  return std::span<double>(data_).subspan(index(n, c, 0, 0),
                                          shape_.plane_size());
}

std::span<const double> Tensor::plane(int n, int c) const {
  return std::span<const double>(data_).subspan(index(n, c, 0, 0),
                                                shape_.plane_size());
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

void Tensor::reshape(Shape shape) {
  if (shape.numel() != data_.size()) {
    throw ShapeError("cannot reshape " + shape_.str() + " to " + shape.str());
  }
  shape_ = shape;
}

Tensor& Tensor::operator+=(const Tensor& other) {
  require_same_shape(*this, other, "tensor +=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Tensor& Tensor::operator-=(const Tensor& other) {
  require_same_shape(*this, other, "tensor -=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
  return *this;
}

Tensor& Tensor::operator*=(double scale) {
  for (double& v : data_) v *= scale;
  return *this;
}

void Tensor::add_scaled(const Tensor& other, double scale) {
  require_same_shape(*this, other, "tensor add_scaled");
  for (std::size_t i = 0; i < data_.size(); ++i) {
    data_[i] += scale * other.data_[i];
  }
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(),
                     [](double v) { return std::isfinite(v); });
}

double Tensor::sum() const {
  return std::accumulate(data_.begin(), data_.end(), 0.0);
}

double Tensor::mean() const {
  return data_.empty() ? 0.0 : sum() / static_cast<double>(data_.size());
}

Tensor operator-(const Tensor& a, const Tensor& b) {
  Tensor out = a;
  out -= b;
  return out;
}

Tensor operator+(const Tensor& a, const Tensor& b) {
  Tensor out = a;
  out += b;
  return out;
}

Tensor slice_batch(const Tensor& t, int first, int count) {
  if (first < 0 || count < 0 || first + count > t.n()) {
    throw ShapeError("batch slice out of range for " + t.shape().str());
  }
  Shape s = t.shape();
  s.n = count;
  Tensor out(s);
  const std::size_t stride = s.sample_size();
  std::copy_n(t.data() + first * stride, count * stride, out.data());
  return out;
}

Tensor concat_batch(std::span<const Tensor> parts) {
  if (parts.empty()) return {};
  Shape s = parts.front().shape();
  s.n = 0;
  for (const Tensor& p : parts) {
    if (p.c() != s.c || p.h() != s.h || p.w() != s.w) {
      throw ShapeError("concat_batch: mismatched " + p.shape().str());
    }
    s.n += p.n();
  }
  Tensor out(s);
  double* dst = out.data();
  for (const Tensor& p : parts) {
    dst = std::copy_n(p.data(), p.size(), dst);
  }
  return out;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape mismatch " +
                     a.shape().str() + " vs " + b.shape().str());
  }
}

}  // namespace srfm
