#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace srfm {

/// Batch shape in NCHW order.
struct Shape {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  [[nodiscard]] std::size_t numel() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  [[nodiscard]] std::size_t sample_size() const {
    return static_cast<std::size_t>(c) * h * w;
  }
  [[nodiscard]] std::size_t plane_size() const {
    return static_cast<std::size_t>(h) * w;
  }
  [[nodiscard]] std::string str() const;

  friend bool operator==(const Shape&, const Shape&) = default;
};

/// Dense 4-D array of doubles stored contiguously in NCHW order.
///
/// Networks, losses and images all share this type; a dense vector is
/// represented as (N, F, 1, 1).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  [[nodiscard]] const Shape& shape() const { return shape_; }
  [[nodiscard]] int n() const { return shape_.n; }
  [[nodiscard]] int c() const { return shape_.c; }
  [[nodiscard]] int h() const { return shape_.h; }
  [[nodiscard]] int w() const { return shape_.w; }
  [[nodiscard]] std::size_t size() const { return data_.size(); }
  [[nodiscard]] bool empty() const { return data_.empty(); }

  [[nodiscard]] double* data() { return data_.data(); }
  [[nodiscard]] const double* data() const { return data_.data(); }
  [[nodiscard]] std::span<double> values() { return data_; }
  [[nodiscard]] std::span<const double> values() const { return data_; }

  [[nodiscard]] double& operator()(int n, int c, int y, int x) {
    return data_[index(n, c, y, x)];
  }
  [[nodiscard]] double operator()(int n, int c, int y, int x) const {
    return data_[index(n, c, y, x)];
  }
  [[nodiscard]] double& operator[](std::size_t i) { return data_[i]; }
  [[nodiscard]] double operator[](std::size_t i) const { return data_[i]; }

  /// Contiguous C*H*W slice of one batch entry.
  [[nodiscard]] std::span<double> sample(int n);
  [[nodiscard]] std::span<const double> sample(int n) const;
  /// Contiguous H*W slice of one channel of one batch entry.
  [[nodiscard]] std::span<double> plane(int n, int c);
  [[nodiscard]] std::span<const double> plane(int n, int c) const;

  void fill(double value);
  void set_zero() { fill(0.0); }
  /// Reinterpret the buffer with a new shape of equal element count.
  void reshape(Shape shape);

  Tensor& operator+=(const Tensor& other);
  Tensor& operator-=(const Tensor& other);
  Tensor& operator*=(double scale);
  /// this += scale * other
  void add_scaled(const Tensor& other, double scale);

  [[nodiscard]] bool all_finite() const;
  [[nodiscard]] double sum() const;
  [[nodiscard]] double mean() const;

 private:
  [[nodiscard]] std::size_t index(int n, int c, int y, int x) const {
    return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + y) *
               shape_.w +
           x;
  }

  Shape shape_{};
  // Vector-aligned so Eigen reductions take the same path for every
  // allocation; results are then bitwise reproducible.
  std::vector<double, Eigen::aligned_allocator<double>> data_;
};

Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator+(const Tensor& a, const Tensor& b);

/// Copy of batch entries [first, first + count).
Tensor slice_batch(const Tensor& t, int first, int count);
/// Stack along N; all inputs must share C, H and W.
Tensor concat_batch(std::span<const Tensor> parts);

/// Throws ShapeError when shapes differ; `what` names the operation.
void require_same_shape(const Tensor& a, const Tensor& b, const char* what);

}  // namespace srfm
