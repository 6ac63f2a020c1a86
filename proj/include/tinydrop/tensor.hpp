// SPDX-License-Identifier: Apache-2.0
#pragma once

// Dense row-major tensor of doubles plus the handful of kernels the inference
// pipeline needs. Everything here is a pure function of its arguments.
//
// Kernels that sit on the model forward path also report their floating-point
// operation count to a thread-local counter (see FlopCounterScope). The
// per-kernel charges are:
//
//   matmul family          2 * m * k * n   (one multiply-add = 2 FLOPs)
//   add / add_row_bias     1 per output element
//   scale                  1 per element
//   softmax                5 per element   (max, subtract, exp, sum, divide)
//   layer_norm             8 per element   (mean, centre, square, sum,
//                                           normalize, scale, shift, rsqrt)
//   gelu                   8 per element
//
// The same constants are used by the analytic cost model in flops.hpp.

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace tinydrop {

using Shape = std::vector<std::size_t>;

std::string to_string(const Shape& shape);

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  /// Builds a rank-2 tensor from nested rows; all rows must have equal length.
  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor from_vector(std::vector<double> values);
  static Tensor identity(std::size_t n);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // Rank-2 element and row access.
  double& operator()(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }
  std::span<double> row(std::size_t r);
  std::span<const double> row(std::size_t r) const;

  // Rank-3 element access.
  double& operator()(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  double operator()(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  /// Same data, new shape. The element count must not change.
  Tensor reshaped(Shape shape) const;

  std::string shape_str() const { return to_string(shape_); }

  friend bool operator==(const Tensor& a, const Tensor& b) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

// ---------------------------------------------------------------------------
// FLOP instrumentation

namespace flop_counter {
void add(std::uint64_t flops) noexcept;
std::uint64_t value() noexcept;
}  // namespace flop_counter

/// Measures the FLOPs charged on the current thread while the scope is alive.
class FlopCounterScope {
 public:
  FlopCounterScope() noexcept : start_(flop_counter::value()) {}
  std::uint64_t elapsed() const noexcept { return flop_counter::value() - start_; }

 private:
  std::uint64_t start_;
};

// ---------------------------------------------------------------------------
// Kernels

/// c = a · b for a [m×k], b [k×n].
Tensor matmul(const Tensor& a, const Tensor& b);
/// c = a · bᵀ for a [m×k], b [n×k].
Tensor matmul_bt(const Tensor& a, const Tensor& b);
/// c = aᵀ · b for a [k×m], b [k×n].
Tensor matmul_at(const Tensor& a, const Tensor& b);

/// Elementwise a + b, shapes must match.
Tensor add(const Tensor& a, const Tensor& b);
void add_inplace(Tensor& a, const Tensor& b);
/// x[r, :] += bias for every row of a rank-2 x.
void add_row_bias(Tensor& x, const Tensor& bias);
Tensor scale(const Tensor& x, double factor);

/// Numerically stable softmax along `axis`.
Tensor softmax(const Tensor& x, std::size_t axis);

inline constexpr double kLayerNormEps = 1e-6;

/// Row-wise layer normalization of x [n×d] followed by the affine map
/// gamma * x̂ + beta. Variance is the population variance.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = kLayerNormEps);

// GELU, tanh form: 0.5·x·(1 + tanh(√(2/π)·(x + 0.044715·x³))).
inline constexpr double kGeluSqrt2OverPi = 0.79788456080286535588;
inline constexpr double kGeluCubic = 0.044715;
double gelu(double x) noexcept;
/// d/dx of the tanh-form GELU.
double gelu_derivative(double x) noexcept;
Tensor gelu(const Tensor& x);

/// Bilinear resampling of a rank-2 field with half-pixel centres
/// (align_corners = false); samples outside the source are clamped to the edge.
Tensor bilinear_resize(const Tensor& src, std::size_t out_h, std::size_t out_w);

/// (x − min) / (max − min). A flat input maps to 0.5 everywhere.
Tensor minmax_normalize(const Tensor& x);

/// Indices of the k largest scores in ascending index order. Ties prefer the
/// smaller index.
std::vector<std::size_t> arg_top_k(std::span<const double> scores, std::size_t k);

std::size_t argmax(std::span<const double> values);

}  // namespace tinydrop
