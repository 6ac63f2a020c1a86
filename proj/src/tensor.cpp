// SPDX-License-Identifier: Apache-2.0
#include "tinydrop/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "tinydrop/error.hpp"

namespace tinydrop {

namespace {

std::size_t shape_product(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a rank-2 tensor, got " + t.shape_str());
  }
}

thread_local std::uint64_t tl_flops = 0;

}  // namespace

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  for (auto d : shape_) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + to_string(shape_));
  }
  data_.assign(shape_product(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  for (auto d : shape_) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + to_string(shape_));
  }
  if (shape_product(shape_) != data_.size()) {
    throw DimensionError("shape " + to_string(shape_) + " does not match " +
                         std::to_string(data_.size()) + " values");
  }
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  if (rows.size() == 0) throw DimensionError("from_rows: no rows");
  const std::size_t cols = rows.begin()->size();
  std::vector<double> data;
  data.reserve(rows.size() * cols);
  for (const auto& r : rows) {
    if (r.size() != cols) throw DimensionError("from_rows: ragged rows");
    data.insert(data.end(), r.begin(), r.end());
  }
  return Tensor({rows.size(), cols}, std::move(data));
}

Tensor Tensor::from_vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor({n}, std::move(values));
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
  return t;
}

std::span<double> Tensor::row(std::size_t r) {
  return std::span<double>(data_).subspan(r * shape_[1], shape_[1]);
}

std::span<const double> Tensor::row(std::size_t r) const {
  return std::span<const double>(data_).subspan(r * shape_[1], shape_[1]);
}

Tensor Tensor::reshaped(Shape shape) const {
  return Tensor(std::move(shape), data_);
}

namespace flop_counter {
void add(std::uint64_t flops) noexcept { tl_flops += flops; }
std::uint64_t value() noexcept { return tl_flops; }
}  // namespace flop_counter

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions disagree for " + a.shape_str() + " x " + b.shape_str());
  }
  Tensor c({m, n});
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* pc = c.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = pc + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = pa[i * k + p];
      const double* brow = pb + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  flop_counter::add(2ull * m * k * n);
  return c;
}

Tensor matmul_bt(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul_bt");
  require_rank2(b, "matmul_bt");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k) {
    throw DimensionError("matmul_bt: inner dimensions disagree for " + a.shape_str() + " x " +
                         b.shape_str() + "^T");
  }
  Tensor c({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    const auto arow = a.row(i);
    for (std::size_t j = 0; j < n; ++j) {
      const auto brow = b.row(j);
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      c(i, j) = acc;
    }
  }
  flop_counter::add(2ull * m * k * n);
  return c;
}

Tensor matmul_at(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul_at");
  require_rank2(b, "matmul_at");
  const std::size_t k = a.dim(0), m = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul_at: inner dimensions disagree for " + a.shape_str() + "^T x " +
                         b.shape_str());
  }
  Tensor c({m, n});
  double* pc = c.data().data();
  for (std::size_t p = 0; p < k; ++p) {
    const auto arow = a.row(p);
    const auto brow = b.row(p);
    for (std::size_t i = 0; i < m; ++i) {
      const double av = arow[i];
      double* crow = pc + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  flop_counter::add(2ull * m * k * n);
  return c;
}

Tensor add(const Tensor& a, const Tensor& b) {
  Tensor out = a;
  add_inplace(out, b);
  return out;
}

void add_inplace(Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("add: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  }
  auto da = a.data();
  auto db = b.data();
  for (std::size_t i = 0; i < da.size(); ++i) da[i] += db[i];
  flop_counter::add(da.size());
}

void add_row_bias(Tensor& x, const Tensor& bias) {
  require_rank2(x, "add_row_bias");
  if (bias.size() != x.dim(1)) {
    throw DimensionError("add_row_bias: bias " + bias.shape_str() + " does not fit " + x.shape_str());
  }
  for (std::size_t r = 0; r < x.dim(0); ++r) {
    auto row = x.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += bias[c];
  }
  flop_counter::add(x.size());
}

Tensor scale(const Tensor& x, double factor) {
  Tensor out = x;
  for (auto& v : out.data()) v *= factor;
  flop_counter::add(x.size());
  return out;
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) {
    throw ArgumentError("softmax: axis " + std::to_string(axis) + " invalid for " + x.shape_str());
  }
  const auto& shape = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  const std::size_t len = shape[axis];

  Tensor out(shape);
  const auto in = x.data();
  auto o = out.data();
  for (std::size_t a = 0; a < outer; ++a) {
    for (std::size_t b = 0; b < inner; ++b) {
      const std::size_t base = a * len * inner + b;
      double mx = in[base];
      for (std::size_t i = 1; i < len; ++i) mx = std::max(mx, in[base + i * inner]);
      double sum = 0.0;
      for (std::size_t i = 0; i < len; ++i) {
        const double e = std::exp(in[base + i * inner] - mx);
        o[base + i * inner] = e;
        sum += e;
      }
      for (std::size_t i = 0; i < len; ++i) o[base + i * inner] /= sum;
    }
  }
  flop_counter::add(5ull * x.size());
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require_rank2(x, "layer_norm");
  const std::size_t n = x.dim(0), d = x.dim(1);
  if (gamma.size() != d || beta.size() != d) {
    throw DimensionError("layer_norm: gamma " + gamma.shape_str() + " / beta " + beta.shape_str() +
                         " do not fit " + x.shape_str());
  }
  if (!(eps > 0.0)) throw ArgumentError("layer_norm: eps must be positive");
  Tensor out({n, d});
  for (std::size_t r = 0; r < n; ++r) {
    const auto in = x.row(r);
    auto o = out.row(r);
    double mean = 0.0;
    for (double v : in) mean += v;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (double v : in) var += (v - mean) * (v - mean);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < d; ++c) o[c] = (in[c] - mean) * inv * gamma[c] + beta[c];
  }
  flop_counter::add(8ull * x.size());
  return out;
}

double gelu(double x) noexcept {
  const double inner = kGeluSqrt2OverPi * (x + kGeluCubic * x * x * x);
  return 0.5 * x * (1.0 + std::tanh(inner));
}

double gelu_derivative(double x) noexcept {
  const double inner = kGeluSqrt2OverPi * (x + kGeluCubic * x * x * x);
  const double t = std::tanh(inner);
  const double dinner = kGeluSqrt2OverPi * (1.0 + 3.0 * kGeluCubic * x * x);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner;
}

Tensor gelu(const Tensor& x) {
  Tensor out = x;
  for (auto& v : out.data()) v = gelu(v);
  flop_counter::add(8ull * x.size());
  return out;
}

Tensor bilinear_resize(const Tensor& src, std::size_t out_h, std::size_t out_w) {
  require_rank2(src, "bilinear_resize");
  if (out_h == 0 || out_w == 0) throw ArgumentError("bilinear_resize: output size must be positive");
  const std::size_t h = src.dim(0), w = src.dim(1);
  const double sy = static_cast<double>(h) / static_cast<double>(out_h);
  const double sx = static_cast<double>(w) / static_cast<double>(out_w);

  auto source_coord = [](std::size_t dst, double ratio, std::size_t extent, std::size_t& lo,
                         std::size_t& hi, double& frac) {
    double s = (static_cast<double>(dst) + 0.5) * ratio - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(extent - 1));
    lo = static_cast<std::size_t>(std::floor(s));
    hi = std::min(lo + 1, extent - 1);
    frac = s - static_cast<double>(lo);
  };

  Tensor out({out_h, out_w});
  for (std::size_t y = 0; y < out_h; ++y) {
    std::size_t y0, y1;
    double fy;
    source_coord(y, sy, h, y0, y1, fy);
    for (std::size_t x = 0; x < out_w; ++x) {
      std::size_t x0, x1;
      double fx;
      source_coord(x, sx, w, x0, x1, fx);
      const double top = src(y0, x0) + (src(y0, x1) - src(y0, x0)) * fx;
      const double bottom = src(y1, x0) + (src(y1, x1) - src(y1, x0)) * fx;
      out(y, x) = top + (bottom - top) * fy;
    }
  }
  return out;
}

Tensor minmax_normalize(const Tensor& x) {
  Tensor out = x;
  if (x.empty()) return out;
  const auto [lo, hi] = std::minmax_element(x.data().begin(), x.data().end());
  const double mn = *lo, mx = *hi;
  if (mx == mn) {
    for (auto& v : out.data()) v = 0.5;
    return out;
  }
  const double range = mx - mn;
  for (auto& v : out.data()) v = (v - mn) / range;
  return out;
}

std::vector<std::size_t> arg_top_k(std::span<const double> scores, std::size_t k) {
  if (k < 1 || k > scores.size()) {
    throw ArgumentError("arg_top_k: k=" + std::to_string(k) + " outside [1, " +
                        std::to_string(scores.size()) + "]");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto better = [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  };
  std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k - 1), order.end(), better);
  order.resize(k);
  std::sort(order.begin(), order.end());
  return order;
}

std::size_t argmax(std::span<const double> values) {
  if (values.empty()) throw ArgumentError("argmax: empty input");
  return static_cast<std::size_t>(std::max_element(values.begin(), values.end()) - values.begin());
}

}  // namespace tinydrop
