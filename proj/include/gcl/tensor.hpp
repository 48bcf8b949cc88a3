#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "gcl/error.hpp"

namespace gcl {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

/// Dense row-major float32 array. Rank is arbitrary but almost everything in
/// the library works on rank-1 vectors and rank-2 [batch x features] matrices.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, float fill = 0.0f) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {
    check_shape();
  }

  Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape();
    if (data_.size() != shape_size(shape_)) {
      throw DimensionError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                           shape_str(shape_));
    }
  }

  static Tensor vector(std::initializer_list<float> v) { return Tensor({v.size()}, std::vector<float>(v)); }

  static Tensor matrix(std::initializer_list<std::initializer_list<float>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<float> d;
    d.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw DimensionError("ragged matrix literal");
      d.insert(d.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(d));
  }

  static Tensor scalar(float v) { return Tensor({1}, std::vector<float>{v}); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::size_t rows() const {
    require_rank(2);
    return shape_[0];
  }
  std::size_t cols() const {
    require_rank(2);
    return shape_[1];
  }

  float& operator[](std::size_t i) noexcept { return data_[i]; }
  float operator[](std::size_t i) const noexcept { return data_[i]; }

  float& at(std::size_t r, std::size_t c) noexcept { return data_[r * shape_[1] + c]; }
  float at(std::size_t r, std::size_t c) const noexcept { return data_[r * shape_[1] + c]; }

  std::span<float> values() noexcept { return data_; }
  std::span<const float> values() const noexcept { return data_; }
  std::vector<float>& storage() noexcept { return data_; }
  const std::vector<float>& storage() const noexcept { return data_; }

  std::span<const float> row(std::size_t r) const { return values().subspan(r * cols(), cols()); }
  std::span<float> row(std::size_t r) { return values().subspan(r * cols(), cols()); }

  float item() const {
    if (data_.size() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape_));
    return data_[0];
  }

  Tensor reshaped(Shape s) const {
    if (shape_size(s) != data_.size()) {
      throw DimensionError("cannot reshape " + shape_str(shape_) + " to " + shape_str(s));
    }
    return Tensor(std::move(s), data_);
  }

  void fill(float v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
  }

  bool same_shape(const Tensor& o) const noexcept { return shape_ == o.shape_; }

  friend bool operator==(const Tensor& a, const Tensor& b) { return a.shape_ == b.shape_ && a.data_ == b.data_; }

 private:
  void check_shape() const {
    for (auto d : shape_) {
      if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape_));
    }
  }
  void require_rank(std::size_t r) const {
    if (shape_.size() != r) {
      throw DimensionError("expected rank " + std::to_string(r) + ", got " + shape_str(shape_));
    }
  }

  Shape shape_;
  std::vector<float> data_;
};

inline float max_abs_diff(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw DimensionError("max_abs_diff shape mismatch");
  float m = 0.0f;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

// Matrix kernels shared by the autodiff graph and the inference path, so both
// accumulate in the same order and produce identical bits.
namespace kernels {

// c[m x n] = a[m x k] * b[k x n]
inline void gemm(std::span<const float> a, std::span<const float> b, std::span<float> c, std::size_t m,
                 std::size_t k, std::size_t n) {
  std::fill(c.begin(), c.end(), 0.0f);
  for (std::size_t i = 0; i < m; ++i) {
    float* ci = c.data() + i * n;
    const float* ai = a.data() + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const float aip = ai[p];
      const float* bp = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

// c[k x n] += a[m x k]^T * b[m x n]
inline void gemm_at_b_acc(std::span<const float> a, std::span<const float> b, std::span<float> c, std::size_t m,
                          std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const float* ai = a.data() + i * k;
    const float* bi = b.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const float aip = ai[p];
      float* cp = c.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += aip * bi[j];
    }
  }
}

// c[m x k] += a[m x n] * b[k x n]^T
inline void gemm_a_bt_acc(std::span<const float> a, std::span<const float> b, std::span<float> c, std::size_t m,
                          std::size_t n, std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const float* ai = a.data() + i * n;
    float* ci = c.data() + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const float* bp = b.data() + p * n;
      float s = 0.0f;
      for (std::size_t j = 0; j < n; ++j) s += ai[j] * bp[j];
      ci[p] += s;
    }
  }
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) {
    throw DimensionError("matmul of " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  Tensor c({a.rows(), b.cols()});
  gemm(a.values(), b.values(), c.values(), a.rows(), a.cols(), b.cols());
  return c;
}

/// Average pooling over non-overlapping pool_rows x pool_cols windows of a
/// grid laid out row-major in each row of x ([batch x grid_rows*grid_cols]).
/// Ragged edges are dropped.
inline Tensor mean_pool(const Tensor& x, std::size_t grid_rows, std::size_t grid_cols, std::size_t pool_rows,
                        std::size_t pool_cols) {
  if (x.rank() != 2 || x.cols() != grid_rows * grid_cols || pool_rows == 0 || pool_cols == 0 ||
      pool_rows > grid_rows || pool_cols > grid_cols) {
    throw DimensionError("mean_pool of " + shape_str(x.shape()) + " as " + std::to_string(grid_rows) + "x" +
                         std::to_string(grid_cols) + " grid with window " + std::to_string(pool_rows) + "x" +
                         std::to_string(pool_cols));
  }
  const std::size_t out_r = grid_rows / pool_rows;
  const std::size_t out_c = grid_cols / pool_cols;
  const float inv = 1.0f / static_cast<float>(pool_rows * pool_cols);
  Tensor y({x.rows(), out_r * out_c});
  for (std::size_t b = 0; b < x.rows(); ++b) {
    auto in = x.row(b);
    auto out = y.row(b);
    for (std::size_t r = 0; r < out_r; ++r) {
      for (std::size_t c = 0; c < out_c; ++c) {
        float s = 0.0f;
        for (std::size_t i = 0; i < pool_rows; ++i) {
          for (std::size_t j = 0; j < pool_cols; ++j) s += in[(r * pool_rows + i) * grid_cols + c * pool_cols + j];
        }
        out[r * out_c + c] = s * inv;
      }
    }
  }
  return y;
}

}  // namespace kernels

}  // namespace gcl
