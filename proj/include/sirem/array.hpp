#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "errors.hpp"

namespace sirem {

using cplx = std::complex<double>;

struct GridSize {
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::size_t pixels() const { return rows * cols; }
  friend bool operator==(const GridSize &, const GridSize &) = default;
};

inline std::string to_string(GridSize g) {
  return std::to_string(g.rows) + "x" + std::to_string(g.cols);
}

// Row-major 2-D image.
template <typename T>
class Image {
 public:
  using value_type = T;

  Image() = default;
  Image(std::size_t rows, std::size_t cols, T fill = T{})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  explicit Image(GridSize g, T fill = T{}) : Image(g.rows, g.cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  GridSize grid() const { return {rows_, cols_}; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T &operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const T &operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  T &operator[](std::size_t i) { return data_[i]; }
  const T &operator[](std::size_t i) const { return data_[i]; }

  T *data() { return data_.data(); }
  const T *data() const { return data_.data(); }
  std::span<T> span() { return data_; }
  std::span<const T> span() const { return data_; }
  std::vector<T> &vec() { return data_; }
  const std::vector<T> &vec() const { return data_; }

  auto begin() { return data_.begin(); }
  auto end() { return data_.end(); }
  auto begin() const { return data_.begin(); }
  auto end() const { return data_.end(); }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  friend bool operator==(const Image &, const Image &) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

using RealImage = Image<double>;
using ComplexImage = Image<cplx>;

// Dense N-d array, row-major, used for serialization and stacked data.
template <typename T>
struct NdArray {
  std::vector<std::size_t> shape;
  std::vector<T> data;

  NdArray() = default;
  explicit NdArray(std::vector<std::size_t> s, T fill = T{})
      : shape(std::move(s)), data(count(shape), fill) {}
  NdArray(std::vector<std::size_t> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    require(data.size() == count(shape), Errc::shape_mismatch, "payload does not match shape");
  }

  static std::size_t count(const std::vector<std::size_t> &s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
  }
  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }

  // Flat offset of the leading `idx.size()` indices (remaining axes implied zero).
  std::size_t offset(std::initializer_list<std::size_t> idx) const {
    std::size_t off = 0, ax = 0;
    for (auto i : idx) off = off * shape[ax++] + i;
    for (; ax < shape.size(); ++ax) off *= shape[ax];
    return off;
  }
  std::size_t stride(std::size_t axis) const {
    std::size_t s = 1;
    for (std::size_t a = axis + 1; a < shape.size(); ++a) s *= shape[a];
    return s;
  }

  friend bool operator==(const NdArray &, const NdArray &) = default;
};

template <typename T>
inline bool all_finite(std::span<const T> v) {
  for (const auto &x : v) {
    if constexpr (std::is_same_v<T, cplx> || std::is_same_v<T, std::complex<float>>) {
      if (!std::isfinite(x.real()) || !std::isfinite(x.imag())) return false;
    } else {
      if (!std::isfinite(static_cast<double>(x))) return false;
    }
  }
  return true;
}

inline double l2_norm(std::span<const cplx> v) {
  double s = 0.0;
  for (const auto &x : v) s += std::norm(x);
  return std::sqrt(s);
}

inline cplx inner(std::span<const cplx> a, std::span<const cplx> b) {
  cplx s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * std::conj(b[i]);
  return s;
}

}  // namespace sirem
