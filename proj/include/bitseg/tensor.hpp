#pragma once

// Dense NCHW tensor. Templated on the scalar so the same layer code runs in
// float (training/inference) and double (gradient checking).

#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "bitseg/error.hpp"

namespace bitseg {

using Shape4 = std::array<std::size_t, 4>;

inline std::string shape_str(const Shape4& s) {
  return "(" + std::to_string(s[0]) + "," + std::to_string(s[1]) + "," + std::to_string(s[2]) +
         "," + std::to_string(s[3]) + ")";
}

template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;
  explicit BasicTensor(Shape4 shape, T fill = T(0))
      : shape_(shape), data_(shape[0] * shape[1] * shape[2] * shape[3], fill) {}
  BasicTensor(Shape4 shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_[0] * shape_[1] * shape_[2] * shape_[3])
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_str(shape_));
  }

  const Shape4& shape() const noexcept { return shape_; }
  std::size_t n() const noexcept { return shape_[0]; }
  std::size_t c() const noexcept { return shape_[1]; }
  std::size_t h() const noexcept { return shape_[2]; }
  std::size_t w() const noexcept { return shape_[3]; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  std::vector<T>& vec() noexcept { return data_; }
  const std::vector<T>& vec() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  std::size_t index(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const noexcept {
    return ((n * shape_[1] + c) * shape_[2] + y) * shape_[3] + x;
  }
  T& at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) noexcept {
    return data_[index(n, c, y, x)];
  }
  const T& at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const noexcept {
    return data_[index(n, c, y, x)];
  }

  // Contiguous (C,H,W) block of sample n.
  std::span<T> sample(std::size_t n) noexcept {
    const std::size_t s = shape_[1] * shape_[2] * shape_[3];
    return std::span<T>(data_).subspan(n * s, s);
  }
  std::span<const T> sample(std::size_t n) const noexcept {
    const std::size_t s = shape_[1] * shape_[2] * shape_[3];
    return std::span<const T>(data_).subspan(n * s, s);
  }

  void fill(T v) noexcept {
    for (auto& x : data_) x = v;
  }

  bool all_finite() const noexcept {
    for (auto x : data_)
      if (!std::isfinite(x)) return false;
    return true;
  }

  template <typename U>
  BasicTensor<U> cast() const {
    BasicTensor<U> out(shape_);
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return out;
  }

  bool operator==(const BasicTensor&) const = default;

 private:
  Shape4 shape_{0, 0, 0, 0};
  std::vector<T> data_;
};

using FloatTensor = BasicTensor<float>;

template <typename T>
void add_into(BasicTensor<T>& acc, const BasicTensor<T>& g) {
  if (acc.shape() != g.shape())
    throw DimensionError("gradient shape " + shape_str(g.shape()) + " vs " +
                         shape_str(acc.shape()));
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g[i];
}

}  // namespace bitseg
