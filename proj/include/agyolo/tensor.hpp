#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "agyolo/error.hpp"

namespace agyolo {

struct Shape {
  int n = 1;
  int c = 1;
  int h = 1;
  int w = 1;

  [[nodiscard]] std::size_t size() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  [[nodiscard]] std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  [[nodiscard]] bool valid() const { return n >= 1 && c >= 1 && h >= 1 && w >= 1; }
  [[nodiscard]] std::string str() const;

  friend bool operator==(const Shape&, const Shape&) = default;
};

// Dense NCHW array. Row-major, w fastest.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{}) : shape_(shape) {
    if (!shape.valid()) throw DimensionError("tensor dimensions must be >= 1, got " + shape.str());
    data_.assign(shape.size(), fill);
  }
  Tensor(int n, int c, int h, int w, T fill = T{}) : Tensor(Shape{n, c, h, w}, fill) {}
  Tensor(Shape shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
    if (!shape.valid()) throw DimensionError("tensor dimensions must be >= 1, got " + shape.str());
    if (data_.size() != shape.size())
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape.str());
  }

  [[nodiscard]] const Shape& shape() const { return shape_; }
  [[nodiscard]] int n() const { return shape_.n; }
  [[nodiscard]] int c() const { return shape_.c; }
  [[nodiscard]] int h() const { return shape_.h; }
  [[nodiscard]] int w() const { return shape_.w; }
  [[nodiscard]] std::size_t size() const { return data_.size(); }
  [[nodiscard]] bool empty() const { return data_.empty(); }

  [[nodiscard]] T* data() { return data_.data(); }
  [[nodiscard]] const T* data() const { return data_.data(); }
  [[nodiscard]] std::span<T> span() { return data_; }
  [[nodiscard]] std::span<const T> span() const { return data_; }
  [[nodiscard]] std::vector<T>& vec() { return data_; }
  [[nodiscard]] const std::vector<T>& vec() const { return data_; }

  [[nodiscard]] std::size_t index(int in, int ic, int iy, int ix) const {
    return ((static_cast<std::size_t>(in) * shape_.c + ic) * shape_.h + iy) * shape_.w + ix;
  }
  T& at(int in, int ic, int iy, int ix) { return data_[index(in, ic, iy, ix)]; }
  const T& at(int in, int ic, int iy, int ix) const { return data_[index(in, ic, iy, ix)]; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // Pointer to the (in, ic) spatial plane.
  T* plane(int in, int ic) { return data_.data() + index(in, ic, 0, 0); }
  const T* plane(int in, int ic) const { return data_.data() + index(in, ic, 0, 0); }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
  void zero() { fill(T{}); }

  template <typename U>
  [[nodiscard]] Tensor<U> cast() const {
    if (empty()) return {};
    Tensor<U> out(shape_);
    std::transform(data_.begin(), data_.end(), out.data(),
                   [](T v) { return static_cast<U>(v); });
    return out;
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_{};
  std::vector<T> data_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace agyolo
