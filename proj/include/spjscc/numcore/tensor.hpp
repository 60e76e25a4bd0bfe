#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace spjscc::numcore {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

inline std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

// Dense row-major tensor. Layout for images is (N, channel, row, col).
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T{0})
      : shape_(std::move(shape)), data_(element_count(shape_), fill) {
    validate_shape();
  }

  Tensor(Shape shape, std::vector<T> values)
      : shape_(std::move(shape)), data_(std::move(values)) {
    validate_shape();
    if (data_.size() != element_count(shape_)) {
      throw ShapeError("tensor: " + std::to_string(data_.size()) +
                       " values do not fill shape " + to_string(shape_));
    }
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) {
    return data_[((n * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
  }
  const T& at(std::size_t n, std::size_t c, std::size_t y,
              std::size_t x) const {
    return data_[((n * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
  }

  // Same values under a new shape with equal element count.
  Tensor reshaped(Shape shape) const {
    return Tensor(std::move(shape), data_);
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(),
                       [](T v) { return std::isfinite(v); });
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  void validate_shape() const {
    for (std::size_t d : shape_) {
      if (d == 0) throw ShapeError("tensor: zero dim in " + to_string(shape_));
    }
  }

  Shape shape_;
  std::vector<T> data_;
};

// Slice of image `n` from a (N, ...) batch as a rank-(r-1) tensor.
template <typename T>
Tensor<T> batch_item(const Tensor<T>& batch, std::size_t n) {
  Shape item(batch.shape().begin() + 1, batch.shape().end());
  const std::size_t stride = element_count(item);
  if (n >= batch.dim(0)) throw ShapeError("batch_item: index out of range");
  auto first = batch.values().begin() + static_cast<std::ptrdiff_t>(n * stride);
  return Tensor<T>(std::move(item),
                   std::vector<T>(first, first + static_cast<std::ptrdiff_t>(stride)));
}

}  // namespace spjscc::numcore
