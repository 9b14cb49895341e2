#pragma once

#include <cstddef>
#include <functional>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace stcat {

using Shape = std::vector<std::size_t>;

/// Raised when operand shapes do not conform for an operation.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised for inconsistent model or run configuration.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a checked operation produces NaN or Inf.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

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

/// Dense row-major array. A value type; shares nothing.
template <typename S>
struct Tensor {
  Shape shape;
  std::vector<S> data;

  Tensor() = default;
  explicit Tensor(Shape s) : shape(std::move(s)), data(numel(shape), S(0)) { validate_extents(); }
  Tensor(Shape s, std::vector<S> values) : shape(std::move(s)), data(std::move(values)) {
    validate_extents();
    if (data.size() != numel(shape)) {
      throw ShapeError("tensor data length " + std::to_string(data.size()) +
                       " does not match shape " + to_string(shape));
    }
  }

  static Tensor zeros(Shape s) { return Tensor(std::move(s)); }
  static Tensor filled(Shape s, S v) {
    Tensor t(std::move(s));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }
  static Tensor scalar(S v) { return Tensor(Shape{}, {v}); }

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t dim(std::size_t axis) const { return shape.at(axis); }

  S& operator[](std::size_t i) { return data[i]; }
  const S& operator[](std::size_t i) const { return data[i]; }

  S& at(std::size_t i, std::size_t j) { return data[i * shape.at(1) + j]; }
  const S& at(std::size_t i, std::size_t j) const { return data[i * shape.at(1) + j]; }

  S item() const {
    if (data.size() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape));
    return data[0];
  }

  template <typename U>
  Tensor<U> cast() const {
    return Tensor<U>(shape, std::vector<U>(data.begin(), data.end()));
  }

 private:
  void validate_extents() const {
    for (auto e : shape) {
      if (e == 0) throw ShapeError("zero extent in shape " + to_string(shape));
    }
  }
};

}  // namespace stcat
