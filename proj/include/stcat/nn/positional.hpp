#pragma once

#include <cmath>

#include "stcat/tensor/tensor.hpp"

namespace stcat {

/// 1-D sinusoidal encoding [n, dim]: even channels sin, odd channels cos,
/// frequencies 1 / 10000^(2i/dim).
template <typename S>
Tensor<S> sine_encoding_1d(std::size_t n, std::size_t dim) {
  Tensor<S> pe(Shape{n, dim});
  for (std::size_t pos = 0; pos < n; ++pos) {
    for (std::size_t c = 0; c < dim; ++c) {
      const double i2 = static_cast<double>(c - c % 2);
      const double angle = static_cast<double>(pos) / std::pow(10000.0, i2 / static_cast<double>(dim));
      pe.at(pos, c) = static_cast<S>(c % 2 == 0 ? std::sin(angle) : std::cos(angle));
    }
  }
  return pe;
}

/// 2-D encoding of a rows x cols grid flattened row-major to [rows*cols, dim].
/// The first dim/2 channels encode the row, the rest the column.
template <typename S>
Tensor<S> sine_encoding_2d(std::size_t rows, std::size_t cols, std::size_t dim) {
  const std::size_t half = dim / 2;
  const auto ey = sine_encoding_1d<S>(rows, half);
  const auto ex = sine_encoding_1d<S>(cols, dim - half);
  Tensor<S> pe(Shape{rows * cols, dim});
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      for (std::size_t k = 0; k < half; ++k) pe.at(r * cols + c, k) = ey.at(r, k);
      for (std::size_t k = 0; k < dim - half; ++k) pe.at(r * cols + c, half + k) = ex.at(c, k);
    }
  }
  return pe;
}

}  // namespace stcat
