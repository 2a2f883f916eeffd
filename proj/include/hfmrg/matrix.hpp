#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace hfmrg {

/// Row-major dense matrix of doubles.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  friend bool operator==(const Matrix&, const Matrix&) = default;
};

/// Row-major 0/1 matrix; one sample per row.
struct BinaryMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> data;

  BinaryMatrix() = default;
  BinaryMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0) {}

  std::uint8_t& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  std::uint8_t operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::span<std::uint8_t> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const std::uint8_t> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  void append_row(std::span<const std::uint8_t> values) {
    if (rows == 0 && cols == 0) cols = values.size();
    if (values.size() != cols) throw std::invalid_argument("BinaryMatrix::append_row: width mismatch");
    data.insert(data.end(), values.begin(), values.end());
    ++rows;
  }

  friend bool operator==(const BinaryMatrix&, const BinaryMatrix&) = default;
};

}  // namespace hfmrg
