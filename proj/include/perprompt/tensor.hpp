#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <vector>

namespace perprompt {

using Rng = std::mt19937_64;

// Dense row-major matrix of doubles.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  std::span<double> row(std::size_t i) { return {data.data() + i * cols, cols}; }
  std::span<const double> row(std::size_t i) const { return {data.data() + i * cols, cols}; }
  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
  bool empty() const { return rows == 0; }

  friend bool operator==(const Matrix&, const Matrix&) = default;
};

// Euclidean norm.
double l2_norm(std::span<const double> v);

}  // namespace perprompt
