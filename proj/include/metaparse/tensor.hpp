#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace metaparse {

// Dense row-major tensor of 64-bit floats. Everything in the library is f64;
// a value that turns NaN or Inf is treated as an error, not propagated.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::vector<std::size_t> s, std::vector<double> d);

  static Tensor zeros(std::vector<std::size_t> shape);
  static Tensor scalar(double v);
  static Tensor vector(std::vector<double> v);
  static Tensor matrix(std::size_t rows, std::size_t cols,
                       std::vector<double> v);
  static Tensor full(std::vector<std::size_t> shape, double v);

  std::size_t numel() const;
  bool is_scalar() const { return numel() == 1; }
  bool is_vector() const { return shape.size() == 1; }
  bool is_matrix() const { return shape.size() == 2; }
  bool same_shape(const Tensor& other) const { return shape == other.shape; }

  std::size_t rows() const { return shape.at(0); }
  std::size_t cols() const { return shape.at(1); }

  double& at(std::size_t i) { return data[i]; }
  double at(std::size_t i) const { return data[i]; }
  double& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

  std::string shape_str() const;
};

std::size_t shape_numel(const std::vector<std::size_t>& shape);

// Throws std::runtime_error naming `where` if any element is NaN or Inf.
void check_finite(const Tensor& t, const std::string& where);

double l2_norm(const std::vector<double>& v);
double dot(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace metaparse
