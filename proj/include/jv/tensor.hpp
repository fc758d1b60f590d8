#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

#include "jv/rng.hpp"

namespace jv {

/// Dense row-major array of doubles with up to four dimensions.
///
/// A default-constructed tensor is empty (no shape, no data); every other
/// tensor has all dims >= 1 and product(shape) == size().
class Tensor {
public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  static Tensor vector(std::vector<double> values);
  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor identity(std::size_t n);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  // Matrix views; valid for rank-2 tensors.
  std::size_t rows() const { return shape_.at(0); }
  std::size_t cols() const { return shape_.at(1); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  const double& operator[](std::size_t i) const { return data_[i]; }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  const double& operator()(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
  double& operator()(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  const double& operator()(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  double& operator()(std::size_t i, std::size_t j, std::size_t k, std::size_t l) {
    return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
  }
  const double& operator()(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const {
    return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
  }

  /// Row i of a rank-2 tensor.
  std::span<double> row(std::size_t i) { return {data_.data() + i * shape_[1], shape_[1]}; }
  std::span<const double> row(std::size_t i) const {
    return {data_.data() + i * shape_[1], shape_[1]};
  }

  Tensor reshaped(std::vector<std::size_t> shape) const;
  void fill(double v);

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

std::size_t shape_product(const std::vector<std::size_t>& shape);

/// a[m x k] * b[k x n]. Accumulates over k in ascending order.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
/// (u (x) v)_kl = u_k * v_l.
Tensor outer(std::span<const double> u, std::span<const double> v);
inline Tensor outer(const Tensor& u, const Tensor& v) { return outer(u.data(), v.data()); }

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> x);
/// y^T A x for square A.
double quadratic_form(std::span<const double> y, const Tensor& a, std::span<const double> x);

/// Unit-length copy of x. Throws DegenerateError for a zero (or non-finite) norm.
Tensor l2_normalize(const Tensor& x);
std::vector<double> l2_normalize(std::span<const double> x);

/// i.i.d. N(0,1) entries drawn row-major from rng.
Tensor gaussian_matrix(Rng& rng, std::size_t rows, std::size_t cols);

Tensor add(const Tensor& a, const Tensor& b);
Tensor scaled(const Tensor& a, double s);
double max_abs_diff(const Tensor& a, const Tensor& b);

/// Lower-triangular L with L L^T = s for symmetric positive semi-definite s.
/// Pivots within tol of zero produce zero columns, so singular PSD matrices
/// are accepted. Throws DegenerateError when s is not PSD.
Tensor psd_factor(const Tensor& s, double tol = 1e-10);

}  // namespace jv
