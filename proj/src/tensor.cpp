#include "jv/tensor.hpp"

#include <cmath>
#include <string>

#include "jv/error.hpp"

namespace jv {

namespace {
void check_shape(const std::vector<std::size_t>& shape) {
  if (shape.empty() || shape.size() > 4)
    throw DimensionError("tensor rank must be 1..4, got " + std::to_string(shape.size()));
  for (auto d : shape)
    if (d == 0) throw DimensionError("tensor dims must be >= 1");
}

void require_matrix(const Tensor& a, const char* what) {
  if (a.rank() != 2) throw DimensionError(std::string(what) + ": expected a matrix");
}
}  // namespace

std::size_t shape_product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

Tensor::Tensor(std::vector<std::size_t> shape, double fill) : shape_(std::move(shape)) {
  check_shape(shape_);
  data_.assign(shape_product(shape_), fill);
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  check_shape(shape_);
  if (shape_product(shape_) != data_.size())
    throw DimensionError("tensor data length does not match shape");
}

Tensor Tensor::vector(std::vector<double> values) {
  auto n = values.size();
  return Tensor({n}, std::move(values));
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  std::size_t r = rows.size();
  std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("from_rows: ragged rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor({r, c}, std::move(data));
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
  return t;
}

Tensor Tensor::reshaped(std::vector<std::size_t> shape) const {
  return Tensor(std::move(shape), data_);
}

void Tensor::fill(double v) {
  for (auto& x : data_) x = v;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  if (a.cols() != b.rows())
    throw DimensionError("matmul: inner dims " + std::to_string(a.cols()) + " vs " +
                         std::to_string(b.rows()));
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor c({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = &c(i, 0);
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a(i, p);
      const double* bp = &b(p, 0);
      for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
  return c;
}

Tensor transpose(const Tensor& a) {
  require_matrix(a, "transpose");
  Tensor t({a.cols(), a.rows()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

Tensor outer(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) throw DimensionError("outer: length mismatch");
  if (u.empty()) throw DimensionError("outer: empty vectors");
  const std::size_t d = u.size();
  Tensor o({d, d});
  for (std::size_t k = 0; k < d; ++k)
    for (std::size_t l = 0; l < d; ++l) o(k, l) = u[k] * v[l];
  return o;
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm2(std::span<const double> x) { return std::sqrt(dot(x, x)); }

double quadratic_form(std::span<const double> y, const Tensor& a, std::span<const double> x) {
  require_matrix(a, "quadratic_form");
  if (a.rows() != y.size() || a.cols() != x.size())
    throw DimensionError("quadratic_form: dimension mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double r = 0.0;
    for (std::size_t j = 0; j < a.cols(); ++j) r += a(i, j) * x[j];
    s += y[i] * r;
  }
  return s;
}

std::vector<double> l2_normalize(std::span<const double> x) {
  // Extended-precision sum so the norm is (nearly always) correctly rounded;
  // this keeps a second normalization within one ulp of the first.
  long double ss = 0.0L;
  for (double v : x) ss += static_cast<long double>(v) * v;
  const long double n = std::sqrt(ss);
  if (!(n > 0.0L) || !std::isfinite(static_cast<double>(n)))
    throw DegenerateError("l2_normalize: zero-norm vector");
  std::vector<double> out(x.begin(), x.end());
  for (auto& v : out) v = static_cast<double>(v / n);
  return out;
}

Tensor l2_normalize(const Tensor& x) { return Tensor(x.shape(), l2_normalize(x.data())); }

Tensor gaussian_matrix(Rng& rng, std::size_t rows, std::size_t cols) {
  Tensor t({rows, cols});
  for (auto& v : t.values()) v = rng.normal();
  return t;
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw DimensionError("add: shape mismatch");
  Tensor c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c[i] += b[i];
  return c;
}

Tensor scaled(const Tensor& a, double s) {
  Tensor c = a;
  for (auto& v : c.values()) v *= s;
  return c;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw DimensionError("max_abs_diff: shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

Tensor psd_factor(const Tensor& s, double tol) {
  require_matrix(s, "psd_factor");
  const std::size_t n = s.rows();
  if (s.cols() != n) throw DimensionError("psd_factor: matrix not square");
  double scale = 0.0;
  for (std::size_t i = 0; i < n; ++i) scale = std::max(scale, std::abs(s(i, i)));
  const double eps = tol * std::max(1.0, scale);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < i; ++j)
      if (std::abs(s(i, j) - s(j, i)) > eps) throw DegenerateError("covariance not symmetric");

  Tensor l({n, n});
  for (std::size_t j = 0; j < n; ++j) {
    double d = s(j, j);
    for (std::size_t k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
    if (d < -eps) throw DegenerateError("covariance is not positive semi-definite");
    if (d <= eps) {
      // Zero pivot: the rest of the column must vanish as well.
      for (std::size_t i = j + 1; i < n; ++i) {
        double r = s(i, j);
        for (std::size_t k = 0; k < j; ++k) r -= l(i, k) * l(j, k);
        if (std::abs(r) > std::sqrt(eps))
          throw DegenerateError("covariance is not positive semi-definite");
      }
      continue;
    }
    const double ljj = std::sqrt(d);
    l(j, j) = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      double r = s(i, j);
      for (std::size_t k = 0; k < j; ++k) r -= l(i, k) * l(j, k);
      l(i, j) = r / ljj;
    }
  }
  return l;
}

}  // namespace jv
