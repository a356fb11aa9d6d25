#ifndef SURVFUSE_NUMERICS_HPP
#define SURVFUSE_NUMERICS_HPP

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace survfuse {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class EvaluationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  /// Builds from nested rows; all rows must have equal length.
  static Matrix from_rows(const std::vector<std::vector<double>>& rows);
  static Matrix identity(std::size_t n);
  static Matrix row_vector(std::span<const double> v);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  std::string shape_str() const;
  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }
  bool all_finite() const;

  Matrix transposed() const;
  void fill(double v);

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

double frobenius_norm(const Matrix& a);
/// max |a - b| over entries; shapes must match.
double max_abs_diff(const Matrix& a, const Matrix& b);

// Products. The `_tn` / `_nt` forms multiply by a transposed operand without
// materialising it, which is what every backward pass needs.
Matrix matmul(const Matrix& a, const Matrix& b);
Matrix matmul_tn(const Matrix& a, const Matrix& b);  // aᵀ·b
Matrix matmul_nt(const Matrix& a, const Matrix& b);  // a·bᵀ

Matrix softmax_rows(const Matrix& a);
double logsumexp(std::span<const double> v);
/// Numerically stable log(exp(a) + exp(b)); either argument may be -inf.
double logaddexp(double a, double b);

/// Mean over rows, returned as a 1×cols matrix.
Matrix mean_rows(const Matrix& a);

struct SvdResult {
  Matrix u;               // n×3, orthonormal columns
  std::vector<double> s;  // 3 singular values, descending
  Matrix vt;              // 3×3
};

/// Thin SVD of an n×3 matrix by one-sided Jacobi rotations.
SvdResult svd_thin(const Matrix& a);

using ScalarFn = std::function<double(std::span<const double>)>;

/// Central-difference gradient check. Returns
/// max_i |fd_i - g_i| / max(1, |fd_i|, |g_i|).
double grad_check(const ScalarFn& f, std::span<const double> x,
                  std::span<const double> analytic, double eps = 1e-5);

// FMAT1: magic "FMAT1\0\0\0", rows u64 LE, cols u64 LE, rows*cols f64 LE.
void write_fmat(std::ostream& os, const Matrix& m);
Matrix read_fmat(std::istream& is);
void save_fmat(const std::string& path, const Matrix& m);
Matrix load_fmat(const std::string& path);

namespace reference {
// Serial kernels; the parallel versions above must agree with them bitwise.
Matrix matmul(const Matrix& a, const Matrix& b);
Matrix matmul_tn(const Matrix& a, const Matrix& b);
Matrix matmul_nt(const Matrix& a, const Matrix& b);
}  // namespace reference

}  // namespace survfuse

#endif
