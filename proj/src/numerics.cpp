#include "survfuse/numerics.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>

#include "survfuse/parallel.hpp"

namespace survfuse {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw ShapeError("matrix data length " + std::to_string(data_.size()) +
                     " does not match " + std::to_string(rows) + "x" + std::to_string(cols));
  }
}

Matrix Matrix::from_rows(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) return {};
  const std::size_t cols = rows.front().size();
  Matrix m(rows.size(), cols);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != cols) throw ShapeError("ragged rows in from_rows");
    std::copy(rows[r].begin(), rows[r].end(), m.row(r).begin());
  }
  return m;
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::row_vector(std::span<const double> v) {
  return Matrix(1, v.size(), std::vector<double>(v.begin(), v.end()));
}

std::string Matrix::shape_str() const {
  return std::to_string(rows_) + "x" + std::to_string(cols_);
}

bool Matrix::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Matrix Matrix::transposed() const {
  Matrix t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

void Matrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

double frobenius_norm(const Matrix& a) {
  double s = 0.0;
  for (double v : a.data()) s += v * v;
  return std::sqrt(s);
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) throw ShapeError("max_abs_diff: " + a.shape_str() + " vs " + b.shape_str());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

namespace {

void check_product(const char* op, std::size_t inner_a, std::size_t inner_b, const Matrix& a,
                   const Matrix& b) {
  if (inner_a != inner_b) {
    throw ShapeError(std::string(op) + ": incompatible operands " + a.shape_str() + " and " +
                     b.shape_str());
  }
}

// Row i of the product depends only on row i of a; parallel and serial
// loops therefore perform identical floating-point sequences.
inline void matmul_row(const Matrix& a, const Matrix& b, Matrix& out, std::size_t i) {
  const std::size_t inner = a.cols();
  const std::size_t n = b.cols();
  double* o = out.data().data() + i * n;
  for (std::size_t k = 0; k < inner; ++k) {
    const double aik = a(i, k);
    const double* brow = b.data().data() + k * n;
    for (std::size_t j = 0; j < n; ++j) o[j] += aik * brow[j];
  }
}

inline void matmul_tn_row(const Matrix& a, const Matrix& b, Matrix& out, std::size_t i) {
  // out row i = Σ_k a(k,i) · b row k
  const std::size_t n = b.cols();
  double* o = out.data().data() + i * n;
  for (std::size_t k = 0; k < a.rows(); ++k) {
    const double aki = a(k, i);
    const double* brow = b.data().data() + k * n;
    for (std::size_t j = 0; j < n; ++j) o[j] += aki * brow[j];
  }
}

inline void matmul_nt_row(const Matrix& a, const Matrix& b, Matrix& out, std::size_t i) {
  const std::size_t inner = a.cols();
  const double* arow = a.data().data() + i * inner;
  for (std::size_t j = 0; j < b.rows(); ++j) {
    const double* brow = b.data().data() + j * inner;
    double s = 0.0;
    for (std::size_t k = 0; k < inner; ++k) s += arow[k] * brow[k];
    out(i, j) = s;
  }
}

// Below this many multiply-adds the OpenMP fork costs more than it saves.
constexpr std::size_t kParallelWork = 1u << 15;

}  // namespace

Matrix matmul(const Matrix& a, const Matrix& b) {
  check_product("matmul", a.cols(), b.rows(), a, b);
  Matrix out(a.rows(), b.cols());
  const auto rows = static_cast<std::ptrdiff_t>(a.rows());
  if (a.rows() * a.cols() * b.cols() < kParallelWork) {
    for (std::ptrdiff_t i = 0; i < rows; ++i) matmul_row(a, b, out, static_cast<std::size_t>(i));
    return out;
  }
  SURVFUSE_PARFOR
  for (std::ptrdiff_t i = 0; i < rows; ++i) matmul_row(a, b, out, static_cast<std::size_t>(i));
  return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  check_product("matmul_tn", a.rows(), b.rows(), a, b);
  Matrix out(a.cols(), b.cols());
  const auto rows = static_cast<std::ptrdiff_t>(a.cols());
  if (a.rows() * a.cols() * b.cols() < kParallelWork) {
    for (std::ptrdiff_t i = 0; i < rows; ++i) matmul_tn_row(a, b, out, static_cast<std::size_t>(i));
    return out;
  }
  SURVFUSE_PARFOR
  for (std::ptrdiff_t i = 0; i < rows; ++i) matmul_tn_row(a, b, out, static_cast<std::size_t>(i));
  return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  check_product("matmul_nt", a.cols(), b.cols(), a, b);
  Matrix out(a.rows(), b.rows());
  const auto rows = static_cast<std::ptrdiff_t>(a.rows());
  if (a.rows() * a.cols() * b.rows() < kParallelWork) {
    for (std::ptrdiff_t i = 0; i < rows; ++i) matmul_nt_row(a, b, out, static_cast<std::size_t>(i));
    return out;
  }
  SURVFUSE_PARFOR
  for (std::ptrdiff_t i = 0; i < rows; ++i) matmul_nt_row(a, b, out, static_cast<std::size_t>(i));
  return out;
}

namespace reference {

Matrix matmul(const Matrix& a, const Matrix& b) {
  check_product("matmul", a.cols(), b.rows(), a, b);
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) matmul_row(a, b, out, i);
  return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  check_product("matmul_tn", a.rows(), b.rows(), a, b);
  Matrix out(a.cols(), b.cols());
  for (std::size_t i = 0; i < a.cols(); ++i) matmul_tn_row(a, b, out, i);
  return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  check_product("matmul_nt", a.cols(), b.cols(), a, b);
  Matrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) matmul_nt_row(a, b, out, i);
  return out;
}

}  // namespace reference

Matrix softmax_rows(const Matrix& a) {
  Matrix out(a.rows(), a.cols());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    auto in = a.row(r);
    auto o = out.row(r);
    if (in.empty()) continue;
    const double mx = *std::max_element(in.begin(), in.end());
    double sum = 0.0;
    for (std::size_t c = 0; c < in.size(); ++c) {
      o[c] = std::exp(in[c] - mx);
      sum += o[c];
    }
    for (double& v : o) v /= sum;
  }
  return out;
}

double logsumexp(std::span<const double> v) {
  if (v.empty()) throw DomainError("logsumexp of an empty vector");
  const double mx = *std::max_element(v.begin(), v.end());
  if (std::isinf(mx)) return mx;
  double s = 0.0;
  for (double x : v) s += std::exp(x - mx);
  return mx + std::log(s);
}

double logaddexp(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  const double mx = std::max(a, b);
  return mx + std::log1p(std::exp(-std::abs(a - b)));
}

Matrix mean_rows(const Matrix& a) {
  Matrix out(1, a.cols());
  if (a.rows() == 0) return out;
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < a.cols(); ++c) out(0, c) += a(r, c);
  const double inv = 1.0 / static_cast<double>(a.rows());
  for (double& v : out.data()) v *= inv;
  return out;
}

SvdResult svd_thin(const Matrix& a) {
  if (a.cols() != 3) throw ShapeError("svd_thin expects 3 columns, got " + a.shape_str());
  if (a.rows() < 3) throw ShapeError("svd_thin needs at least 3 rows, got " + a.shape_str());
  const std::size_t n = a.rows();
  Matrix w = a;
  Matrix v = Matrix::identity(3);

  constexpr double tol = 1e-15;
  for (int sweep = 0; sweep < 60; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p < 2; ++p) {
      for (std::size_t q = p + 1; q < 3; ++q) {
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          alpha += w(i, p) * w(i, p);
          beta += w(i, q) * w(i, q);
          gamma += w(i, p) * w(i, q);
        }
        if (gamma == 0.0 || std::abs(gamma) <= tol * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < n; ++i) {
          const double wp = w(i, p), wq = w(i, q);
          w(i, p) = c * wp - s * wq;
          w(i, q) = s * wp + c * wq;
        }
        for (std::size_t i = 0; i < 3; ++i) {
          const double vp = v(i, p), vq = v(i, q);
          v(i, p) = c * vp - s * vq;
          v(i, q) = s * vp + c * vq;
        }
      }
    }
    if (!rotated) break;
  }

  std::array<double, 3> norms{};
  for (std::size_t k = 0; k < 3; ++k) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += w(i, k) * w(i, k);
    norms[k] = std::sqrt(s);
  }
  std::array<std::size_t, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return norms[x] > norms[y]; });

  SvdResult res{Matrix(n, 3), std::vector<double>(3), Matrix(3, 3)};
  const double smax = norms[order[0]];
  std::array<bool, 3> defined{};
  for (std::size_t k = 0; k < 3; ++k) {
    const std::size_t src = order[k];
    res.s[k] = norms[src];
    for (std::size_t j = 0; j < 3; ++j) res.vt(k, j) = v(j, src);
    if (smax > 0.0 && norms[src] > 1e-12 * smax) {
      defined[k] = true;
      for (std::size_t i = 0; i < n; ++i) res.u(i, k) = w(i, src) / norms[src];
    }
  }

  // Columns for (numerically) zero singular values are completed to an
  // orthonormal set from the standard basis.
  auto orthogonalize = [&](std::vector<double>& col, std::size_t upto) {
    for (std::size_t j = 0; j < upto; ++j) {
      double dot = 0.0;
      for (std::size_t i = 0; i < n; ++i) dot += res.u(i, j) * col[i];
      for (std::size_t i = 0; i < n; ++i) col[i] -= dot * res.u(i, j);
    }
  };
  for (std::size_t k = 0; k < 3; ++k) {
    std::vector<double> col(n);
    if (defined[k]) {
      for (std::size_t i = 0; i < n; ++i) col[i] = res.u(i, k);
      orthogonalize(col, k);
      orthogonalize(col, k);
    } else {
      double best = -1.0;
      std::vector<double> cand(n);
      for (std::size_t e = 0; e < n; ++e) {
        std::fill(cand.begin(), cand.end(), 0.0);
        cand[e] = 1.0;
        orthogonalize(cand, k);
        orthogonalize(cand, k);
        double nn = 0.0;
        for (double x : cand) nn += x * x;
        if (nn > best + 1e-12) {
          best = nn;
          col = cand;
        }
        if (best > 0.5) break;
      }
    }
    double nn = 0.0;
    for (double x : col) nn += x * x;
    nn = std::sqrt(nn);
    for (std::size_t i = 0; i < n; ++i) res.u(i, k) = col[i] / nn;
  }
  return res;
}

double grad_check(const ScalarFn& f, std::span<const double> x, std::span<const double> analytic,
                  double eps) {
  if (x.size() != analytic.size()) {
    throw ShapeError("grad_check: x has " + std::to_string(x.size()) + " entries, gradient has " +
                     std::to_string(analytic.size()));
  }
  if (!(eps > 0.0)) throw DomainError("grad_check: eps must be positive");
  std::vector<double> probe(x.begin(), x.end());
  double worst = 0.0;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + eps;
    const double fp = f(probe);
    probe[i] = orig - eps;
    const double fm = f(probe);
    probe[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw EvaluationError("grad_check: non-finite function value at coordinate " +
                            std::to_string(i));
    }
    const double fd = (fp - fm) / (2.0 * eps);
    const double denom = std::max({1.0, std::abs(fd), std::abs(analytic[i])});
    worst = std::max(worst, std::abs(fd - analytic[i]) / denom);
  }
  return worst;
}

namespace {

constexpr char kFmatMagic[8] = {'F', 'M', 'A', 'T', '1', '\0', '\0', '\0'};

void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) throw FormatError("FMAT1: truncated header");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace

void write_fmat(std::ostream& os, const Matrix& m) {
  os.write(kFmatMagic, 8);
  put_u64(os, m.rows());
  put_u64(os, m.cols());
  for (double d : m.data()) put_u64(os, std::bit_cast<std::uint64_t>(d));
  if (!os) throw FormatError("FMAT1: write failed");
}

Matrix read_fmat(std::istream& is) {
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kFmatMagic, 8) != 0) {
    throw FormatError("FMAT1: bad magic");
  }
  const std::uint64_t rows = get_u64(is);
  const std::uint64_t cols = get_u64(is);
  if (rows > (1ull << 32) || cols > (1ull << 32)) throw FormatError("FMAT1: implausible dims");
  std::vector<double> data(rows * cols);
  for (double& d : data) d = std::bit_cast<double>(get_u64(is));
  return Matrix(rows, cols, std::move(data));
}

void save_fmat(const std::string& path, const Matrix& m) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open " + path + " for writing");
  write_fmat(os, m);
}

Matrix load_fmat(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path);
  return read_fmat(is);
}

}  // namespace survfuse
