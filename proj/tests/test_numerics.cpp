#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "doctest.h"
#include "survfuse/numerics.hpp"
#include "survfuse/rng.hpp"

using namespace survfuse;

namespace {

Matrix random_matrix(Rng& rng, std::size_t r, std::size_t c, double lo = -1.0, double hi = 1.0) {
  Matrix m(r, c);
  for (double& v : m.data()) v = rng.uniform(lo, hi);
  return m;
}

double max_orthonormality_error(const Matrix& u) {
  const Matrix g = matmul_tn(u, u);
  return max_abs_diff(g, Matrix::identity(u.cols()));
}

}  // namespace

TEST_CASE("matmul worked examples") {
  const Matrix a = Matrix::from_rows({{1, 2}, {3, 4}});
  CHECK(matmul(Matrix::identity(2), a) == a);
  const Matrix p = matmul(a, Matrix::from_rows({{5}, {6}}));
  CHECK(p == Matrix::from_rows({{17}, {39}}));

  const Matrix bad(2, 3);
  try {
    matmul(bad, Matrix(2, 2));
    FAIL("expected shape error");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("2x3") != std::string::npos);
    CHECK(msg.find("2x2") != std::string::npos);
  }
}

TEST_CASE("transposed products agree with explicit transposes") {
  Rng rng(11);
  const Matrix a = random_matrix(rng, 7, 5);
  const Matrix b = random_matrix(rng, 7, 3);
  const Matrix c = random_matrix(rng, 4, 5);
  CHECK(max_abs_diff(matmul_tn(a, b), matmul(a.transposed(), b)) < 1e-14);
  CHECK(max_abs_diff(matmul_nt(a, c), matmul(a, c.transposed())) < 1e-14);
}

TEST_CASE("parallel matmul kernels match the serial reference bitwise") {
  Rng rng(5);
  const Matrix a = random_matrix(rng, 130, 70);
  const Matrix b = random_matrix(rng, 70, 90);
  const Matrix c = random_matrix(rng, 130, 40);
  const Matrix d = random_matrix(rng, 60, 70);
  CHECK(matmul(a, b) == reference::matmul(a, b));
  CHECK(matmul_tn(a, c) == reference::matmul_tn(a, c));
  CHECK(matmul_nt(a, d) == reference::matmul_nt(a, d));
}

TEST_CASE("matmul is associative on random conformable triples") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    const auto m = 1 + rng.below(8), k = 1 + rng.below(8), l = 1 + rng.below(8), n = 1 + rng.below(8);
    const Matrix a = random_matrix(rng, m, k), b = random_matrix(rng, k, l), c = random_matrix(rng, l, n);
    const Matrix left = matmul(matmul(a, b), c);
    const Matrix right = matmul(a, matmul(b, c));
    Matrix diff = left;
    for (std::size_t i = 0; i < diff.size(); ++i) diff.data()[i] -= right.data()[i];
    CHECK(frobenius_norm(diff) <= 1e-9 * std::max(1.0, frobenius_norm(left)));
  }
}

TEST_CASE("softmax_rows worked examples") {
  const Matrix s = softmax_rows(Matrix::from_rows({{0, 0, 0}, {1000, 0, 0}, {0, std::log(2.0), std::log(3.0)}}));
  for (std::size_t c = 0; c < 3; ++c) CHECK(s(0, c) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(s(1, 0) == 1.0);
  CHECK(s(1, 1) == 0.0);
  CHECK(s.all_finite());
  CHECK(s(2, 0) == doctest::Approx(1.0 / 6.0).epsilon(1e-14));
  CHECK(s(2, 1) == doctest::Approx(2.0 / 6.0).epsilon(1e-14));
  CHECK(s(2, 2) == doctest::Approx(3.0 / 6.0).epsilon(1e-14));
}

TEST_CASE("softmax rows sum to one for entries in [-50, 50]") {
  Rng rng(99);
  for (int trial = 0; trial < 200; ++trial) {
    const Matrix s = softmax_rows(random_matrix(rng, 1 + rng.below(10), 1 + rng.below(20), -50, 50));
    for (std::size_t r = 0; r < s.rows(); ++r) {
      double sum = 0.0;
      for (double v : s.row(r)) sum += v;
      CHECK(std::abs(sum - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("logsumexp") {
  const double zero[] = {0.0};
  CHECK(logsumexp(zero) == 0.0);
  const double two[] = {std::log(2.0), std::log(3.0)};
  CHECK(logsumexp(two) == doctest::Approx(std::log(5.0)).epsilon(1e-15));
  const double big[] = {1000.0, 1000.0};
  CHECK(logsumexp(big) == doctest::Approx(1000.0 + std::log(2.0)).epsilon(1e-15));
  CHECK_THROWS_AS(logsumexp(std::span<const double>{}), DomainError);

  Rng rng(3);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> v(1 + rng.below(30));
    for (double& x : v) x = rng.uniform(-20, 20);
    double naive = 0.0;
    for (double x : v) naive += std::exp(x);
    CHECK(std::abs(logsumexp(v) - std::log(naive)) <= 1e-10);
    const double c = rng.uniform(-500, 500);
    std::vector<double> shifted = v;
    for (double& x : shifted) x += c;
    CHECK(std::abs(logsumexp(shifted) - (logsumexp(v) + c)) <= 1e-10);
  }
}

TEST_CASE("svd_thin worked examples") {
  const Matrix d = Matrix::from_rows({{2, 0, 0}, {0, 1, 0}, {0, 0, 0.5}});
  const SvdResult r = svd_thin(d);
  CHECK(r.s[0] == doctest::Approx(2.0));
  CHECK(r.s[1] == doctest::Approx(1.0));
  CHECK(r.s[2] == doctest::Approx(0.5));

  // rank one: a = x yᵀ, σ = |x|·|y|
  const std::vector<double> x = {1, -2, 3, 0.5, 4}, y = {2, 1, -2};
  Matrix a(5, 3);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 3; ++j) a(i, j) = x[i] * y[j];
  const SvdResult r1 = svd_thin(a);
  const double nx = std::sqrt(1 + 4 + 9 + 0.25 + 16), ny = 3.0;
  CHECK(r1.s[0] == doctest::Approx(nx * ny).epsilon(1e-13));
  CHECK(r1.s[1] <= 1e-12 * r1.s[0]);
  CHECK(r1.s[2] <= 1e-12 * r1.s[0]);
  CHECK(max_orthonormality_error(r1.u) <= 1e-10);

  CHECK_THROWS_AS(svd_thin(Matrix(2, 3)), ShapeError);
  CHECK_THROWS_AS(svd_thin(Matrix(5, 2)), ShapeError);
}

TEST_CASE("svd_thin reconstruction and orthonormality over 1000 seeds") {
  int failures = 0;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    Rng rng(seed);
    const std::size_t n = 3 + rng.below(60);
    Matrix a = random_matrix(rng, n, 3, -3, 3);
    if (seed % 7 == 0)  // make some exactly rank deficient
      for (std::size_t i = 0; i < n; ++i) a(i, 2) = 2.0 * a(i, 0) - a(i, 1);
    const SvdResult r = svd_thin(a);
    Matrix us = r.u;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < 3; ++k) us(i, k) *= r.s[k];
    const Matrix recon = matmul(us, r.vt);
    Matrix diff = recon;
    for (std::size_t i = 0; i < diff.size(); ++i) diff.data()[i] -= a.data()[i];
    const bool ok = frobenius_norm(diff) <= 1e-8 * frobenius_norm(a) &&
                    max_orthonormality_error(r.u) <= 1e-10 &&
                    max_orthonormality_error(r.vt.transposed()) <= 1e-10 && r.s[0] >= r.s[1] &&
                    r.s[1] >= r.s[2] && r.s[2] >= 0.0;
    if (!ok) ++failures;
  }
  CHECK(failures == 0);
}

TEST_CASE("grad_check") {
  auto square = [](std::span<const double> x) { return x[0] * x[0]; };
  const double x0[] = {3.0}, g0[] = {6.0};
  CHECK(grad_check(square, x0, g0) <= 1e-8);

  auto norm2 = [](std::span<const double> x) { return x[0] * x[0] + x[1] * x[1]; };
  const double x1[] = {1.0, 2.0}, g1[] = {2.0, 4.0}, wrong[] = {2.0, 5.0};
  CHECK(grad_check(norm2, x1, g1) <= 1e-8);
  CHECK(grad_check(norm2, x1, wrong) == doctest::Approx(0.2).epsilon(1e-6));

  auto blowup = [](std::span<const double> x) { return x[0] > 0 ? std::numeric_limits<double>::infinity() : 0.0; };
  const double x2[] = {0.0}, g2[] = {0.0};
  CHECK_THROWS_AS(grad_check(blowup, x2, g2), EvaluationError);
}

TEST_CASE("FMAT1 layout is bit exact") {
  const Matrix m = Matrix::from_rows({{1.0, -2.5}});
  std::stringstream ss;
  write_fmat(ss, m);
  const std::string bytes = ss.str();
  REQUIRE(bytes.size() == 8 + 16 + 16);
  CHECK(bytes.substr(0, 8) == std::string("FMAT1\0\0\0", 8));
  CHECK(static_cast<unsigned char>(bytes[8]) == 1);   // rows LE
  CHECK(static_cast<unsigned char>(bytes[16]) == 2);  // cols LE
  // 1.0 = 0x3FF0000000000000 little endian
  CHECK(static_cast<unsigned char>(bytes[30]) == 0xF0);
  CHECK(static_cast<unsigned char>(bytes[31]) == 0x3F);
  std::stringstream back(bytes);
  CHECK(read_fmat(back) == m);

  std::stringstream junk(std::string("FMAT2\0\0\0", 8));
  CHECK_THROWS_AS(read_fmat(junk), FormatError);
}

TEST_CASE("Rng streams are reproducible and independent") {
  Rng a(42), b(42), c(43);
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next_u64();
    CHECK(x == b.next_u64());
    CHECK(x != c.next_u64());
  }
  // split streams do not depend on how much the parent consumed
  Rng p1(7), p2(7);
  for (int i = 0; i < 10; ++i) p2.next_u64();
  Rng s1 = p1.split(3), s2 = p2.split(3), s3 = p1.split(4);
  CHECK(s1.next_u64() == s2.next_u64());
  CHECK(s1.next_u64() != s3.next_u64());

  Rng u(1);
  double mean = 0.0;
  for (int i = 0; i < 20000; ++i) mean += u.uniform();
  mean /= 20000;
  CHECK(mean == doctest::Approx(0.5).epsilon(0.02));
  for (int i = 0; i < 1000; ++i) CHECK(u.below(7) < 7);

  std::vector<int> items(20);
  std::iota(items.begin(), items.end(), 0);
  Rng sh(9);
  sh.shuffle(items);
  std::vector<int> sorted = items;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 20; ++i) CHECK(sorted[i] == i);
}
