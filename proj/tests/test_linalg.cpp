#include <doctest.h>

#include <cmath>
#include <random>

#include "affinefence/linalg.hpp"
#include "affinefence/parallel.hpp"

using namespace affinefence;

namespace {

Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Matrix m(rows, cols);
  for (double& v : m.data) v = gauss(rng);
  return m;
}

double normal_equation_residual(const Matrix& a, const Matrix& x,
                                const Matrix& b) {
  const Matrix r = matmul(a, x);
  Matrix diff(r.rows, r.cols);
  for (std::size_t i = 0; i < r.data.size(); ++i)
    diff.data[i] = r.data[i] - b.data[i];
  return max_abs(matmul(transpose(a), diff).data);
}

}  // namespace

TEST_CASE("matvec and matmul match hand products") {
  const Matrix a = Matrix::from_rows({{1.0, 2.0}, {3.0, 4.0}, {5.0, 6.0}});
  const Vector y = matvec(a, Vector{7.0, -1.0});
  CHECK(y == Vector{5.0, 17.0, 29.0});

  const Matrix b = Matrix::from_rows({{1.0, 0.0, 2.0}, {0.0, -1.0, 1.0}});
  const Matrix c = matmul(a, b);
  CHECK(c.rows == 3);
  CHECK(c.cols == 3);
  CHECK(c(0, 0) == 1.0);
  CHECK(c(0, 1) == -2.0);
  CHECK(c(0, 2) == 4.0);
  CHECK(c(1, 0) == 3.0);
  CHECK(c(1, 1) == -4.0);
  CHECK(c(1, 2) == 10.0);

  CHECK_THROWS_AS(matvec(a, Vector{1.0, 2.0, 3.0}), DimensionError);
  CHECK_THROWS_AS(matmul(b, b), DimensionError);
}

TEST_CASE("dot, norms and transpose") {
  CHECK(dot(Vector{1.0, -2.0, 3.0}, Vector{4.0, 5.0, -6.0}) == -24.0);
  CHECK(norm2(Vector{3.0, 4.0}) == 5.0);
  const Matrix a = Matrix::from_rows({{1.0, 2.0, 3.0}, {4.0, 5.0, 6.0}});
  CHECK(max_abs(a.data) == 6.0);
  const Matrix t = transpose(a);
  CHECK(t.rows == 3);
  CHECK(t.cols == 2);
  CHECK(t(2, 1) == 6.0);
  CHECK(transpose(t) == a);
}

TEST_CASE("least squares recovers the line through (1,2),(2,3),(3,4)") {
  const Matrix design =
      Matrix::from_rows({{1.0, 1.0}, {1.0, 2.0}, {1.0, 3.0}});
  Matrix rhs(3, 1);
  rhs(0, 0) = 2.0;
  rhs(1, 0) = 3.0;
  rhs(2, 0) = 4.0;
  const Matrix coef = least_squares(design, rhs);
  CHECK(coef.rows == 2);
  CHECK(coef(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(coef(1, 0) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("least squares rejects duplicated columns with the detected rank") {
  const Matrix design =
      Matrix::from_rows({{1.0, 1.0}, {2.0, 2.0}, {3.0, 3.0}});
  Matrix rhs(3, 1);
  rhs(0, 0) = 1.0;
  rhs(1, 0) = 2.0;
  rhs(2, 0) = 3.0;
  CHECK_THROWS_AS(least_squares(design, rhs), RankDeficientError);
  try {
    least_squares(design, rhs);
  } catch (const RankDeficientError& e) {
    CHECK(e.rank == 1);
  }

  std::size_t rank = 0;
  const Matrix basic = least_squares_basic(design, rhs, &rank);
  CHECK(rank == 1);
  CHECK(normal_equation_residual(design, basic, rhs) <= 1e-12);
}

TEST_CASE("least squares needs at least as many rows as columns") {
  const Matrix wide = Matrix::from_rows({{1.0, 2.0, 3.0}});
  CHECK_THROWS_AS(least_squares(wide, Matrix(1, 1, 1.0)), DimensionError);
}

TEST_CASE("overdetermined solves satisfy the normal equations") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Matrix a = random_matrix(20, 5, seed);
    const Matrix b = random_matrix(20, 2, seed + 100);
    const Matrix x = least_squares(a, b);
    CHECK(normal_equation_residual(a, x, b) <= 1e-10);
  }
}

TEST_CASE("basic solution handles underdetermined systems") {
  // 3 equations, 5 unknowns: any exact solution has zero residual
  const Matrix a = random_matrix(3, 5, 42);
  const Matrix b = random_matrix(3, 1, 43);
  std::size_t rank = 0;
  const Matrix x = least_squares_basic(a, b, &rank);
  CHECK(rank == 3);
  const Matrix ax = matmul(a, x);
  for (std::size_t i = 0; i < ax.data.size(); ++i)
    CHECK(ax.data[i] == doctest::Approx(b.data[i]).epsilon(1e-10));
}

TEST_CASE("parallel matmul is bit-identical to the serial reference") {
  const Matrix a = random_matrix(129, 96, 7);
  const Matrix b = random_matrix(96, 70, 8);
  const Matrix serial = matmul_serial(a, b);
  for (int jobs : {1, 2, 4, 7}) {
    set_max_jobs(jobs);
    CHECK(matmul(a, b) == serial);
  }
  set_max_jobs(1);
}
