#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace affinefence {

using Vector = std::vector<double>;

// Row-major dense matrix. Vertex sets and layer weights are processed
// row-wise, so rows are the contiguous unit.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

  double* row_ptr(std::size_t i) { return data.data() + i * cols; }
  const double* row_ptr(std::size_t i) const { return data.data() + i * cols; }

  Vector row(std::size_t i) const {
    return Vector(row_ptr(i), row_ptr(i) + cols);
  }
  void set_row(std::size_t i, const Vector& v) {
    for (std::size_t j = 0; j < cols; ++j) (*this)(i, j) = v[j];
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  static Matrix from_rows(const std::vector<Vector>& rows_in) {
    if (rows_in.empty()) return Matrix();
    Matrix m(rows_in.size(), rows_in.front().size());
    for (std::size_t i = 0; i < m.rows; ++i) m.set_row(i, rows_in[i]);
    return m;
  }

  bool operator==(const Matrix& other) const = default;
};

struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Thrown by least_squares when the design matrix is numerically
// rank-deficient; carries the detected rank.
struct RankDeficientError : std::runtime_error {
  std::size_t rank;
  RankDeficientError(std::size_t detected_rank, std::size_t cols)
      : std::runtime_error("rank-deficient least squares: numerical rank " +
                           std::to_string(detected_rank) + " < " +
                           std::to_string(cols) + " columns"),
        rank(detected_rank) {}
};

double dot(const Vector& a, const Vector& b);
double norm2(const Vector& v);
double max_abs(const Vector& v);

Vector matvec(const Matrix& m, const Vector& v);

// c = a * b. Rows of the result are computed independently, so the OpenMP
// path is bit-identical to the serial one.
Matrix matmul(const Matrix& a, const Matrix& b);
Matrix matmul_serial(const Matrix& a, const Matrix& b);

Matrix transpose(const Matrix& m);

// Minimizes ||a*x - b||_F via Householder QR with column pivoting.
// Requires a.rows >= a.cols and full column rank; throws RankDeficientError
// (with the numerical rank) otherwise.
Matrix least_squares(const Matrix& a, const Matrix& b);

// Rank-revealing solve used where rank deficiency is expected (affine fits
// on degenerate vertex sets, NNLS subproblems): returns a basic solution
// with free variables pinned to zero and reports the numerical rank.
Matrix least_squares_basic(const Matrix& a, const Matrix& b, std::size_t* rank_out);

}  // namespace affinefence
