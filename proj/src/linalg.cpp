#include "affinefence/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "affinefence/parallel.hpp"

namespace affinefence {

double dot(const Vector& a, const Vector& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm2(const Vector& v) { return std::sqrt(dot(v, v)); }

double max_abs(const Vector& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

Vector matvec(const Matrix& m, const Vector& v) {
  if (m.cols != v.size())
    throw DimensionError("matvec: matrix has " + std::to_string(m.cols) +
                         " cols but vector has " + std::to_string(v.size()));
  Vector out(m.rows, 0.0);
  for (std::size_t i = 0; i < m.rows; ++i) {
    const double* r = m.row_ptr(i);
    double s = 0.0;
    for (std::size_t j = 0; j < m.cols; ++j) s += r[j] * v[j];
    out[i] = s;
  }
  return out;
}

static void matmul_rows(const Matrix& a, const Matrix& b, Matrix& c,
                        std::size_t i0, std::size_t i1) {
  for (std::size_t i = i0; i < i1; ++i) {
    const double* arow = a.row_ptr(i);
    double* crow = c.row_ptr(i);
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double aik = arow[k];
      if (aik == 0.0) continue;
      const double* brow = b.row_ptr(k);
      for (std::size_t j = 0; j < b.cols; ++j) crow[j] += aik * brow[j];
    }
  }
}

Matrix matmul_serial(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows)
    throw DimensionError("matmul: inner dimensions " + std::to_string(a.cols) +
                         " vs " + std::to_string(b.rows));
  Matrix c(a.rows, b.cols);
  matmul_rows(a, b, c, 0, a.rows);
  return c;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows)
    throw DimensionError("matmul: inner dimensions " + std::to_string(a.cols) +
                         " vs " + std::to_string(b.rows));
  Matrix c(a.rows, b.cols);
  const int jobs = max_jobs();
  if (jobs <= 1 || a.rows < 64) {
    matmul_rows(a, b, c, 0, a.rows);
    return c;
  }
#pragma omp parallel for schedule(static) num_threads(jobs)
  for (long long i = 0; i < static_cast<long long>(a.rows); ++i) {
    matmul_rows(a, b, c, static_cast<std::size_t>(i),
                static_cast<std::size_t>(i) + 1);
  }
  return c;
}

Matrix transpose(const Matrix& m) {
  Matrix t(m.cols, m.rows);
  for (std::size_t i = 0; i < m.rows; ++i)
    for (std::size_t j = 0; j < m.cols; ++j) t(j, i) = m(i, j);
  return t;
}

namespace {

// Householder QR with column pivoting, in place on a copy of `a`.
// Returns the numerical rank; `perm` records the column permutation and
// `qtb` accumulates Q^T applied to the right-hand sides.
struct PivotedQr {
  Matrix r;               // upper triangle holds R, lower holds reflectors
  Matrix qtb;             // Q^T * b
  std::vector<std::size_t> perm;
  std::size_t rank = 0;
};

PivotedQr factor(const Matrix& a, const Matrix& b) {
  PivotedQr f;
  f.r = a;
  f.qtb = b;
  const std::size_t n = a.rows, p = a.cols;
  f.perm.resize(p);
  std::iota(f.perm.begin(), f.perm.end(), std::size_t{0});

  std::vector<double> colnorm2(p, 0.0);
  for (std::size_t j = 0; j < p; ++j)
    for (std::size_t i = 0; i < n; ++i) colnorm2[j] += f.r(i, j) * f.r(i, j);

  const std::size_t steps = std::min(n, p);
  double r00 = 0.0;
  for (std::size_t k = 0; k < steps; ++k) {
    // pivot: bring the column with the largest remaining norm to position k
    std::size_t pivot = k;
    for (std::size_t j = k + 1; j < p; ++j)
      if (colnorm2[j] > colnorm2[pivot]) pivot = j;
    if (pivot != k) {
      for (std::size_t i = 0; i < n; ++i) std::swap(f.r(i, k), f.r(i, pivot));
      std::swap(colnorm2[k], colnorm2[pivot]);
      std::swap(f.perm[k], f.perm[pivot]);
    }

    double alpha2 = 0.0;
    for (std::size_t i = k; i < n; ++i) alpha2 += f.r(i, k) * f.r(i, k);
    const double alpha = std::sqrt(alpha2);
    if (k == 0) r00 = alpha;

    const double tol = std::max(n, p) * std::numeric_limits<double>::epsilon() * r00;
    if (alpha <= tol) break;  // remaining block is numerically zero
    f.rank = k + 1;

    // Householder reflector zeroing column k below the diagonal
    const double sign = f.r(k, k) >= 0.0 ? 1.0 : -1.0;
    Vector v(n - k);
    v[0] = f.r(k, k) + sign * alpha;
    for (std::size_t i = k + 1; i < n; ++i) v[i - k] = f.r(i, k);
    const double vnorm2 = dot(v, v);
    if (vnorm2 > 0.0) {
      auto apply = [&](Matrix& m, std::size_t j) {
        double s = 0.0;
        for (std::size_t i = k; i < n; ++i) s += v[i - k] * m(i, j);
        s *= 2.0 / vnorm2;
        for (std::size_t i = k; i < n; ++i) m(i, j) -= s * v[i - k];
      };
      for (std::size_t j = k; j < p; ++j) apply(f.r, j);
      for (std::size_t j = 0; j < f.qtb.cols; ++j) apply(f.qtb, j);
    }
    f.r(k, k) = -sign * alpha;
    for (std::size_t i = k + 1; i < n; ++i) f.r(i, k) = 0.0;

    for (std::size_t j = k + 1; j < p; ++j) {
      colnorm2[j] -= f.r(k, j) * f.r(k, j);
      if (colnorm2[j] < 0.0) colnorm2[j] = 0.0;
    }
  }
  return f;
}

Matrix back_substitute(const PivotedQr& f, std::size_t p) {
  const std::size_t k = f.rank;
  Matrix x(p, f.qtb.cols, 0.0);
  for (std::size_t col = 0; col < f.qtb.cols; ++col) {
    for (std::size_t ii = k; ii-- > 0;) {
      double s = f.qtb(ii, col);
      for (std::size_t j = ii + 1; j < k; ++j) s -= f.r(ii, j) * x(f.perm[j], col);
      x(f.perm[ii], col) = s / f.r(ii, ii);
    }
  }
  return x;
}

}  // namespace

Matrix least_squares(const Matrix& a, const Matrix& b) {
  if (a.rows < a.cols)
    throw DimensionError("least_squares: need rows >= cols, got " +
                         std::to_string(a.rows) + " x " + std::to_string(a.cols));
  if (a.rows != b.rows)
    throw DimensionError("least_squares: a has " + std::to_string(a.rows) +
                         " rows but b has " + std::to_string(b.rows));
  PivotedQr f = factor(a, b);
  if (f.rank < a.cols) throw RankDeficientError(f.rank, a.cols);
  return back_substitute(f, a.cols);
}

Matrix least_squares_basic(const Matrix& a, const Matrix& b, std::size_t* rank_out) {
  if (a.rows != b.rows)
    throw DimensionError("least_squares_basic: a has " + std::to_string(a.rows) +
                         " rows but b has " + std::to_string(b.rows));
  PivotedQr f = factor(a, b);
  if (rank_out) *rank_out = f.rank;
  return back_substitute(f, a.cols);
}

}  // namespace affinefence
