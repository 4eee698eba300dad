#include "affinefence/qpsolver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace affinefence {

LeastDistanceQp build_neuron_qp(const Vector& w, double b,
                                const Matrix& propagated_vertices,
                                const Vector& signs_per_vertex, double delta) {
  const std::size_t m = propagated_vertices.rows;
  const std::size_t d = propagated_vertices.cols;
  if (w.size() != d)
    throw DimensionError("build_neuron_qp: weight length != vertex dim");
  if (signs_per_vertex.size() != m)
    throw DimensionError("build_neuron_qp: one sign per vertex row required");
  if (m == 0) throw DimensionError("build_neuron_qp: no vertices");

  LeastDistanceQp qp;
  qp.a = Matrix(m, d + 1);
  qp.c = Vector(m);
  for (std::size_t j = 0; j < m; ++j) {
    const double s = signs_per_vertex[j];
    if (s != 1.0 && s != -1.0)
      throw std::invalid_argument("build_neuron_qp: signs must be +1 or -1");
    double z = b;
    for (std::size_t k = 0; k < d; ++k) {
      qp.a(j, k) = s * propagated_vertices(j, k);
      z += w[k] * propagated_vertices(j, k);
    }
    qp.a(j, d) = s;
    qp.c[j] = delta - s * z;
  }
  return qp;
}

namespace {

struct NnlsState {
  Vector lambda;
  std::size_t iterations = 0;
  bool converged = false;
};

// Lawson-Hanson NNLS: min ||e*lambda - f||, lambda >= 0. Passive-set least
// squares subproblems go through the pivoted QR solver. A candidate column
// whose subproblem coefficient comes back nonpositive is suppressed until
// the passive set next changes, which breaks the classic degenerate cycle.
NnlsState nnls(const Matrix& e, const Vector& f, std::size_t max_iter) {
  const std::size_t n = e.rows, m = e.cols;
  NnlsState st;
  st.lambda = Vector(m, 0.0);

  Vector colnorm(m, 0.0);
  for (std::size_t j = 0; j < m; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += e(i, j) * e(i, j);
    colnorm[j] = std::sqrt(s);
  }

  std::vector<bool> passive(m, false), suppressed(m, false);
  std::vector<std::size_t> pset;

  auto solve_passive = [&](Vector& z) {
    Matrix ep(n, pset.size());
    for (std::size_t k = 0; k < pset.size(); ++k)
      for (std::size_t i = 0; i < n; ++i) ep(i, k) = e(i, pset[k]);
    Matrix rhs(n, 1);
    for (std::size_t i = 0; i < n; ++i) rhs(i, 0) = f[i];
    std::size_t rank = 0;
    Matrix sol = least_squares_basic(ep, rhs, &rank);
    z.assign(pset.size(), 0.0);
    for (std::size_t k = 0; k < pset.size(); ++k) z[k] = sol(k, 0);
  };

  while (st.iterations < max_iter) {
    // negative gradient w = e^T (f - e*lambda)
    Vector rt(n);
    for (std::size_t i = 0; i < n; ++i) {
      double s = f[i];
      for (std::size_t k = 0; k < pset.size(); ++k)
        s -= e(i, pset[k]) * st.lambda[pset[k]];
      rt[i] = s;
    }
    const double rtnorm = norm2(rt);

    std::size_t enter = m;
    double best = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      if (passive[j] || suppressed[j]) continue;
      double wj = 0.0;
      for (std::size_t i = 0; i < n; ++i) wj += e(i, j) * rt[i];
      const double thr = 100.0 * std::numeric_limits<double>::epsilon() *
                         colnorm[j] * rtnorm;
      if (wj > thr && (enter == m || wj > best)) {
        enter = j;
        best = wj;
      }
    }
    if (enter == m) {
      st.converged = true;
      return st;
    }

    passive[enter] = true;
    pset.push_back(enter);

    bool first_pass = true;
    for (;;) {
      if (st.iterations++ >= max_iter) return st;
      Vector z;
      solve_passive(z);

      if (first_pass) {
        const std::size_t k_enter = pset.size() - 1;
        if (z[k_enter] <= 0.0) {
          // entering column unusable at this passive set; back out
          passive[enter] = false;
          suppressed[enter] = true;
          pset.pop_back();
          break;
        }
        first_pass = false;
      }

      double alpha = 1.0;
      for (std::size_t k = 0; k < pset.size(); ++k) {
        if (z[k] > 0.0) continue;
        const double lj = st.lambda[pset[k]];
        alpha = std::min(alpha, lj / (lj - z[k]));
      }
      if (alpha >= 1.0) {
        for (std::size_t k = 0; k < pset.size(); ++k)
          st.lambda[pset[k]] = z[k];
        std::fill(suppressed.begin(), suppressed.end(), false);
        break;
      }
      for (std::size_t k = 0; k < pset.size(); ++k) {
        const std::size_t j = pset[k];
        st.lambda[j] += alpha * (z[k] - st.lambda[j]);
      }
      for (std::size_t k = pset.size(); k-- > 0;) {
        const std::size_t j = pset[k];
        if (z[k] <= 0.0 && st.lambda[j] <= 0.0) {
          st.lambda[j] = 0.0;
          passive[j] = false;
          pset.erase(pset.begin() + static_cast<std::ptrdiff_t>(k));
        }
      }
      std::fill(suppressed.begin(), suppressed.end(), false);
    }
  }
  return st;
}

}  // namespace

QpSolution solve_least_distance(const LeastDistanceQp& qp, double tol,
                                std::size_t max_iter) {
  const std::size_t m = qp.a.rows, q = qp.a.cols;
  if (m == 0 || q == 0)
    throw DimensionError("solve_least_distance: empty constraint system");
  if (qp.c.size() != m)
    throw DimensionError("solve_least_distance: rhs length != row count");
  if (!(tol > 0.0))
    throw std::invalid_argument("solve_least_distance: tol must be positive");

  // duplicate rows (shared box vertices) are dropped for conditioning
  std::vector<std::size_t> kept;
  for (std::size_t j = 0; j < m; ++j) {
    bool dup = false;
    for (std::size_t k : kept) {
      if (qp.c[k] != qp.c[j]) continue;
      bool same = true;
      for (std::size_t col = 0; col < q; ++col)
        if (qp.a(k, col) != qp.a(j, col)) {
          same = false;
          break;
        }
      if (same) {
        dup = true;
        break;
      }
    }
    if (!dup) kept.push_back(j);
  }

  // dual NNLS system: E = [A^T; c^T], f = e_{q+1}
  Matrix e(q + 1, kept.size());
  for (std::size_t k = 0; k < kept.size(); ++k) {
    for (std::size_t col = 0; col < q; ++col) e(col, k) = qp.a(kept[k], col);
    e(q, k) = qp.c[kept[k]];
  }
  Vector f(q + 1, 0.0);
  f[q] = 1.0;

  NnlsState st = nnls(e, f, max_iter);

  QpSolution sol;
  sol.iterations = st.iterations;
  sol.multipliers = Vector(m, 0.0);

  Vector r(q + 1, 0.0);
  for (std::size_t i = 0; i <= q; ++i) {
    double s = -f[i];
    for (std::size_t k = 0; k < kept.size(); ++k)
      s += e(i, k) * st.lambda[k];
    r[i] = s;
  }
  const double rnorm = norm2(r);

  double efro = 0.0, lnorm = 0.0;
  for (double v : e.data) efro += v * v;
  for (double v : st.lambda) lnorm += v * v;
  const double infeas_tol =
      1e-12 * (1.0 + std::sqrt(efro) * std::sqrt(lnorm));

  if (st.converged && rnorm <= infeas_tol) {
    sol.status = QpStatus::infeasible;
    sol.u = Vector(q, 0.0);
    double cl = 0.0;
    for (std::size_t k = 0; k < kept.size(); ++k)
      cl += qp.c[kept[k]] * st.lambda[k];
    const double scale = cl > 0.0 ? cl : 1.0;
    for (std::size_t k = 0; k < kept.size(); ++k)
      sol.multipliers[kept[k]] = st.lambda[k] / scale;
    sol.max_constraint_residual = *std::max_element(qp.c.begin(), qp.c.end());
    return sol;
  }

  sol.u = Vector(q, 0.0);
  if (r[q] < 0.0) {
    for (std::size_t i = 0; i < q; ++i) sol.u[i] = -r[i] / r[q];
  }

  double worst = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < m; ++j) {
    double aju = 0.0;
    for (std::size_t col = 0; col < q; ++col) aju += qp.a(j, col) * sol.u[col];
    worst = std::max(worst, qp.c[j] - aju);
  }
  sol.max_constraint_residual = worst;

  const double denom = -r[q];  // equals 1 - c^T lambda, positive when feasible
  if (denom > 0.0)
    for (std::size_t k = 0; k < kept.size(); ++k)
      sol.multipliers[kept[k]] = st.lambda[k] / denom;

  sol.status = (st.converged && worst <= tol) ? QpStatus::optimal
                                              : QpStatus::iteration_limit;
  return sol;
}

double nnls_residual(const Matrix& e, const Vector& f, std::size_t max_iter) {
  if (e.rows != f.size())
    throw DimensionError("nnls_residual: rhs length != row count");
  const NnlsState st = nnls(e, f, max_iter);
  Vector r(e.rows);
  for (std::size_t i = 0; i < e.rows; ++i) {
    double s = -f[i];
    for (std::size_t j = 0; j < e.cols; ++j) s += e(i, j) * st.lambda[j];
    r[i] = s;
  }
  return norm2(r);
}

BiasFeasibility bias_feasible(const Vector& w, double b,
                              const Matrix& propagated_vertices,
                              const Vector& signs_per_vertex, double delta) {
  const std::size_t m = propagated_vertices.rows;
  if (w.size() != propagated_vertices.cols)
    throw DimensionError("bias_feasible: weight length != vertex dim");
  if (signs_per_vertex.size() != m)
    throw DimensionError("bias_feasible: one sign per vertex row required");

  BiasFeasibility out;
  out.lower = -std::numeric_limits<double>::infinity();
  out.upper = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < m; ++j) {
    double t = 0.0;
    for (std::size_t k = 0; k < w.size(); ++k)
      t += w[k] * propagated_vertices(j, k);
    if (signs_per_vertex[j] > 0.0)
      out.lower = std::max(out.lower, delta - t);
    else
      out.upper = std::min(out.upper, -delta - t);
  }
  out.feasible = out.lower <= out.upper;
  if (out.feasible) out.new_bias = std::clamp(b, out.lower, out.upper);
  return out;
}

}  // namespace affinefence
