#pragma once

#include <cstddef>
#include <vector>

#include "affinefence/linalg.hpp"

namespace affinefence {

// min ||u||^2 subject to a*u >= c, the minimal-norm parameter shift for one
// neuron. u = (delta_w, delta_b) has length q = in_dim + 1.
struct LeastDistanceQp {
  Matrix a;  // m x q
  Vector c;  // m
};

enum class QpStatus { optimal, infeasible, iteration_limit };

struct QpSolution {
  Vector u;
  QpStatus status = QpStatus::iteration_limit;
  // max over rows of c_j - a_j.u; <= tol when optimal, negative slack counts
  double max_constraint_residual = 0.0;
  std::size_t iterations = 0;
  // status=optimal: KKT multipliers mu >= 0 with u = a^T mu and
  // complementary slackness. status=infeasible: Farkas certificate y >= 0
  // with a^T y = 0 and c^T y = 1.
  Vector multipliers;
};

// Constraint system for one neuron over the stacked vertices of all regions:
// row j of A is s_j * (v_j^T, 1) and c_j = delta - s_j * (w.v_j + b), so
// a_j.u >= c_j is exactly s_j((w+dw).v_j + b+db) >= delta.
LeastDistanceQp build_neuron_qp(const Vector& w, double b,
                                const Matrix& propagated_vertices,
                                const Vector& signs_per_vertex, double delta);

// Lawson-Hanson least-distance solve: the QP dual is a nonnegative least
// squares problem on E = [A^T; c^T], f = e_{q+1}, solved by an active-set
// method with QR subproblem solves. A vanishing NNLS residual certifies
// infeasibility (the multiplier vector is then a Farkas certificate);
// otherwise u is recovered from the residual and is the unique minimizer.
QpSolution solve_least_distance(const LeastDistanceQp& qp, double tol = 1e-10,
                                std::size_t max_iter = 100000);

// min ||e*lambda - f|| over lambda >= 0 (the solver's active-set core).
// A near-zero residual on e = [V^T; 1^T], f = (x, 1) certifies x as a convex
// combination of the rows of V, the membership test used when filtering
// training data out of constrained regions.
double nnls_residual(const Matrix& e, const Vector& f,
                     std::size_t max_iter = 10000);

// Feasibility of the bias-only variant: weights frozen, one free bias. The
// per-vertex constraints become intervals on the resulting bias; their
// intersection decides feasibility and the bounds are reported either way.
struct BiasFeasibility {
  bool feasible = false;
  double lower = 0.0;  // resulting bias must be >= lower
  double upper = 0.0;  // and <= upper; lower > upper when infeasible
  double new_bias = 0.0;  // minimal-shift feasible bias (valid when feasible)
};

BiasFeasibility bias_feasible(const Vector& w, double b,
                              const Matrix& propagated_vertices,
                              const Vector& signs_per_vertex, double delta);

}  // namespace affinefence
