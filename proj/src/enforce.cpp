#include "affinefence/enforce.hpp"
#include <cstdio>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <utility>

#include "affinefence/parallel.hpp"

namespace affinefence {

namespace {

// Added to the QP right-hand side on top of the configured margin. The QP
// alone leaves active vertices at sign*z = margin exactly, where forward
// evaluation rounding (~1e-15) can flip the realized sign; 1e-12 dominates
// that noise while keeping separating weights for near-touching regions
// (gaps down to 10 eps) within ~1e3.
constexpr double kMarginGuard = 1e-12;

// Recomputes each vertex pre-activation with the shifted row using the same
// ascending-index accumulation as layer_preactivations, so acceptance here
// matches what verification will see bit for bit. Plus signs may sit exactly
// on the margin (z = margin maps to +1); minus signs must clear it strictly.
bool shifted_signs_hold(const Vector& w, double b, const Vector& u,
                        const Matrix& points, const Vector& signs,
                        double margin) {
  for (std::size_t i = 0; i < points.rows; ++i) {
    const double* v = points.row_ptr(i);
    double z = 0.0;
    for (std::size_t k = 0; k < points.cols; ++k) z += v[k] * (w[k] + u[k]);
    z += b + u.back();
    if (signs[i] > 0.0 ? (z < margin) : (z >= -margin)) return false;
  }
  return true;
}

// The exact minimal-norm shift zeroes every row component the constraints do
// not use, but recovering u from the dual residual leaves ~eps-scale residue
// there instead. When regions sit a few ulp apart that residue can exceed
// the entire feasibility window, so snap it to an exact zero and let the
// strict-sign check judge the result.
void snap_residue(const Vector& w, double b, Vector& u) {
  for (std::size_t k = 0; k + 1 < u.size(); ++k)
    if (std::abs(w[k] + u[k]) <= 1e-10 * (1.0 + std::abs(w[k])))
      u[k] = -w[k];
  if (std::abs(b + u.back()) <= 1e-10 * (1.0 + std::abs(b))) u.back() = -b;
}

// Rescales a strictly separating shifted row to widen its margins. Signs
// are scale invariant, so this only grows the clearance; it matters because
// a row whose realized margins are a few ulp leaves the next layer's vertex
// images separated by a few ulp as well, reviving the same near-degenerate
// QP one level up. The scale stops at the target margin and also at a hard
// cap on the largest vertex pre-activation: oversized activations inflate
// both the next layer's rounding noise (taking the widening back) and the
// network output, which the task loss then has to climb down from. The cap
// keeps the widened gap an order of magnitude above the noise floor the
// unscaled coordinates set while distorting the function as little as the
// gap allows. Returns false when no growth is possible.
constexpr double kActivationCap = 50.0;

bool scale_to_margin(const Vector& w, double b, Vector& u,
                     const Matrix& points, const Vector& signs,
                     double target) {
  double mmin = std::numeric_limits<double>::infinity();
  double zmax = 0.0;
  for (std::size_t i = 0; i < points.rows; ++i) {
    const double* v = points.row_ptr(i);
    double z = 0.0;
    for (std::size_t k = 0; k < points.cols; ++k) z += v[k] * (w[k] + u[k]);
    z += b + u.back();
    mmin = std::min(mmin, signs[i] * z);
    zmax = std::max(zmax, std::abs(z));
  }
  if (!(mmin > 0.0) || !(zmax > 0.0)) return false;
  const double kappa = std::min(2.0 * target / mmin, kActivationCap / zmax);
  if (!(kappa > 1.0)) return false;
  for (std::size_t k = 0; k + 1 < u.size(); ++k)
    u[k] = kappa * (w[k] + u[k]) - w[k];
  u.back() = kappa * (b + u.back()) - b;
  return true;
}

// Last resort when no bias value can restore strict signs: the violated
// rows need opposite pushes, which a coordinate whose sign agrees with the
// demanded side at every vertex can deliver. Such a coordinate exists
// whenever an earlier layer already separates the regions, and stepping the
// row's weight along it widens every margin at once, so escalating the step
// is monotone and safe. Returns false when no aligned coordinate exists.
bool nudge_aligned(const Vector& w, double b, Vector& u, const Matrix& points,
                   const Vector& signs) {
  std::size_t best_k = points.cols;
  double best_score = 0.0, best_sigma = 1.0;
  for (std::size_t k = 0; k < points.cols; ++k) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (std::size_t i = 0; i < points.rows; ++i) {
      const double t = signs[i] * points(i, k);
      lo = std::min(lo, t);
      hi = std::max(hi, t);
    }
    if (lo > best_score) {
      best_k = k;
      best_score = lo;
      best_sigma = 1.0;
    }
    if (-hi > best_score) {
      best_k = k;
      best_score = -hi;
      best_sigma = -1.0;
    }
  }
  if (best_k == points.cols) return false;
  double worst = 0.0;
  for (std::size_t i = 0; i < points.rows; ++i) {
    const double* v = points.row_ptr(i);
    double z = 0.0;
    for (std::size_t k = 0; k < points.cols; ++k) z += v[k] * (w[k] + u[k]);
    z += b + u.back();
    worst = std::max(worst, -signs[i] * z);
  }
  double eta = 2.0 * std::max(worst, 1e-17) / best_score;
  for (int step = 0; step < 40; ++step, eta *= 8.0) {
    Vector cand = u;
    cand[best_k] += best_sigma * eta;
    if (shifted_signs_hold(w, b, cand, points, signs, 0.0)) {
      u = std::move(cand);
      return true;
    }
  }
  return false;
}

// Rows whose vertex images nearly coincide but demand opposite signs leave
// the least-distance system too ill-conditioned for the dual solve: the
// separating directions sit a dozen orders of magnitude below the other
// coordinates, and once training drift gives each coincident cluster its own
// offset the solver has to resolve both scales at once. Build a shift
// directly instead: cancel each conflicting cluster's mean preactivation
// through the well-scaled coordinates (a tiny least-norm equality solve),
// then push along an aligned coordinate until every vertex clears its side.
bool build_cluster_shift(const Vector& w, double b, Vector& u,
                         const Matrix& points, const Vector& signs) {
  const std::size_t nrows = points.rows;
  const std::size_t dim = points.cols;
  std::vector<std::size_t> parent(nrows);
  for (std::size_t i = 0; i < nrows; ++i) parent[i] = i;
  auto find = [&](std::size_t i) {
    while (parent[i] != i) i = parent[i] = parent[parent[i]];
    return i;
  };
  for (std::size_t i = 0; i < nrows; ++i)
    for (std::size_t j = i + 1; j < nrows; ++j) {
      bool close = true;
      for (std::size_t k = 0; k < dim && close; ++k) {
        const double ai = points(i, k), aj = points(j, k);
        if (std::abs(ai - aj) >
            1e-9 * (1.0 + std::max(std::abs(ai), std::abs(aj))))
          close = false;
      }
      if (close) parent[find(i)] = find(j);
    }
  // mean coordinates (plus bias column) and mean preactivation per cluster
  // that demands both signs
  std::vector<Vector> centers;
  Vector offsets;
  for (std::size_t r = 0; r < nrows; ++r) {
    if (find(r) != r) continue;
    bool plus = false, minus = false;
    Vector center(dim + 1, 0.0);
    double zbar = 0.0, count = 0.0;
    for (std::size_t i = 0; i < nrows; ++i) {
      if (find(i) != r) continue;
      (signs[i] > 0.0 ? plus : minus) = true;
      const double* v = points.row_ptr(i);
      double z = b;
      for (std::size_t k = 0; k < dim; ++k) {
        center[k] += v[k];
        z += v[k] * w[k];
      }
      zbar += z;
      count += 1.0;
    }
    if (!(plus && minus)) continue;
    for (std::size_t k = 0; k < dim; ++k) center[k] /= count;
    center[dim] = 1.0;
    centers.push_back(std::move(center));
    offsets.push_back(-zbar / count);
  }
  if (centers.empty()) return false;
  // least-norm u with center_g . u = offset_g: u = B^T (B B^T)^{-1} offset
  const std::size_t m = centers.size();
  Matrix gram(m, m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      double dot = 0.0;
      for (std::size_t k = 0; k <= dim; ++k) dot += centers[i][k] * centers[j][k];
      gram(i, j) = dot;
    }
  Vector lam = offsets;
  for (std::size_t col = 0; col < m; ++col) {  // unpivoted gauss, m is tiny
    std::size_t piv = col;
    for (std::size_t i = col + 1; i < m; ++i)
      if (std::abs(gram(i, col)) > std::abs(gram(piv, col))) piv = i;
    if (gram(piv, col) == 0.0) return false;
    if (piv != col) {
      for (std::size_t k = 0; k < m; ++k)
        std::swap(gram(col, k), gram(piv, k));
      std::swap(lam[col], lam[piv]);
    }
    for (std::size_t i = col + 1; i < m; ++i) {
      const double f = gram(i, col) / gram(col, col);
      for (std::size_t k = col; k < m; ++k) gram(i, k) -= f * gram(col, k);
      lam[i] -= f * lam[col];
    }
  }
  for (std::size_t col = m; col-- > 0;) {
    for (std::size_t k = col + 1; k < m; ++k)
      lam[col] -= gram(col, k) * lam[k];
    lam[col] /= gram(col, col);
  }
  std::fill(u.begin(), u.end(), 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t k = 0; k <= dim; ++k) u[k] += lam[i] * centers[i][k];
  if (shifted_signs_hold(w, b, u, points, signs, 0.0)) return true;
  return nudge_aligned(w, b, u, points, signs);
}

// Minimal bias tweak that puts every vertex strictly on its assigned side
// after the weight part of u is fixed. With margin zero and z evaluated as
// fl(S_i + B), rounding is monotone and fl(S_i - S_i) = 0, so the realized
// bias B works iff B >= -S_i at every plus vertex and B < -S_i at every
// minus vertex: an exact interval of doubles. Picks the value closest to the
// current bias and rounds u.back() so the applied fl(b + u.back()) lands
// inside. Returns false when the float interval is empty.
bool repair_bias(const Vector& w, double b, Vector& u, const Matrix& points,
                 const Vector& signs) {
  double lo = std::numeric_limits<double>::lowest();
  double hi = std::numeric_limits<double>::max();
  for (std::size_t i = 0; i < points.rows; ++i) {
    const double* v = points.row_ptr(i);
    double s = 0.0;
    for (std::size_t k = 0; k < points.cols; ++k) s += v[k] * (w[k] + u[k]);
    if (signs[i] > 0.0)
      lo = std::max(lo, -s);
    else
      hi = std::min(
          hi, std::nextafter(-s, std::numeric_limits<double>::lowest()));
  }
  if (lo > hi) return false;
  const double target = std::clamp(b + u.back(), lo, hi);
  u.back() = target - b;
  for (int step = 0; step < 4; ++step) {
    const double realized = b + u.back();
    if (realized >= lo && realized <= hi) return true;
    u.back() = std::nextafter(u.back(), realized < lo
                                            ? std::numeric_limits<double>::max()
                                            : std::numeric_limits<double>::lowest());
  }
  return false;
}

void check_shapes(const MlpNetwork& net, const RegionSet& regions,
                  const SignMap& map, const char* who) {
  if (net.layers.size() < 2)
    throw DimensionError(std::string(who) + ": network has no hidden layer");
  if (map.patterns.size() != regions.regions.size())
    throw DimensionError(std::string(who) + ": sign map region count " +
                         std::to_string(map.patterns.size()) + " != " +
                         std::to_string(regions.regions.size()));
  for (std::size_t i = 0; i < regions.regions.size(); ++i) {
    if (regions.regions[i].dim() != net.input_dim)
      throw DimensionError(std::string(who) + ": region '" +
                           regions.regions[i].id + "' dim != input dim");
    if (map.patterns[i].size() != net.hidden_layer_count())
      throw DimensionError(std::string(who) + ": pattern depth mismatch");
    for (std::size_t l = 0; l + 1 < net.layers.size(); ++l)
      if (map.patterns[i][l].size() != net.layers[l].biases.size())
        throw DimensionError(std::string(who) + ": pattern width mismatch");
  }
}

// Stacks every region's current layer inputs into one matrix and records the
// region owning each row.
struct StackedVertices {
  Matrix points;
  std::vector<std::size_t> region_of_row;
};

StackedVertices stack(const std::vector<Matrix>& per_region) {
  std::size_t total = 0, cols = 0;
  for (const Matrix& m : per_region) {
    total += m.rows;
    cols = m.cols;
  }
  StackedVertices s;
  s.points = Matrix(total, cols);
  s.region_of_row.resize(total);
  std::size_t row = 0;
  for (std::size_t i = 0; i < per_region.size(); ++i)
    for (std::size_t v = 0; v < per_region[i].rows; ++v, ++row) {
      s.points.set_row(row, per_region[i].row(v));
      s.region_of_row[row] = i;
    }
  return s;
}

}  // namespace

std::pair<MlpNetwork, EnforcementReport> enforce_signs(
    const MlpNetwork& net, const RegionSet& regions, const SignMap& map,
    const EnforceConfig& cfg) {
  check_shapes(net, regions, map, "enforce_signs");
  if (cfg.margin < 0.0)
    throw std::invalid_argument("enforce_signs: margin must be >= 0");
  if (!(cfg.qp_tolerance > 0.0))
    throw std::invalid_argument("enforce_signs: qp_tolerance must be > 0");

  MlpNetwork updated = net;
  EnforcementReport report;

  std::vector<Matrix> cur;
  cur.reserve(regions.regions.size());
  for (const ConvexRegion& r : regions.regions) cur.push_back(r.vertices);

  const double delta = cfg.margin + kMarginGuard;
  const std::size_t hidden = net.hidden_layer_count();

  for (std::size_t l = 0; l < hidden; ++l) {
    const auto t0 = std::chrono::steady_clock::now();
    const StackedVertices stacked = stack(cur);
    const LayerParams& layer = updated.layers[l];
    const std::size_t width = layer.biases.size();

    std::vector<Vector> shifts(width);
    std::vector<QpStatus> statuses(width, QpStatus::optimal);
    std::vector<double> norms(width, 0.0);

    const int jobs = max_jobs();
#pragma omp parallel for schedule(dynamic) num_threads(jobs) if (jobs > 1)
    for (long long nn = 0; nn < static_cast<long long>(width); ++nn) {
      const std::size_t n = static_cast<std::size_t>(nn);
      Vector signs(stacked.points.rows);
      for (std::size_t row = 0; row < signs.size(); ++row)
        signs[row] = map.patterns[stacked.region_of_row[row]][l][n];
      const Vector w = layer.weights.row(n);
      const LeastDistanceQp qp =
          build_neuron_qp(w, layer.biases[n], stacked.points, signs, delta);
      QpSolution sol =
          solve_least_distance(qp, cfg.qp_tolerance, cfg.qp_max_iter);
      if (sol.status != QpStatus::optimal) {
        // Opposite signs across a gap a few ulp wide price the separating
        // weight at ~guard/gap, and the dual solve can misread that system
        // as infeasible. Retry without the guard; the bare solution leaves
        // active vertices at the margin exactly, so only keep it when the
        // realized signs still come out right in floating point.
        const LeastDistanceQp bare = build_neuron_qp(
            w, layer.biases[n], stacked.points, signs, cfg.margin);
        QpSolution retry =
            solve_least_distance(bare, cfg.qp_tolerance, cfg.qp_max_iter);
        if (retry.status != QpStatus::optimal) {  // TEMP DUMP
          char path[64];
          std::snprintf(path, sizeof path, "/tmp/fail_bare_L%zu_N%zu.txt", l,
                        n);
          FILE* f = std::fopen(path, "w");
          std::fprintf(f, "retry status %d\n", static_cast<int>(retry.status));
          std::fprintf(f, "b % .17e\n", layer.biases[n]);
          for (std::size_t k = 0; k < w.size(); ++k)
            std::fprintf(f, "w %zu % .17e\n", k, w[k]);
          for (std::size_t i = 0; i < stacked.points.rows; ++i) {
            double z = layer.biases[n];
            for (std::size_t k = 0; k < stacked.points.cols; ++k)
              z += stacked.points(i, k) * w[k];
            std::fprintf(f, "row %zu s %+.0f z % .6e\n", i, signs[i], z);
            for (std::size_t k = 0; k < stacked.points.cols; ++k)
              std::fprintf(f, " %zu % .17e\n", k, stacked.points(i, k));
          }
          std::fclose(f);
        }
        if (retry.status == QpStatus::optimal && cfg.margin == 0.0) {
          // Chain: clear the eps-scale residue off unused components first,
          // since the snapped row evaluates exactly and scales to far wider
          // margins than the raw one; fall back to the raw solution, then to
          // a bias correction inside its exact float interval. Once signs
          // hold strictly, grow the row toward the guard margin so the next
          // layer's vertex images keep a usable gap.
          Vector snapped = retry.u;
          snap_residue(w, layer.biases[n], snapped);
          bool strict = true;
          if (shifted_signs_hold(w, layer.biases[n], snapped, stacked.points,
                                 signs, 0.0)) {
            retry.u = std::move(snapped);
          } else if (shifted_signs_hold(w, layer.biases[n], retry.u,
                                        stacked.points, signs, 0.0)) {
            // keep the raw solution
          } else if (repair_bias(w, layer.biases[n], snapped, stacked.points,
                                 signs) &&
                     shifted_signs_hold(w, layer.biases[n], snapped,
                                        stacked.points, signs, 0.0)) {
            retry.u = std::move(snapped);
          } else if (nudge_aligned(w, layer.biases[n], retry.u, stacked.points,
                                   signs)) {
            // nudged in place, already strictly valid
          } else {
            strict = false;
          }
          if (!strict) {  // TEMP DUMP
            char path[64];
            std::snprintf(path, sizeof path, "/tmp/fail_strict_L%zu_N%zu.txt",
                          l, n);
            FILE* f = std::fopen(path, "w");
            std::fprintf(f, "b % .17e\n", layer.biases[n]);
            for (std::size_t k = 0; k < w.size(); ++k)
              std::fprintf(f, "w %zu % .17e u % .17e\n", k, w[k], retry.u[k]);
            std::fprintf(f, "ub % .17e\n", retry.u.back());
            for (std::size_t i = 0; i < stacked.points.rows; ++i) {
              double z = 0.0;
              for (std::size_t k = 0; k < stacked.points.cols; ++k)
                z += stacked.points(i, k) * (w[k] + retry.u[k]);
              z += layer.biases[n] + retry.u.back();
              std::fprintf(f, "row %zu s %+.0f z % .6e\n", i, signs[i], z);
              for (std::size_t k = 0; k < stacked.points.cols; ++k)
                std::fprintf(f, " %zu % .17e\n", k, stacked.points(i, k));
            }
            std::fclose(f);
          }
          if (strict) {
            Vector scaled = retry.u;
            if (scale_to_margin(w, layer.biases[n], scaled, stacked.points,
                                signs, delta) &&
                shifted_signs_hold(w, layer.biases[n], scaled, stacked.points,
                                   signs, 0.0))
              retry.u = std::move(scaled);
            sol = std::move(retry);
          }
        }
        if (sol.status != QpStatus::optimal && cfg.margin == 0.0) {
          Vector built(w.size() + 1, 0.0);
          if (build_cluster_shift(w, layer.biases[n], built, stacked.points,
                                  signs) &&
              shifted_signs_hold(w, layer.biases[n], built, stacked.points,
                                 signs, 0.0)) {
            Vector scaled = built;
            if (scale_to_margin(w, layer.biases[n], scaled, stacked.points,
                                signs, delta) &&
                shifted_signs_hold(w, layer.biases[n], scaled, stacked.points,
                                   signs, 0.0))
              built = std::move(scaled);
            sol.u = std::move(built);
            sol.status = QpStatus::optimal;
          }
        }
      }
      statuses[n] = sol.status;
      if (sol.status == QpStatus::optimal) {
        norms[n] = norm2(sol.u);
        shifts[n] = sol.u;
      }
    }

    for (std::size_t n = 0; n < width; ++n)
      if (statuses[n] != QpStatus::optimal)
        report.qp_failures.push_back({l, n, statuses[n]});
    report.adjustment_norms.push_back(norms);
    report.layer_seconds.push_back(
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count());
    if (!report.qp_failures.empty()) {
      report.adjustment_norms.clear();
      report.worst_margin_deficit =
          -verify_margins(net, regions, map, cfg.margin);
      return {net, report};
    }

    LayerParams& target = updated.layers[l];
    double layer_shift2 = 0.0;
    for (std::size_t n = 0; n < width; ++n) {
      const Vector& u = shifts[n];
      for (std::size_t k = 0; k + 1 < u.size(); ++k) target.weights(n, k) += u[k];
      target.biases[n] += u.back();
      layer_shift2 += norms[n] * norms[n];
    }
    report.total_shift += layer_shift2;

    for (Matrix& points : cur)
      points = activate(layer_preactivations(target, points),
                        updated.activation_slope);
  }

  report.total_shift = std::sqrt(report.total_shift);
  report.worst_margin_deficit =
      -verify_margins(updated, regions, map, cfg.margin);
  return {std::move(updated), std::move(report)};
}

BiasOnlyResult enforce_bias_only(const MlpNetwork& net,
                                 const RegionSet& regions, const SignMap& map,
                                 double margin) {
  check_shapes(net, regions, map, "enforce_bias_only");

  BiasOnlyResult result;
  result.net = net;

  std::vector<Matrix> cur;
  cur.reserve(regions.regions.size());
  for (const ConvexRegion& r : regions.regions) cur.push_back(r.vertices);

  for (std::size_t l = 0; l + 1 < net.layers.size(); ++l) {
    const StackedVertices stacked = stack(cur);
    LayerParams& layer = result.net.layers[l];
    for (std::size_t n = 0; n < layer.biases.size(); ++n) {
      Vector signs(stacked.points.rows);
      for (std::size_t row = 0; row < signs.size(); ++row)
        signs[row] = map.patterns[stacked.region_of_row[row]][l][n];
      const BiasFeasibility fb = bias_feasible(
          layer.weights.row(n), layer.biases[n], stacked.points, signs, margin);
      if (!fb.feasible) {
        result.feasible = false;
        result.net = net;
        result.layer = l;
        result.neuron = n;
        result.lower = fb.lower;
        result.upper = fb.upper;
        return result;
      }
      layer.biases[n] = fb.new_bias;
    }
    for (Matrix& points : cur)
      points = activate(layer_preactivations(layer, points),
                        result.net.activation_slope);
  }
  result.feasible = true;
  return result;
}

double verify_margins(const MlpNetwork& net, const RegionSet& regions,
                      const SignMap& map, double margin) {
  check_shapes(net, regions, map, "verify_margins");

  double worst = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < regions.regions.size(); ++i) {
    Matrix points = regions.regions[i].vertices;
    for (std::size_t l = 0; l + 1 < net.layers.size(); ++l) {
      const Matrix z = layer_preactivations(net.layers[l], points);
      for (std::size_t v = 0; v < z.rows; ++v)
        for (std::size_t n = 0; n < z.cols; ++n)
          worst = std::min(worst,
                           map.patterns[i][l][n] * z(v, n) - margin);
      points = activate(z, net.activation_slope);
    }
  }
  return worst;
}

}  // namespace affinefence
