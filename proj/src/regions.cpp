#include "affinefence/regions.hpp"

#include <cmath>
#include <random>
#include <set>
#include <stdexcept>

#include "affinefence/qpsolver.hpp"

namespace affinefence {

namespace {

constexpr double kDuplicateTol = 1e-12;

bool rows_equal(const Matrix& m, std::size_t i, std::size_t k) {
  for (std::size_t j = 0; j < m.cols; ++j)
    if (std::abs(m(i, j) - m(k, j)) > kDuplicateTol) return false;
  return true;
}

}  // namespace

ConvexRegion make_region(std::string id, Matrix vertices,
                         std::optional<EqualityConstraint> equality,
                         std::optional<InequalityConstraint> inequality) {
  if (vertices.rows == 0 || vertices.cols == 0)
    throw std::invalid_argument("make_region: region needs at least one vertex");
  for (double v : vertices.data)
    if (!std::isfinite(v))
      throw std::invalid_argument("make_region: non-finite vertex coordinate");

  Matrix dedup(0, vertices.cols);
  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < vertices.rows; ++i) {
    bool duplicate = false;
    for (std::size_t k : kept)
      if (rows_equal(vertices, i, k)) {
        duplicate = true;
        break;
      }
    if (!duplicate) kept.push_back(i);
  }
  dedup = Matrix(kept.size(), vertices.cols);
  for (std::size_t r = 0; r < kept.size(); ++r)
    dedup.set_row(r, vertices.row(kept[r]));

  if (equality) {
    if (equality->e.rows != equality->f.size())
      throw DimensionError("make_region: equality rows != f length");
    if (equality->e.rows == 0)
      throw std::invalid_argument("make_region: empty equality constraint");
  }
  if (inequality) {
    if (inequality->c.rows != inequality->d.size())
      throw DimensionError("make_region: inequality rows != d length");
    if (inequality->c.rows == 0)
      throw std::invalid_argument("make_region: empty inequality constraint");
  }
  if (equality && inequality && equality->e.cols != inequality->c.cols)
    throw DimensionError("make_region: constraint output dims disagree");

  ConvexRegion region;
  region.id = std::move(id);
  region.vertices = std::move(dedup);
  region.equality = std::move(equality);
  region.inequality = std::move(inequality);
  return region;
}

RegionSet make_region_set(std::vector<ConvexRegion> regions) {
  std::set<std::string> ids;
  std::size_t dim = 0;
  for (const ConvexRegion& r : regions) {
    if (!ids.insert(r.id).second)
      throw std::invalid_argument("make_region_set: duplicate region id '" +
                                  r.id + "'");
    if (dim == 0) dim = r.dim();
    if (r.dim() != dim)
      throw DimensionError("make_region_set: mixed vertex dimensions");
  }
  return RegionSet{std::move(regions)};
}

Matrix make_interval(double a, double b) {
  if (!(a < b))
    throw std::invalid_argument("make_interval: need a < b, got [" +
                                std::to_string(a) + ", " + std::to_string(b) +
                                "]");
  Matrix m(2, 1);
  m(0, 0) = a;
  m(1, 0) = b;
  return m;
}

Matrix make_box(const Vector& lo, const Vector& hi) {
  if (lo.size() != hi.size() || lo.empty())
    throw DimensionError("make_box: lo/hi dimension mismatch");
  const std::size_t d = lo.size();
  if (d > 20)
    throw std::invalid_argument("make_box: dimension " + std::to_string(d) +
                                " would create " +
                                std::to_string(1ull << d) + " vertices");
  for (std::size_t j = 0; j < d; ++j)
    if (!(lo[j] < hi[j]))
      throw std::invalid_argument("make_box: need lo < hi in coordinate " +
                                  std::to_string(j));

  const std::size_t count = std::size_t{1} << d;
  Matrix vertices(count, d);
  for (std::size_t i = 0; i < count; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      const bool high = (i >> (d - 1 - j)) & 1u;
      vertices(i, j) = high ? hi[j] : lo[j];
    }
  return vertices;
}

std::pair<Matrix, Matrix> make_abutting_boxes(const Vector& lo,
                                              const Vector& hi,
                                              std::size_t axis, double gap) {
  if (axis >= lo.size())
    throw DimensionError("make_abutting_boxes: axis out of range");
  if (gap < 0.0)
    throw std::invalid_argument("make_abutting_boxes: negative gap");
  const double extent = hi[axis] - lo[axis];
  const double half = (extent - gap) / 2.0;

  Vector hi_a = hi, lo_b = lo;
  hi_a[axis] = lo[axis] + half;
  lo_b[axis] = hi[axis] - half;
  return {make_box(lo, hi_a), make_box(lo_b, hi)};
}

Matrix sample_interior(const ConvexRegion& region, std::size_t n,
                       std::uint64_t seed) {
  if (n == 0) throw std::invalid_argument("sample_interior: n must be >= 1");
  const std::size_t p = region.vertex_count(), d = region.dim();
  std::mt19937_64 rng(seed);
  std::exponential_distribution<double> expo(1.0);

  Matrix samples(n, d);
  Vector weights(p);
  for (std::size_t i = 0; i < n; ++i) {
    double total = 0.0;
    for (std::size_t k = 0; k < p; ++k) {
      weights[k] = expo(rng);
      total += weights[k];
    }
    for (std::size_t j = 0; j < d; ++j) {
      double x = 0.0;
      for (std::size_t k = 0; k < p; ++k)
        x += (weights[k] / total) * region.vertices(k, j);
      samples(i, j) = x;
    }
  }
  return samples;
}

double vertex_violation(const ConvexRegion& region,
                        const Matrix& outputs_at_vertices) {
  if (outputs_at_vertices.rows != region.vertex_count())
    throw DimensionError("vertex_violation: output rows != vertex count");
  return output_violation(region, outputs_at_vertices);
}

double output_violation(const ConvexRegion& region, const Matrix& outputs) {
  double worst = 0.0;
  for (std::size_t v = 0; v < outputs.rows; ++v) {
    const Vector y = outputs.row(v);
    if (region.equality) {
      if (region.equality->e.cols != y.size())
        throw DimensionError("vertex_violation: equality output dim mismatch");
      const Vector ey = matvec(region.equality->e, y);
      for (std::size_t r = 0; r < ey.size(); ++r)
        worst = std::max(worst, std::abs(ey[r] - region.equality->f[r]));
    }
    if (region.inequality) {
      if (region.inequality->c.cols != y.size())
        throw DimensionError("vertex_violation: inequality output dim mismatch");
      const Vector cy = matvec(region.inequality->c, y);
      for (std::size_t r = 0; r < cy.size(); ++r)
        worst = std::max(worst, cy[r] - region.inequality->d[r]);
    }
  }
  return worst;
}

namespace {

// Vertex set that is exactly the corner set of its own bounding box.
bool is_box(const Matrix& vertices, Vector& lo, Vector& hi) {
  const std::size_t d = vertices.cols;
  if (d > 20 || vertices.rows != (std::size_t{1} << d)) return false;
  lo = vertices.row(0);
  hi = vertices.row(0);
  for (std::size_t i = 1; i < vertices.rows; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      lo[j] = std::min(lo[j], vertices(i, j));
      hi[j] = std::max(hi[j], vertices(i, j));
    }
  for (std::size_t corner = 0; corner < vertices.rows; ++corner) {
    bool found = false;
    for (std::size_t i = 0; i < vertices.rows && !found; ++i) {
      bool match = true;
      for (std::size_t j = 0; j < d; ++j) {
        const double want = ((corner >> (d - 1 - j)) & 1u) ? hi[j] : lo[j];
        if (vertices(i, j) != want) {
          match = false;
          break;
        }
      }
      found = match;
    }
    if (!found) return false;
  }
  return true;
}

}  // namespace

bool region_contains(const ConvexRegion& region, const Vector& x) {
  if (x.size() != region.dim())
    throw DimensionError("region_contains: point dim != region dim");
  Vector lo, hi;
  if (is_box(region.vertices, lo, hi)) {
    for (std::size_t j = 0; j < x.size(); ++j)
      if (x[j] < lo[j] || x[j] > hi[j]) return false;
    return true;
  }
  // x in conv(rows of V) iff nonnegative weights reproducing (x, 1) exist
  const std::size_t p = region.vertex_count(), d = region.dim();
  Matrix e(d + 1, p);
  for (std::size_t k = 0; k < p; ++k) {
    for (std::size_t j = 0; j < d; ++j) e(j, k) = region.vertices(k, j);
    e(d, k) = 1.0;
  }
  Vector f(d + 1);
  for (std::size_t j = 0; j < d; ++j) f[j] = x[j];
  f[d] = 1.0;
  return nnls_residual(e, f) <= 1e-9 * (1.0 + norm2(x));
}

}  // namespace affinefence
