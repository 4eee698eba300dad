#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "affinefence/linalg.hpp"

namespace affinefence {

// Affine equality constraint on the network output: e * y = f.
struct EqualityConstraint {
  Matrix e;  // rows x K
  Vector f;  // rows

  bool operator==(const EqualityConstraint&) const = default;
};

// Affine inequality constraint on the network output: c * y <= d.
struct InequalityConstraint {
  Matrix c;  // rows x K
  Vector d;  // rows

  bool operator==(const InequalityConstraint&) const = default;
};

// Convex polytope in vertex representation with the output constraints that
// must hold over it. Vertices are deduplicated on construction; regions in a
// set are assumed pairwise disjoint (not checked).
struct ConvexRegion {
  std::string id;
  Matrix vertices;  // P x D, one vertex per row
  std::optional<EqualityConstraint> equality;
  std::optional<InequalityConstraint> inequality;

  std::size_t vertex_count() const { return vertices.rows; }
  std::size_t dim() const { return vertices.cols; }
  bool has_constraints() const {
    return equality.has_value() || inequality.has_value();
  }

  bool operator==(const ConvexRegion&) const = default;
};

struct RegionSet {
  std::vector<ConvexRegion> regions;

  bool operator==(const RegionSet&) const = default;
};

// Builds a region from raw vertices: drops duplicates (pairwise inf-norm
// distance <= 1e-12), checks constraint shapes agree, requires at least one
// vertex. Throws on violations.
ConvexRegion make_region(std::string id, Matrix vertices,
                         std::optional<EqualityConstraint> equality = {},
                         std::optional<InequalityConstraint> inequality = {});

// Validates id uniqueness and per-region invariants.
RegionSet make_region_set(std::vector<ConvexRegion> regions);

// 2x1 vertex matrix of the interval endpoints; requires a < b.
Matrix make_interval(double a, double b);

// All 2^D corners of the axis-aligned box, in counting order with the first
// coordinate as the most significant bit: (lo,lo), (lo,hi), (hi,lo), (hi,hi)
// for D = 2. Requires lo < hi componentwise and D <= 20.
Matrix make_box(const Vector& lo, const Vector& hi);

// Splits the box in two congruent halves separated by `gap` along `axis`.
// The default gap is ten times machine epsilon, the tightest separation the
// enforcement step is expected to survive.
std::pair<Matrix, Matrix> make_abutting_boxes(
    const Vector& lo, const Vector& hi, std::size_t axis,
    double gap = 10.0 * std::numeric_limits<double>::epsilon());

// n random convex combinations of the vertices (exponential draws normalized
// to sum 1, a symmetric Dirichlet scheme). Deterministic given seed.
Matrix sample_interior(const ConvexRegion& region, std::size_t n,
                       std::uint64_t seed);

// Worst violation of the region's constraints over the given vertex outputs:
// max over rows of |e*y - f| and max(0, c*y - d). Zero when no constraints
// are attached.
double vertex_violation(const ConvexRegion& region,
                        const Matrix& outputs_at_vertices);

// Same reduction over an arbitrary stack of outputs (one point per row),
// e.g. interior samples during certification.
double output_violation(const ConvexRegion& region, const Matrix& outputs);

// Closed membership test. Vertex sets that are exactly the corner set of
// their bounding box use coordinate bounds; general sets use a nonnegative
// least-squares convex-combination test.
bool region_contains(const ConvexRegion& region, const Vector& x);

}  // namespace affinefence
