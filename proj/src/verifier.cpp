#include "affinefence/verifier.hpp"

#include <cmath>
#include <stdexcept>

namespace affinefence {

namespace {

Matrix affine_design(const Matrix& points) {
  Matrix design(points.rows, points.cols + 1);
  for (std::size_t i = 0; i < points.rows; ++i) {
    for (std::size_t j = 0; j < points.cols; ++j) design(i, j) = points(i, j);
    design(i, points.cols) = 1.0;
  }
  return design;
}

std::pair<Matrix, Vector> coef_to_map(const Matrix& coef, std::size_t d,
                                      std::size_t k) {
  Matrix lambda(k, d);
  Vector gamma(k);
  for (std::size_t out = 0; out < k; ++out) {
    for (std::size_t j = 0; j < d; ++j) lambda(out, j) = coef(j, out);
    gamma[out] = coef(d, out);
  }
  return {std::move(lambda), std::move(gamma)};
}

// Fit y ~ lambda x + gamma on the vertex outputs; if the vertices are
// affinely degenerate, refit over vertices plus samples (rank-revealing
// basic solution: any map agreeing on the sampled affine hull works for
// residual measurement there).
std::pair<Matrix, Vector> fit_affine(const MlpNetwork& net,
                                     const Matrix& vertices,
                                     const Matrix& samples, bool* degenerate) {
  const std::size_t d = vertices.cols, k = net.output_dim;
  *degenerate = false;
  if (vertices.rows >= d + 1) {
    try {
      const Matrix coef =
          least_squares(affine_design(vertices), forward_batch(net, vertices));
      return coef_to_map(coef, d, k);
    } catch (const RankDeficientError&) {
    }
  }
  *degenerate = true;
  Matrix stacked(vertices.rows + samples.rows, d);
  for (std::size_t i = 0; i < vertices.rows; ++i)
    stacked.set_row(i, vertices.row(i));
  for (std::size_t i = 0; i < samples.rows; ++i)
    stacked.set_row(vertices.rows + i, samples.row(i));
  std::size_t rank = 0;
  const Matrix coef = least_squares_basic(affine_design(stacked),
                                          forward_batch(net, stacked), &rank);
  return coef_to_map(coef, d, k);
}

bool patterns_match_everywhere(const MlpNetwork& net, const Matrix& points,
                               const ActivationPattern& expected) {
  bool all = true;
  for (std::size_t i = 0; i < points.rows && all; ++i)
    all = activation_pattern_at(net, points.row(i)) == expected;
  return all;
}

// Max relative inf-norm deviation of the network from the affine map over
// the sampled points.
double relative_residual(const MlpNetwork& net, const Matrix& lambda,
                         const Vector& gamma, const Matrix& samples) {
  const Matrix outputs = forward_batch(net, samples);
  double out_scale = 0.0;
  for (double v : outputs.data) out_scale = std::max(out_scale, std::abs(v));

  double worst = 0.0;
  for (std::size_t i = 0; i < samples.rows; ++i) {
    const Vector affine = [&] {
      Vector a = matvec(lambda, samples.row(i));
      for (std::size_t j = 0; j < a.size(); ++j) a[j] += gamma[j];
      return a;
    }();
    for (std::size_t j = 0; j < affine.size(); ++j)
      worst = std::max(worst, std::abs(outputs(i, j) - affine[j]));
  }
  return worst / (1.0 + out_scale);
}

}  // namespace

AffinityReport certify_region(const MlpNetwork& net, const ConvexRegion& region,
                              const ActivationPattern& expected,
                              std::size_t n_samples, std::uint64_t seed) {
  if (region.dim() != net.input_dim)
    throw DimensionError("certify_region: region dim != input dim");
  if (n_samples < region.vertex_count() + region.dim() + 1)
    throw std::invalid_argument(
        "certify_region: need at least vertex_count + D + 1 samples");

  AffinityReport report;
  report.region_id = region.id;
  report.samples_used = n_samples;

  const Matrix samples = sample_interior(region, n_samples, seed);

  // the reference pattern is whatever the first vertex realizes; constancy
  // and matching the assigned pattern are separate verdicts
  const ActivationPattern realized =
      activation_pattern_at(net, region.vertices.row(0));
  report.pattern_constant =
      patterns_match_everywhere(net, region.vertices, realized) &&
      patterns_match_everywhere(net, samples, realized);
  report.assigned_pattern_matched =
      report.pattern_constant && realized == expected;

  bool degenerate = false;
  const auto [lambda, gamma] =
      fit_affine(net, region.vertices, samples, &degenerate);
  report.degenerate_fit = degenerate;
  report.affine_residual = relative_residual(net, lambda, gamma, samples);

  report.sampled_constraint_violation =
      output_violation(region, forward_batch(net, samples));
  return report;
}

bool certify_distinct(const SignMap& map) { return patterns_unique(map); }

HullReport hull_check(const MlpNetwork& net, const ConvexRegion& region_a,
                      const ConvexRegion& region_b, std::size_t n_samples,
                      std::uint64_t seed) {
  if (region_a.dim() != region_b.dim())
    throw DimensionError("hull_check: region dims differ");

  Matrix combined(region_a.vertex_count() + region_b.vertex_count(),
                  region_a.dim());
  for (std::size_t i = 0; i < region_a.vertex_count(); ++i)
    combined.set_row(i, region_a.vertices.row(i));
  for (std::size_t i = 0; i < region_b.vertex_count(); ++i)
    combined.set_row(region_a.vertex_count() + i, region_b.vertices.row(i));
  const ConvexRegion hull = make_region("hull", std::move(combined));

  HullReport report;
  report.region_a = region_a.id;
  report.region_b = region_b.id;

  const Matrix samples = sample_interior(hull, n_samples, seed);
  const ActivationPattern realized =
      activation_pattern_at(net, hull.vertices.row(0));
  report.hull_pattern_constant =
      patterns_match_everywhere(net, hull.vertices, realized) &&
      patterns_match_everywhere(net, samples, realized);

  bool degenerate = false;
  const auto [lambda, gamma] =
      fit_affine(net, hull.vertices, samples, &degenerate);
  report.hull_affine_residual = relative_residual(net, lambda, gamma, samples);
  return report;
}

std::pair<Matrix, Vector> extract_region_affine(
    const MlpNetwork& net, const ConvexRegion& region,
    const ActivationPattern& expected) {
  for (std::size_t v = 0; v < region.vertex_count(); ++v)
    if (activation_pattern_at(net, region.vertices.row(v)) != expected)
      throw std::runtime_error("extract_region_affine: vertex " +
                               std::to_string(v) + " of region '" + region.id +
                               "' does not realize the expected pattern");
  return extract_affine(net, expected);
}

}  // namespace affinefence
