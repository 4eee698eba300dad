#pragma once

#include <cstdint>
#include <string>

#include "affinefence/network.hpp"
#include "affinefence/regions.hpp"
#include "affinefence/signs.hpp"

namespace affinefence {

// Certification outcome for one region. A constant pattern over vertices and
// dense interior samples means the region sits inside a single affine
// polytope, so the affine_residual measures only floating-point error;
// without pattern_constant the residual is not evidence of anything.
struct AffinityReport {
  std::string region_id;
  bool pattern_constant = false;
  bool assigned_pattern_matched = false;
  bool degenerate_fit = false;  // fit needed interior samples, not vertices
  double affine_residual = 0.0;  // max inf-norm deviation, relative
  double sampled_constraint_violation = 0.0;
  std::size_t samples_used = 0;
};

struct HullReport {
  std::string region_a;
  std::string region_b;
  bool hull_pattern_constant = false;
  double hull_affine_residual = 0.0;
};

// Samples the region interior, checks every sample and vertex realizes the
// expected activation pattern, fits an affine map to the vertex outputs
// (falling back to vertices plus samples when the vertex set is affinely
// degenerate), and evaluates the region's constraints on the samples.
// Requires n_samples >= vertex_count + D + 1.
AffinityReport certify_region(const MlpNetwork& net, const ConvexRegion& region,
                              const ActivationPattern& expected,
                              std::size_t n_samples, std::uint64_t seed);

// True iff all global patterns in the map are pairwise distinct.
bool certify_distinct(const SignMap& map);

// Certification over conv(vertices of a and b): constant pattern across the
// hull samples and both vertex sets means the whole hull is one affine
// piece, the collapse that sharing a pattern across regions causes.
HullReport hull_check(const MlpNetwork& net, const ConvexRegion& region_a,
                      const ConvexRegion& region_b, std::size_t n_samples,
                      std::uint64_t seed);

// Closed-form affine map on the region's polytope; checks the pattern is
// realized at every vertex first and throws on mismatch.
std::pair<Matrix, Vector> extract_region_affine(
    const MlpNetwork& net, const ConvexRegion& region,
    const ActivationPattern& expected);

}  // namespace affinefence
