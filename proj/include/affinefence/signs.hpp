#pragma once

#include <string>
#include <vector>

#include "affinefence/network.hpp"
#include "affinefence/regions.hpp"

namespace affinefence {

// One global activation pattern per region, in RegionSet order. After
// ensure_unique the patterns are pairwise distinct, which pins each region
// inside its own affine polytope of the network.
struct SignMap {
  std::vector<std::string> region_ids;
  std::vector<ActivationPattern> patterns;  // aligned with region_ids

  std::size_t region_count() const { return patterns.size(); }

  bool operator==(const SignMap&) const = default;
};

// Vertex pre-activations per region and hidden layer under the current
// parameters: layers[i][l] is P_i x width(l).
struct RegionPreActivations {
  std::vector<std::string> region_ids;
  std::vector<std::vector<Matrix>> layers;
};

// Propagates every region's vertex stack through the network, recording the
// pre-activation matrix V^(l) W^(l)T + 1 b^(l)T at each hidden layer.
RegionPreActivations propagate_vertices(const MlpNetwork& net,
                                        const RegionSet& regions);

// Majority vote over vertices, zeros counting as positive; exact ties fall
// back to the sign of the mean pre-activation.
SignMap assign_majority(const RegionPreActivations& preacts);

// Sign of the vertex-mean pre-activation; mean >= 0 maps to +1.
SignMap assign_mean(const RegionPreActivations& preacts);

// Repairs duplicate global patterns: while two regions share a pattern, flip
// in the later-indexed region the not-yet-flipped neuron with the smallest
// |mean pre-activation|, exhausting earlier hidden layers before later ones.
// Throws if duplicates persist after every neuron has been flipped.
SignMap ensure_unique(const SignMap& map, const RegionPreActivations& preacts);

// True when all global patterns are pairwise distinct.
bool patterns_unique(const SignMap& map);

}  // namespace affinefence
