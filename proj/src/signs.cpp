#include "affinefence/signs.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace affinefence {

RegionPreActivations propagate_vertices(const MlpNetwork& net,
                                        const RegionSet& regions) {
  RegionPreActivations out;
  for (const ConvexRegion& region : regions.regions) {
    if (region.dim() != net.input_dim)
      throw DimensionError("propagate_vertices: region '" + region.id +
                           "' dimension != network input dim");
    out.region_ids.push_back(region.id);
    std::vector<Matrix> per_layer;
    Matrix cur = region.vertices;
    for (std::size_t l = 0; l + 1 < net.layers.size(); ++l) {
      Matrix z = layer_preactivations(net.layers[l], cur);
      cur = activate(z, net.activation_slope);
      per_layer.push_back(std::move(z));
    }
    out.layers.push_back(std::move(per_layer));
  }
  return out;
}

namespace {

double column_mean(const Matrix& m, std::size_t col) {
  double s = 0.0;
  for (std::size_t i = 0; i < m.rows; ++i) s += m(i, col);
  return s / static_cast<double>(m.rows);
}

SignMap assign_with(const RegionPreActivations& preacts,
                    bool majority) {
  SignMap map;
  map.region_ids = preacts.region_ids;
  for (const std::vector<Matrix>& region_layers : preacts.layers) {
    ActivationPattern pattern;
    for (const Matrix& z : region_layers) {
      std::vector<int> signs(z.cols);
      for (std::size_t n = 0; n < z.cols; ++n) {
        if (majority) {
          std::size_t nonneg = 0;
          for (std::size_t v = 0; v < z.rows; ++v)
            if (z(v, n) >= 0.0) ++nonneg;
          const std::size_t neg = z.rows - nonneg;
          if (nonneg != neg) {
            signs[n] = nonneg > neg ? 1 : -1;
            continue;
          }
          // exact tie: the vote carries no information, defer to the mean
        }
        signs[n] = column_mean(z, n) >= 0.0 ? 1 : -1;
      }
      pattern.push_back(std::move(signs));
    }
    map.patterns.push_back(std::move(pattern));
  }
  return map;
}

}  // namespace

SignMap assign_majority(const RegionPreActivations& preacts) {
  return assign_with(preacts, true);
}

SignMap assign_mean(const RegionPreActivations& preacts) {
  return assign_with(preacts, false);
}

bool patterns_unique(const SignMap& map) {
  for (std::size_t i = 0; i < map.patterns.size(); ++i)
    for (std::size_t j = i + 1; j < map.patterns.size(); ++j)
      if (map.patterns[i] == map.patterns[j]) return false;
  return true;
}

SignMap ensure_unique(const SignMap& map, const RegionPreActivations& preacts) {
  if (map.patterns.size() != preacts.layers.size())
    throw DimensionError("ensure_unique: map and pre-activations disagree");

  SignMap out = map;
  // flipped[r][l][n]: neuron n of hidden layer l in region r already flipped
  std::vector<std::vector<std::vector<bool>>> flipped(out.patterns.size());
  for (std::size_t r = 0; r < out.patterns.size(); ++r)
    for (const std::vector<int>& layer : out.patterns[r])
      flipped[r].push_back(std::vector<bool>(layer.size(), false));

  for (;;) {
    // first duplicated pair in index order; repair targets the later region
    std::size_t target = out.patterns.size();
    for (std::size_t i = 0; i < out.patterns.size() && target == out.patterns.size(); ++i)
      for (std::size_t j = i + 1; j < out.patterns.size(); ++j)
        if (out.patterns[i] == out.patterns[j]) {
          target = j;
          break;
        }
    if (target == out.patterns.size()) return out;

    // earliest hidden layer with an unflipped neuron; among those, the
    // neuron whose mean pre-activation is nearest zero
    bool done = false;
    for (std::size_t l = 0; l < out.patterns[target].size() && !done; ++l) {
      std::size_t best = out.patterns[target][l].size();
      double best_mag = std::numeric_limits<double>::infinity();
      for (std::size_t n = 0; n < out.patterns[target][l].size(); ++n) {
        if (flipped[target][l][n]) continue;
        const double mag = std::abs(column_mean(preacts.layers[target][l], n));
        if (mag < best_mag) {
          best_mag = mag;
          best = n;
        }
      }
      if (best < out.patterns[target][l].size()) {
        out.patterns[target][l][best] = -out.patterns[target][l][best];
        flipped[target][l][best] = true;
        done = true;
      }
    }
    if (!done)
      throw std::runtime_error(
          "ensure_unique: exhausted flips for region '" +
          out.region_ids[target] + "' with duplicates remaining");
  }
}

}  // namespace affinefence
