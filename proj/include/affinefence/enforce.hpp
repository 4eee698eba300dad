#pragma once

#include <cstddef>
#include <vector>

#include "affinefence/network.hpp"
#include "affinefence/qpsolver.hpp"
#include "affinefence/regions.hpp"
#include "affinefence/signs.hpp"

namespace affinefence {

struct EnforceConfig {
  double margin = 0.0;  // delta: required sign * pre-activation at vertices
  double qp_tolerance = 1e-10;
  std::size_t qp_max_iter = 100000;
};

struct QpFailure {
  std::size_t layer = 0;
  std::size_t neuron = 0;
  QpStatus status = QpStatus::iteration_limit;
};

struct EnforcementReport {
  // [hidden layer][neuron] -> ||(delta_w, delta_b)||
  std::vector<std::vector<double>> adjustment_norms;
  double total_shift = 0.0;  // Frobenius norm over all layer adjustments
  // -(min over regions/vertices/neurons of sign*z - margin); positive means
  // some constraint is violated. <= qp tolerance when qp_failures is empty.
  double worst_margin_deficit = 0.0;
  std::vector<QpFailure> qp_failures;
  std::vector<double> layer_seconds;

  bool success() const { return qp_failures.empty(); }
};

// Rewrites each hidden layer with the minimal-norm per-neuron shifts that
// realize the SignMap on every region vertex. Layer l's QPs see vertices
// propagated through the already-updated layers before l and that layer's
// pre-update parameters; updates are applied at a barrier after the layer's
// neuron loop (neurons are independent and may solve in parallel). Any QP
// failure aborts the whole pass and the original network is returned.
std::pair<MlpNetwork, EnforcementReport> enforce_signs(const MlpNetwork& net,
                                                       const RegionSet& regions,
                                                       const SignMap& map,
                                                       const EnforceConfig& cfg);

// Baseline that may only move biases (weights frozen). Feasible exactly when
// every neuron's per-vertex bias intervals intersect; multiple regions with
// opposing signs generally make them disjoint, which is the failure this
// baseline demonstrates.
struct BiasOnlyResult {
  bool feasible = false;
  MlpNetwork net;  // updated when feasible, the original otherwise
  std::size_t layer = 0;   // conflict site when infeasible
  std::size_t neuron = 0;
  double lower = 0.0;  // conflicting interval bounds on the resulting bias
  double upper = 0.0;
};

BiasOnlyResult enforce_bias_only(const MlpNetwork& net,
                                 const RegionSet& regions, const SignMap& map,
                                 double margin);

// min over all (region, vertex, neuron, hidden layer) of sign * z - margin.
// Negative values are deficits. Shares its propagation arithmetic with
// enforce_signs, so a successful pass re-checks bit-identically.
double verify_margins(const MlpNetwork& net, const RegionSet& regions,
                      const SignMap& map, double margin);

}  // namespace affinefence
