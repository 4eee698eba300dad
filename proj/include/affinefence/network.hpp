#pragma once

#include <cstdint>
#include <vector>

#include "affinefence/linalg.hpp"

namespace affinefence {

struct LayerParams {
  Matrix weights;  // out_dim x in_dim
  Vector biases;   // out_dim

  bool operator==(const LayerParams&) const = default;
};

// MLP computing a continuous piecewise affine function. Hidden layers apply
// sigma(u) = max(u, 0) when activation_slope is 0, or the leaky variant
// u < 0 -> slope*u otherwise; the last layer is affine only.
struct MlpNetwork {
  std::vector<LayerParams> layers;
  double activation_slope = 0.0;  // in [0, 1)
  std::size_t input_dim = 0;
  std::size_t output_dim = 0;

  std::size_t hidden_layer_count() const { return layers.size() - 1; }

  bool operator==(const MlpNetwork&) const = default;
};

// Per-layer z and sigma(z) captured during evaluation. The last layer has no
// activation, so post_activations.back() == pre_activations.back().
struct ForwardTrace {
  Vector input;
  std::vector<Vector> pre_activations;
  std::vector<Vector> post_activations;

  const Vector& output() const { return post_activations.back(); }
};

// Batched variant: one point per row.
struct BatchTrace {
  Matrix input;
  std::vector<Matrix> pre_activations;
  std::vector<Matrix> post_activations;

  const Matrix& output() const { return post_activations.back(); }
};

struct GradientSet {
  std::vector<LayerParams> layers;  // same shapes as the network's layers
};

// Per-hidden-layer sign vectors with entries in {+1, -1}. Entry is +1 iff
// the pre-activation at the probed point is >= 0 (zeros count as positive).
using ActivationPattern = std::vector<std::vector<int>>;

// He-style init: weights ~ N(0, 2/fan_in), zero biases. dims lists the layer
// widths input-first; needs at least one hidden layer (3 entries).
MlpNetwork init_network(const std::vector<std::size_t>& dims,
                        double activation_slope, std::uint64_t seed);

double apply_activation(double z, double slope);
double activation_gain(double z, double slope);  // 1 for z >= 0, slope below

Vector forward(const MlpNetwork& net, const Vector& x);
ForwardTrace forward_trace(const MlpNetwork& net, const Vector& x);

// points: one input per row. Output rows correspond to input rows.
Matrix forward_batch(const MlpNetwork& net, const Matrix& points);
BatchTrace forward_trace_batch(const MlpNetwork& net, const Matrix& points);

// z = inputs * W^T + 1 * b^T, the layer map applied to a stack of points.
// Enforcement and margin checks both route through this so they see
// bit-identical arithmetic.
Matrix layer_preactivations(const LayerParams& layer, const Matrix& inputs);
Matrix activate(const Matrix& z, double slope);

// Exact gradients for the scalar loss whose gradient at the output is
// output_grad. At z = 0 the subgradient takes the positive branch (slope 1).
GradientSet backward(const MlpNetwork& net, const ForwardTrace& trace,
                     const Vector& output_grad);

// Batched backward; output_grads has one row per traced point and the
// returned gradients are summed over rows.
GradientSet backward_batch(const MlpNetwork& net, const BatchTrace& trace,
                           const Matrix& output_grads);

ActivationPattern activation_pattern_at(const MlpNetwork& net, const Vector& x);

// The exact affine map (lambda, gamma) the network realizes on the polytope
// of `pattern`: each hidden neuron's gain is 1 (pattern +1) or the leak
// slope (pattern -1).
std::pair<Matrix, Vector> extract_affine(const MlpNetwork& net,
                                         const ActivationPattern& pattern);

}  // namespace affinefence
