#include "affinefence/network.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace affinefence {

MlpNetwork init_network(const std::vector<std::size_t>& dims,
                        double activation_slope, std::uint64_t seed) {
  if (dims.size() < 3)
    throw DimensionError("init_network: need input, hidden, output dims");
  for (std::size_t d : dims)
    if (d == 0) throw DimensionError("init_network: zero layer width");
  if (activation_slope < 0.0 || activation_slope >= 1.0)
    throw std::invalid_argument("init_network: activation_slope outside [0,1)");

  MlpNetwork net;
  net.activation_slope = activation_slope;
  net.input_dim = dims.front();
  net.output_dim = dims.back();

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const std::size_t fan_in = dims[l], fan_out = dims[l + 1];
    LayerParams layer;
    layer.weights = Matrix(fan_out, fan_in);
    layer.biases = Vector(fan_out, 0.0);
    const double scale = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (double& w : layer.weights.data) w = scale * gauss(rng);
    net.layers.push_back(std::move(layer));
  }
  return net;
}

double apply_activation(double z, double slope) {
  return z >= 0.0 ? z : slope * z;
}

double activation_gain(double z, double slope) {
  return z >= 0.0 ? 1.0 : slope;
}

Vector forward(const MlpNetwork& net, const Vector& x) {
  if (x.size() != net.input_dim)
    throw DimensionError("forward: input length " + std::to_string(x.size()) +
                         " != " + std::to_string(net.input_dim));
  Vector cur = x;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    Vector z = matvec(net.layers[l].weights, cur);
    for (std::size_t j = 0; j < z.size(); ++j) z[j] += net.layers[l].biases[j];
    if (l + 1 < net.layers.size())
      for (double& v : z) v = apply_activation(v, net.activation_slope);
    cur = std::move(z);
  }
  return cur;
}

ForwardTrace forward_trace(const MlpNetwork& net, const Vector& x) {
  if (x.size() != net.input_dim)
    throw DimensionError("forward_trace: input length mismatch");
  ForwardTrace trace;
  trace.input = x;
  const Vector* cur = &trace.input;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    Vector z = matvec(net.layers[l].weights, *cur);
    for (std::size_t j = 0; j < z.size(); ++j) z[j] += net.layers[l].biases[j];
    trace.pre_activations.push_back(z);
    if (l + 1 < net.layers.size())
      for (double& v : z) v = apply_activation(v, net.activation_slope);
    trace.post_activations.push_back(std::move(z));
    cur = &trace.post_activations.back();
  }
  return trace;
}

Matrix layer_preactivations(const LayerParams& layer, const Matrix& inputs) {
  if (inputs.cols != layer.weights.cols)
    throw DimensionError("layer_preactivations: point dim " +
                         std::to_string(inputs.cols) + " != layer fan-in " +
                         std::to_string(layer.weights.cols));
  Matrix z = matmul(inputs, transpose(layer.weights));
  for (std::size_t i = 0; i < z.rows; ++i)
    for (std::size_t j = 0; j < z.cols; ++j) z(i, j) += layer.biases[j];
  return z;
}

Matrix activate(const Matrix& z, double slope) {
  Matrix out = z;
  for (double& v : out.data) v = apply_activation(v, slope);
  return out;
}

Matrix forward_batch(const MlpNetwork& net, const Matrix& points) {
  Matrix cur = points;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    Matrix z = layer_preactivations(net.layers[l], cur);
    cur = (l + 1 < net.layers.size()) ? activate(z, net.activation_slope)
                                      : std::move(z);
  }
  return cur;
}

BatchTrace forward_trace_batch(const MlpNetwork& net, const Matrix& points) {
  BatchTrace trace;
  trace.input = points;
  const Matrix* cur = &trace.input;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    Matrix z = layer_preactivations(net.layers[l], *cur);
    trace.pre_activations.push_back(z);
    trace.post_activations.push_back(
        l + 1 < net.layers.size() ? activate(z, net.activation_slope)
                                  : std::move(z));
    cur = &trace.post_activations.back();
  }
  return trace;
}

GradientSet backward(const MlpNetwork& net, const ForwardTrace& trace,
                     const Vector& output_grad) {
  if (output_grad.size() != net.output_dim)
    throw DimensionError("backward: output_grad length mismatch");
  if (trace.pre_activations.size() != net.layers.size())
    throw DimensionError("backward: trace does not match network depth");

  GradientSet grads;
  grads.layers.resize(net.layers.size());
  Vector delta = output_grad;  // d loss / d z at the current layer
  for (std::size_t l = net.layers.size(); l-- > 0;) {
    const Vector& layer_in =
        l == 0 ? trace.input : trace.post_activations[l - 1];
    Matrix gw(net.layers[l].weights.rows, net.layers[l].weights.cols);
    for (std::size_t i = 0; i < gw.rows; ++i)
      for (std::size_t j = 0; j < gw.cols; ++j)
        gw(i, j) = delta[i] * layer_in[j];
    grads.layers[l].weights = std::move(gw);
    grads.layers[l].biases = delta;

    if (l > 0) {
      const Matrix& w = net.layers[l].weights;
      Vector prev(w.cols, 0.0);
      for (std::size_t i = 0; i < w.rows; ++i)
        for (std::size_t j = 0; j < w.cols; ++j) prev[j] += w(i, j) * delta[i];
      const Vector& z = trace.pre_activations[l - 1];
      for (std::size_t j = 0; j < prev.size(); ++j)
        prev[j] *= activation_gain(z[j], net.activation_slope);
      delta = std::move(prev);
    }
  }
  return grads;
}

GradientSet backward_batch(const MlpNetwork& net, const BatchTrace& trace,
                           const Matrix& output_grads) {
  if (output_grads.cols != net.output_dim ||
      output_grads.rows != trace.input.rows)
    throw DimensionError("backward_batch: output_grads shape mismatch");

  GradientSet grads;
  grads.layers.resize(net.layers.size());
  Matrix delta = output_grads;  // one row per point
  for (std::size_t l = net.layers.size(); l-- > 0;) {
    const Matrix& layer_in =
        l == 0 ? trace.input : trace.post_activations[l - 1];
    grads.layers[l].weights = matmul(transpose(delta), layer_in);
    Vector gb(net.layers[l].biases.size(), 0.0);
    for (std::size_t i = 0; i < delta.rows; ++i)
      for (std::size_t j = 0; j < delta.cols; ++j) gb[j] += delta(i, j);
    grads.layers[l].biases = std::move(gb);

    if (l > 0) {
      Matrix prev = matmul(delta, net.layers[l].weights);
      const Matrix& z = trace.pre_activations[l - 1];
      for (std::size_t i = 0; i < prev.rows; ++i)
        for (std::size_t j = 0; j < prev.cols; ++j)
          prev(i, j) *= activation_gain(z(i, j), net.activation_slope);
      delta = std::move(prev);
    }
  }
  return grads;
}

ActivationPattern activation_pattern_at(const MlpNetwork& net, const Vector& x) {
  ForwardTrace trace = forward_trace(net, x);
  ActivationPattern pattern;
  for (std::size_t l = 0; l + 1 < net.layers.size(); ++l) {
    std::vector<int> signs(trace.pre_activations[l].size());
    for (std::size_t j = 0; j < signs.size(); ++j)
      signs[j] = trace.pre_activations[l][j] >= 0.0 ? 1 : -1;
    pattern.push_back(std::move(signs));
  }
  return pattern;
}

std::pair<Matrix, Vector> extract_affine(const MlpNetwork& net,
                                         const ActivationPattern& pattern) {
  if (pattern.size() != net.hidden_layer_count())
    throw DimensionError("extract_affine: pattern depth mismatch");

  // Running composition f(x) = lambda*x + gamma through the layers, scaling
  // each hidden row by the gain its sign selects.
  Matrix lambda = net.layers[0].weights;
  Vector gamma = net.layers[0].biases;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    if (l > 0) {
      const LayerParams& layer = net.layers[l];
      lambda = matmul(layer.weights, lambda);
      Vector g = matvec(layer.weights, gamma);
      for (std::size_t j = 0; j < g.size(); ++j) g[j] += layer.biases[j];
      gamma = std::move(g);
    }
    if (l + 1 < net.layers.size()) {
      if (pattern[l].size() != gamma.size())
        throw DimensionError("extract_affine: pattern width mismatch at layer " +
                             std::to_string(l));
      for (std::size_t j = 0; j < gamma.size(); ++j) {
        const double gain = pattern[l][j] > 0 ? 1.0 : net.activation_slope;
        gamma[j] *= gain;
        for (std::size_t k = 0; k < lambda.cols; ++k) lambda(j, k) *= gain;
      }
    }
  }
  return {std::move(lambda), std::move(gamma)};
}

}  // namespace affinefence
