#include "affinefence/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>

namespace affinefence {

namespace {

void validate_dataset(const Dataset& data, const MlpNetwork& net,
                      const char* who) {
  if (data.inputs.rows == 0)
    throw std::invalid_argument(std::string(who) + ": empty dataset");
  if (data.inputs.rows != data.targets.rows)
    throw DimensionError(std::string(who) + ": inputs/targets row mismatch");
  if (data.inputs.cols != net.input_dim || data.targets.cols != net.output_dim)
    throw DimensionError(std::string(who) + ": dataset dims do not match net");
  if (data.kind == TaskKind::classification_bce)
    for (double t : data.targets.data)
      if (t != 0.0 && t != 1.0)
        throw std::invalid_argument(std::string(who) +
                                    ": BCE targets must be 0 or 1");
}

void validate_config(const TrainConfig& cfg, const char* who) {
  if (!(cfg.learning_rate > 0.0))
    throw std::invalid_argument(std::string(who) + ": learning_rate <= 0");
  if (cfg.batch_size == 0)
    throw std::invalid_argument(std::string(who) + ": batch_size must be >= 1");
  if (cfg.lambda_init > cfg.lambda_max)
    throw std::invalid_argument(std::string(who) + ": lambda_init > lambda_max");
  if (!(cfg.violation_tolerance > 0.0))
    throw std::invalid_argument(std::string(who) + ": tolerance must be > 0");
  if (!(cfg.penalty_multiplier > 1.0))
    throw std::invalid_argument(std::string(who) + ": multiplier must be > 1");
}

double softplus(double z) {
  return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

// Batch task loss (mean over rows) and its gradient w.r.t. the outputs.
double batch_task_loss(const Matrix& outputs, const Matrix& targets,
                       TaskKind kind, Matrix* grad_out) {
  const double inv_n = 1.0 / static_cast<double>(outputs.rows);
  double loss = 0.0;
  if (grad_out) *grad_out = Matrix(outputs.rows, outputs.cols);
  for (std::size_t i = 0; i < outputs.rows; ++i)
    for (std::size_t j = 0; j < outputs.cols; ++j) {
      const double y = outputs(i, j), t = targets(i, j);
      if (kind == TaskKind::regression_mse) {
        loss += (y - t) * (y - t) * inv_n;
        if (grad_out) (*grad_out)(i, j) = 2.0 * (y - t) * inv_n;
      } else {
        loss += (softplus(y) - t * y) * inv_n;
        if (grad_out)
          (*grad_out)(i, j) = (1.0 / (1.0 + std::exp(-y)) - t) * inv_n;
      }
    }
  return loss;
}

GradientSet zero_like(const MlpNetwork& net) {
  GradientSet g;
  g.layers.resize(net.layers.size());
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    g.layers[l].weights =
        Matrix(net.layers[l].weights.rows, net.layers[l].weights.cols);
    g.layers[l].biases = Vector(net.layers[l].biases.size(), 0.0);
  }
  return g;
}

void accumulate(GradientSet& into, const GradientSet& g, double scale) {
  for (std::size_t l = 0; l < into.layers.size(); ++l) {
    for (std::size_t k = 0; k < into.layers[l].weights.data.size(); ++k)
      into.layers[l].weights.data[k] += scale * g.layers[l].weights.data[k];
    for (std::size_t k = 0; k < into.layers[l].biases.size(); ++k)
      into.layers[l].biases[k] += scale * g.layers[l].biases[k];
  }
}

struct AdamState {
  GradientSet m, v;
  std::size_t t = 0;

  explicit AdamState(const MlpNetwork& net)
      : m(zero_like(net)), v(zero_like(net)) {}
};

void adam_step(MlpNetwork& net, const GradientSet& g, AdamState& st,
               double lr) {
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  ++st.t;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(st.t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(st.t));
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    auto update = [&](double& param, double grad, double& m, double& v) {
      m = b1 * m + (1.0 - b1) * grad;
      v = b2 * v + (1.0 - b2) * grad * grad;
      param -= lr * (m / c1) / (std::sqrt(v / c2) + eps);
    };
    for (std::size_t k = 0; k < net.layers[l].weights.data.size(); ++k)
      update(net.layers[l].weights.data[k], g.layers[l].weights.data[k],
             st.m.layers[l].weights.data[k], st.v.layers[l].weights.data[k]);
    for (std::size_t k = 0; k < net.layers[l].biases.size(); ++k)
      update(net.layers[l].biases[k], g.layers[l].biases[k],
             st.m.layers[l].biases[k], st.v.layers[l].biases[k]);
  }
}

std::mt19937_64 epoch_rng(std::uint64_t seed, std::size_t epoch) {
  return std::mt19937_64(seed ^ (0x9e3779b97f4a7c15ULL * (epoch + 1)));
}

Matrix take_rows(const Matrix& m, const std::vector<std::size_t>& rows,
                 std::size_t begin, std::size_t end) {
  Matrix out(end - begin, m.cols);
  for (std::size_t i = begin; i < end; ++i)
    out.set_row(i - begin, m.row(rows[i]));
  return out;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

}  // namespace

std::pair<MlpNetwork, TrainReport> pretrain(const MlpNetwork& net,
                                            const Dataset& data,
                                            const TrainConfig& cfg) {
  validate_dataset(data, net, "pretrain");
  validate_config(cfg, "pretrain");

  const auto t0 = std::chrono::steady_clock::now();
  MlpNetwork working = net;
  TrainReport report;
  AdamState adam(working);

  std::vector<std::size_t> order(data.inputs.rows);
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (std::size_t epoch = 0; epoch < cfg.pretrain_epochs; ++epoch) {
    auto rng = epoch_rng(cfg.seed, epoch);
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t begin = 0; begin < order.size();
         begin += cfg.batch_size) {
      const std::size_t end = std::min(begin + cfg.batch_size, order.size());
      const Matrix xb = take_rows(data.inputs, order, begin, end);
      const Matrix tb = take_rows(data.targets, order, begin, end);
      const BatchTrace trace = forward_trace_batch(working, xb);
      Matrix out_grad;
      const double loss =
          batch_task_loss(trace.output(), tb, data.kind, &out_grad);
      if (!std::isfinite(loss))
        throw std::runtime_error("pretrain: non-finite loss at epoch " +
                                 std::to_string(epoch));
      const GradientSet g = backward_batch(working, trace, out_grad);
      adam_step(working, g, adam, cfg.learning_rate);
      epoch_loss += loss;
      ++batches;
    }
    report.task_loss.push_back(epoch_loss / static_cast<double>(batches));
  }
  report.pretrain_seconds = seconds_since(t0);
  return {std::move(working), std::move(report)};
}

double constraint_penalty(const MlpNetwork& net, const RegionSet& regions) {
  double value = 0.0;
  constraint_penalty_gradient(net, regions, &value);
  return value;
}

GradientSet constraint_penalty_gradient(const MlpNetwork& net,
                                        const RegionSet& regions,
                                        double* value_out) {
  GradientSet total = zero_like(net);
  double value = 0.0;
  for (const ConvexRegion& region : regions.regions) {
    if (!region.has_constraints()) continue;
    const BatchTrace trace = forward_trace_batch(net, region.vertices);
    const Matrix& outputs = trace.output();
    Matrix out_grad(outputs.rows, outputs.cols);

    for (std::size_t p = 0; p < outputs.rows; ++p) {
      const Vector y = outputs.row(p);
      if (region.equality) {
        const Matrix& e = region.equality->e;
        const Vector r = [&] {
          Vector r0 = matvec(e, y);
          for (std::size_t k = 0; k < r0.size(); ++k)
            r0[k] -= region.equality->f[k];
          return r0;
        }();
        for (double rv : r) value += rv * rv;
        for (std::size_t j = 0; j < y.size(); ++j) {
          double g = 0.0;
          for (std::size_t k = 0; k < r.size(); ++k) g += 2.0 * r[k] * e(k, j);
          out_grad(p, j) += g;
        }
      }
      if (region.inequality) {
        const Matrix& c = region.inequality->c;
        Vector h = matvec(c, y);
        for (std::size_t k = 0; k < h.size(); ++k)
          h[k] = std::max(0.0, h[k] - region.inequality->d[k]);
        for (double hv : h) value += hv * hv;
        for (std::size_t j = 0; j < y.size(); ++j) {
          double g = 0.0;
          for (std::size_t k = 0; k < h.size(); ++k) g += 2.0 * h[k] * c(k, j);
          out_grad(p, j) += g;
        }
      }
    }
    accumulate(total, backward_batch(net, trace, out_grad), 1.0);
  }
  if (value_out) *value_out = value;
  return total;
}

double measure_violation(const MlpNetwork& net, const RegionSet& regions) {
  double worst = 0.0;
  for (const ConvexRegion& region : regions.regions) {
    const Matrix outputs = forward_batch(net, region.vertices);
    worst = std::max(worst, vertex_violation(region, outputs));
  }
  return worst;
}

double balanced_loss(double avg_task_loss, double violation) {
  if (avg_task_loss < 0.0 || violation < 0.0)
    throw std::invalid_argument("balanced_loss: negative input");
  return std::sqrt(avg_task_loss * (1.0 + violation));
}

double task_loss(const MlpNetwork& net, const Dataset& data) {
  const Matrix outputs = forward_batch(net, data.inputs);
  return batch_task_loss(outputs, data.targets, data.kind, nullptr);
}

Dataset filter_equality_regions(const Dataset& data, const RegionSet& regions) {
  std::vector<const ConvexRegion*> eq_regions;
  for (const ConvexRegion& r : regions.regions)
    if (r.equality) eq_regions.push_back(&r);
  if (eq_regions.empty()) return data;

  std::vector<std::size_t> keep;
  for (std::size_t row = 0; row < data.inputs.rows; ++row) {
    const Vector x = data.inputs.row(row);
    bool inside = false;
    for (std::size_t i = 0; i < eq_regions.size() && !inside; ++i)
      inside = region_contains(*eq_regions[i], x);
    if (!inside) keep.push_back(row);
  }

  Dataset out;
  out.kind = data.kind;
  out.inputs = Matrix(keep.size(), data.inputs.cols);
  out.targets = Matrix(keep.size(), data.targets.cols);
  for (std::size_t i = 0; i < keep.size(); ++i) {
    out.inputs.set_row(i, data.inputs.row(keep[i]));
    out.targets.set_row(i, data.targets.row(keep[i]));
  }
  return out;
}

std::pair<MlpNetwork, TrainReport> fine_tune(const MlpNetwork& net,
                                             const Dataset& data,
                                             const RegionSet& regions,
                                             const TrainConfig& cfg) {
  validate_dataset(data, net, "fine_tune");
  validate_config(cfg, "fine_tune");

  const auto t0 = std::chrono::steady_clock::now();
  TrainReport report;

  const Dataset used = cfg.filter_equality_data
                           ? filter_equality_regions(data, regions)
                           : data;

  const RegionPreActivations preacts = propagate_vertices(net, regions);
  SignMap map = cfg.sign_method == SignMethod::majority
                    ? assign_majority(preacts)
                    : assign_mean(preacts);
  map = ensure_unique(map, preacts);
  report.sign_map = map;

  auto run_enforce = [&](const MlpNetwork& n) {
    auto result = enforce_signs(n, regions, map, cfg.enforce);
    double secs = 0.0;
    for (double s : result.second.layer_seconds) secs += s;
    report.enforcement_seconds.push_back(secs);
    report.margin_deficits.push_back(result.second.worst_margin_deficit);
    return result;
  };

  auto [working, initial_report] = run_enforce(net);
  if (!initial_report.success()) {
    report.aborted = true;
    report.stop_reason = StopReason::aborted;
    report.enforcement_failure = std::move(initial_report);
    report.finetune_seconds = seconds_since(t0);
    return {net, std::move(report)};
  }

  const double lr = 0.1 * cfg.learning_rate;
  AdamState adam(working);
  double lambda = cfg.lambda_init;
  double best = std::numeric_limits<double>::infinity();
  MlpNetwork best_net = working;
  // Restoring the best balanced loss alone can hand back a checkpoint whose
  // violation exceeds the tolerance the run just met, so feasible epochs get
  // their own slot and win the final restore.
  double best_feasible = std::numeric_limits<double>::infinity();
  MlpNetwork best_feasible_net;
  std::size_t best_feasible_epoch = 0;
  std::size_t patience = 0;
  report.stop_reason = StopReason::max_epochs;

  std::vector<std::size_t> order(used.inputs.rows);
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    auto rng = epoch_rng(cfg.seed, epoch);
    std::shuffle(order.begin(), order.end(), rng);

    for (std::size_t begin = 0; begin < order.size();
         begin += cfg.batch_size) {
      const std::size_t end = std::min(begin + cfg.batch_size, order.size());
      const Matrix xb = take_rows(used.inputs, order, begin, end);
      const Matrix tb = take_rows(used.targets, order, begin, end);
      const BatchTrace trace = forward_trace_batch(working, xb);
      Matrix out_grad;
      const double loss =
          batch_task_loss(trace.output(), tb, used.kind, &out_grad);
      if (!std::isfinite(loss))
        throw std::runtime_error("fine_tune: non-finite loss at epoch " +
                                 std::to_string(epoch));
      GradientSet g = backward_batch(working, trace, out_grad);
      double penalty = 0.0;
      const GradientSet pg =
          constraint_penalty_gradient(working, regions, &penalty);
      if (!std::isfinite(penalty))
        throw std::runtime_error("fine_tune: non-finite penalty at epoch " +
                                 std::to_string(epoch));
      accumulate(g, pg, lambda);
      adam_step(working, g, adam, lr);
    }

    auto [enforced, enf_report] = run_enforce(working);
    if (!enf_report.success()) {
      report.aborted = true;
      report.stop_reason = StopReason::aborted;
      report.enforcement_failure = std::move(enf_report);
      report.finetune_seconds = seconds_since(t0);
      return {std::isfinite(best) ? std::move(best_net) : std::move(working),
              std::move(report)};
    }
    working = std::move(enforced);

    // The checkpoint metric must be a function of the parameters that would
    // be restored, so the task loss feeding it is measured on the enforced
    // net over the whole (filtered) dataset, not averaged across the batches
    // the optimizer happened to see mid-epoch.
    const double v = measure_violation(working, regions);
    const double avg_task = task_loss(working, used);
    const double bal = balanced_loss(avg_task, v);
    report.task_loss.push_back(avg_task);
    report.violation.push_back(v);
    report.lambda_history.push_back(lambda);
    report.balanced_history.push_back(bal);

    if (bal < best) {
      best = bal;
      best_net = working;
      report.best_epoch = report.balanced_history.size() - 1;
      patience = 0;
    } else {
      ++patience;
    }
    if (v <= cfg.violation_tolerance && bal < best_feasible) {
      best_feasible = bal;
      best_feasible_net = working;
      best_feasible_epoch = report.balanced_history.size() - 1;
    }

    if (patience >= cfg.patience_threshold) {
      if (v > cfg.violation_tolerance && lambda < cfg.lambda_max) {
        lambda = std::min(lambda * cfg.penalty_multiplier, cfg.lambda_max);
        patience = 0;
      } else {
        report.stop_reason = StopReason::patience_exhausted;
        break;
      }
    }
    if (v <= cfg.violation_tolerance && epoch >= cfg.min_epochs) {
      report.stop_reason = StopReason::tolerance_met;
      break;
    }
  }

  report.best_balanced = std::isfinite(best) ? best : 0.0;
  report.finetune_seconds = seconds_since(t0);
  if (std::isfinite(best)) return {std::move(best_net), std::move(report)};
  return {std::move(working), std::move(report)};
}

}  // namespace affinefence
