#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "affinefence/enforce.hpp"
#include "affinefence/network.hpp"
#include "affinefence/regions.hpp"
#include "affinefence/signs.hpp"

namespace affinefence {

enum class TaskKind { regression_mse, classification_bce };

struct Dataset {
  Matrix inputs;   // n x D
  Matrix targets;  // n x K; BCE targets must be 0 or 1
  TaskKind kind = TaskKind::regression_mse;
};

enum class SignMethod { majority, mean };

struct TrainConfig {
  double learning_rate = 1e-3;  // pretraining rate; fine_tune uses 0.1x
  std::size_t batch_size = 32;
  std::size_t pretrain_epochs = 0;
  std::size_t min_epochs = 30;
  std::size_t max_epochs = 50;
  std::size_t patience_threshold = 20;
  double lambda_init = 1.0;
  double lambda_max = 100.0;
  double penalty_multiplier = 1.5;
  double violation_tolerance = 1e-4;  // epsilon
  bool filter_equality_data = false;
  SignMethod sign_method = SignMethod::majority;
  EnforceConfig enforce;
  std::uint64_t seed = 0;
};

enum class StopReason { tolerance_met, patience_exhausted, max_epochs, aborted };

struct TrainReport {
  std::vector<double> task_loss;         // whole-epoch batch mean
  std::vector<double> violation;         // V, measured after re-enforcement
  std::vector<double> lambda_history;    // weight in effect during the epoch
  std::vector<double> balanced_history;  // sqrt(task_loss * (1 + V))
  StopReason stop_reason = StopReason::max_epochs;
  std::size_t best_epoch = 0;  // index into the histories
  double best_balanced = 0.0;
  double pretrain_seconds = 0.0;
  double finetune_seconds = 0.0;
  std::vector<double> enforcement_seconds;  // one entry per enforcement pass
  // Worst sign-margin deficit right after each enforcement pass; every entry
  // of a successful run is expected to be <= 0 up to eval rounding.
  std::vector<double> margin_deficits;
  bool aborted = false;
  std::optional<EnforcementReport> enforcement_failure;
  // Patterns the run pinned (fine_tune only); what certification checks
  // against.
  std::optional<SignMap> sign_map;
};

// Minimizes the task loss alone for cfg.pretrain_epochs of mini-batch
// adaptive-moment descent (beta1 0.9, beta2 0.999, eps 1e-8) at the full
// learning rate. Shuffling is reseeded per epoch from cfg.seed. Throws on
// non-finite loss.
std::pair<MlpNetwork, TrainReport> pretrain(const MlpNetwork& net,
                                            const Dataset& data,
                                            const TrainConfig& cfg);

// Sum over regions and vertices of squared equality residuals plus squared
// hinge of inequality residuals.
double constraint_penalty(const MlpNetwork& net, const RegionSet& regions);

// Penalty plus its exact parameter gradient (2 E^T r and 2 C^T max(0, .)
// pushed through backpropagation). value_out may be null.
GradientSet constraint_penalty_gradient(const MlpNetwork& net,
                                        const RegionSet& regions,
                                        double* value_out);

// Max over regions of the worst vertex constraint violation.
double measure_violation(const MlpNetwork& net, const RegionSet& regions);

// sqrt(avg_task_loss * (1 + V)); rejects negative inputs.
double balanced_loss(double avg_task_loss, double violation);

// Mean task loss of the network over a whole dataset.
double task_loss(const MlpNetwork& net, const Dataset& data);

// Drops samples lying inside any equality-constrained region (closed
// regions: boundary points are dropped too). Box-shaped vertex sets use
// coordinate bounds; general vertex sets use a nonnegative-least-squares
// convex-combination test.
Dataset filter_equality_regions(const Dataset& data, const RegionSet& regions);

// The fine-tuning loop: assigns a sign map once (cfg.sign_method, then
// uniqueness repair), enforces it, then alternates epochs of mini-batch
// descent on task + lambda * penalty (at 0.1x the configured rate) with
// re-enforcement of the same fixed map. Checkpoints on balanced-loss
// improvement, escalates lambda when patience runs out while V > epsilon,
// stops on tolerance (past min_epochs), patience, or max_epochs, and
// returns the best checkpoint. Enforcement failure aborts: the report
// carries the failing EnforcementReport and the best network so far is
// returned.
std::pair<MlpNetwork, TrainReport> fine_tune(const MlpNetwork& net,
                                             const Dataset& data,
                                             const RegionSet& regions,
                                             const TrainConfig& cfg);

}  // namespace affinefence
