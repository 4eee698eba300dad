#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "affinefence/enforce.hpp"
#include "affinefence/trainer.hpp"
#include "affinefence/verifier.hpp"

namespace affinefence {

enum class ExperimentKind {
  sin_regression,
  spiral_classification,
  nonconvex_saddle,
  bias_only_demo,
  hull_demo,
};

struct ExperimentSpec {
  ExperimentKind kind = ExperimentKind::sin_regression;
  std::vector<std::size_t> dims;  // network architecture, input first
  double activation_slope = 0.01;
  std::size_t dataset_size = 0;  // samples (or per class for the spirals)
  double noise = 0.0;            // target noise (sin) or coordinate noise (spiral)
  TrainConfig train;
  std::optional<RegionSet> regions;  // overrides the experiment default
  std::string out_dir;               // artifacts skipped when empty
  std::size_t certify_samples = 10000;
};

// Canonical parameters for each experiment (architecture, dataset size,
// epochs, tolerance); the CLI layers config-file overrides on top.
ExperimentSpec default_spec(ExperimentKind kind, std::uint64_t seed);

struct ExperimentResult {
  MlpNetwork baseline;  // after pretraining only
  MlpNetwork net;       // final constrained model
  SignMap map;
  RegionSet regions;
  TrainReport pretrain_report;
  TrainReport finetune_report;
  std::vector<AffinityReport> certifications;
  std::vector<HullReport> hulls;                  // hull demo
  std::optional<BiasOnlyResult> bias_only;        // bias-only demo
  std::optional<EnforcementReport> full_enforce;  // bias-only demo, QP path
  double baseline_violation = 0.0;
  double final_violation = 0.0;
  double baseline_mse_outside = 0.0;  // task loss off the constrained regions
  double final_mse_outside = 0.0;
  double heldout_accuracy = 0.0;  // spiral
  bool certified = false;  // all regions single-polytope on assigned patterns
  bool success = false;
};

// y = sin x on an even n-point grid over [0, 2pi].
Dataset gen_sin_dataset(std::size_t n, double noise, std::uint64_t seed);

// The two constrained intervals of the regression task: R1 = [pi/3, 3pi/4]
// pinned to sin(pi/3), R2 = [pi + pi/3, pi + 3pi/4] capped at -0.5.
RegionSet sin_regions();

// Two intertwined spirals (angle in (0, 3pi], radius proportional to angle,
// class 1 rotated by pi), Gaussian coordinate noise, coordinates scaled
// into [-1, 1]^2. Labels are 0/1.
Dataset gen_spiral_dataset(std::size_t n_per_class, double noise,
                           std::uint64_t seed);

// Affinity-only squares of side 0.3 straddling opposite spiral arms.
RegionSet spiral_regions();

// y = x1^2 - x2^2 on uniform random points in [-1, 1]^2.
Dataset gen_saddle_dataset(std::size_t n, std::uint64_t seed);

// Two abutting boxes separated by `gap` along the first axis, both pinned
// to output 0; their shared face approximates a non-convex (touching) set.
RegionSet saddle_regions(double gap = 10.0 *
                                      std::numeric_limits<double>::epsilon());

ExperimentResult run_experiment(const ExperimentSpec& spec);

struct BenchRow {
  std::size_t n_regions = 0;
  std::size_t total_vertices = 0;
  std::size_t net_width = 0;
  std::size_t num_hidden_layers = 0;
  double t_assign_s = 0.0;
  double t_enforce_s = 0.0;
  std::size_t qp_failures = 0;  // kept out of the CSV schema
};

// Times sign assignment and enforcement for every combination: n 4-d boxes
// of 16 vertices each, disjoint along the first axis, against a fresh
// random network of the given width/depth.
std::vector<BenchRow> run_bench(const std::vector<std::size_t>& widths,
                                const std::vector<std::size_t>& depths,
                                const std::vector<std::size_t>& region_counts,
                                std::uint64_t seed);

// Header: N_Regions,Total_Vertices,Net_Width,Num_Hidden_L,T_Assign_s,T_Enforce_s
void write_bench_csv(const std::string& path,
                     const std::vector<BenchRow>& rows);

// Dense evaluation dump for external plotting: grid inputs and network
// outputs, one row per point.
void write_predictions_csv(const std::string& path, const MlpNetwork& net,
                           const Vector& lo, const Vector& hi,
                           std::size_t points_per_axis);

}  // namespace affinefence
