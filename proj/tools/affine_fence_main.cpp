#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <iomanip>
#include <iostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "affinefence/experiments.hpp"
#include "affinefence/model_io.hpp"
#include "affinefence/parallel.hpp"

namespace af = affinefence;
using nlohmann::json;

namespace {

// Everything thrown as ConfigError (or std::invalid_argument from the
// library's precondition checks) exits with code 2; other failures exit 1.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::uint64_t env_seed() {
  const char* v = std::getenv("AFFINE_FENCE_SEED");
  if (!v || *v == '\0') return 0;
  try {
    return std::stoull(v);
  } catch (const std::exception&) {
    throw ConfigError("AFFINE_FENCE_SEED: not an unsigned integer");
  }
}

const char* stop_reason_name(af::StopReason reason) {
  switch (reason) {
    case af::StopReason::tolerance_met:
      return "tolerance_met";
    case af::StopReason::patience_exhausted:
      return "patience_exhausted";
    case af::StopReason::max_epochs:
      return "max_epochs";
    case af::StopReason::aborted:
      return "aborted";
  }
  return "unknown";
}

af::ExperimentKind kind_from_string(const std::string& name) {
  if (name == "sin_regression") return af::ExperimentKind::sin_regression;
  if (name == "spiral_classification")
    return af::ExperimentKind::spiral_classification;
  if (name == "nonconvex_saddle") return af::ExperimentKind::nonconvex_saddle;
  if (name == "bias_only_demo") return af::ExperimentKind::bias_only_demo;
  if (name == "hull_demo") return af::ExperimentKind::hull_demo;
  throw ConfigError(
      "config.experiment: unknown experiment '" + name +
      "' (expected sin_regression, spiral_classification, nonconvex_saddle, "
      "bias_only_demo or hull_demo)");
}

void reject_unknown_keys(const json& obj,
                         const std::vector<std::string>& known,
                         const std::string& prefix) {
  for (auto it = obj.begin(); it != obj.end(); ++it)
    if (std::find(known.begin(), known.end(), it.key()) == known.end())
      throw ConfigError(prefix + it.key() + ": unknown field");
}

const json& field(const json& obj, const char* key, const std::string& prefix) {
  auto it = obj.find(key);
  if (it == obj.end()) throw ConfigError(prefix + key + ": required");
  return *it;
}

double num_field(const json& obj, const char* key, const std::string& prefix) {
  const json& v = field(obj, key, prefix);
  if (!v.is_number()) throw ConfigError(prefix + key + ": expected a number");
  return v.get<double>();
}

std::size_t count_field(const json& obj, const char* key,
                        const std::string& prefix) {
  const json& v = field(obj, key, prefix);
  if (!v.is_number_unsigned())
    throw ConfigError(prefix + key + ": expected a nonnegative integer");
  return v.get<std::size_t>();
}

bool bool_field(const json& obj, const char* key, const std::string& prefix) {
  const json& v = field(obj, key, prefix);
  if (!v.is_boolean()) throw ConfigError(prefix + key + ": expected a boolean");
  return v.get<bool>();
}

std::string string_field(const json& obj, const char* key,
                         const std::string& prefix) {
  const json& v = field(obj, key, prefix);
  if (!v.is_string()) throw ConfigError(prefix + key + ": expected a string");
  return v.get<std::string>();
}

void parse_train_overrides(const json& t, af::TrainConfig& cfg) {
  if (!t.is_object()) throw ConfigError("config.train: expected an object");
  const std::string prefix = "config.train.";
  reject_unknown_keys(
      t,
      {"learning_rate", "batch_size", "pretrain_epochs", "min_epochs",
       "max_epochs", "patience", "lambda_init", "lambda_max",
       "penalty_multiplier", "violation_tolerance", "filter_equality_data",
       "sign_method", "margin", "qp_tolerance", "qp_max_iter"},
      prefix);

  if (t.contains("learning_rate"))
    cfg.learning_rate = num_field(t, "learning_rate", prefix);
  if (t.contains("batch_size"))
    cfg.batch_size = count_field(t, "batch_size", prefix);
  if (t.contains("pretrain_epochs"))
    cfg.pretrain_epochs = count_field(t, "pretrain_epochs", prefix);
  if (t.contains("min_epochs"))
    cfg.min_epochs = count_field(t, "min_epochs", prefix);
  if (t.contains("max_epochs"))
    cfg.max_epochs = count_field(t, "max_epochs", prefix);
  if (t.contains("patience"))
    cfg.patience_threshold = count_field(t, "patience", prefix);
  if (t.contains("lambda_init"))
    cfg.lambda_init = num_field(t, "lambda_init", prefix);
  if (t.contains("lambda_max"))
    cfg.lambda_max = num_field(t, "lambda_max", prefix);
  if (t.contains("penalty_multiplier"))
    cfg.penalty_multiplier = num_field(t, "penalty_multiplier", prefix);
  if (t.contains("violation_tolerance"))
    cfg.violation_tolerance = num_field(t, "violation_tolerance", prefix);
  if (t.contains("filter_equality_data"))
    cfg.filter_equality_data = bool_field(t, "filter_equality_data", prefix);
  if (t.contains("sign_method")) {
    const std::string m = string_field(t, "sign_method", prefix);
    if (m == "majority")
      cfg.sign_method = af::SignMethod::majority;
    else if (m == "mean")
      cfg.sign_method = af::SignMethod::mean;
    else
      throw ConfigError(prefix + "sign_method: expected 'majority' or 'mean'");
  }
  if (t.contains("margin")) {
    cfg.enforce.margin = num_field(t, "margin", prefix);
    if (cfg.enforce.margin < 0.0)
      throw ConfigError(prefix + "margin: must be >= 0");
  }
  if (t.contains("qp_tolerance"))
    cfg.enforce.qp_tolerance = num_field(t, "qp_tolerance", prefix);
  if (t.contains("qp_max_iter"))
    cfg.enforce.qp_max_iter = count_field(t, "qp_max_iter", prefix);
}

af::ExperimentSpec parse_spec(const json& cfg, std::uint64_t cli_seed) {
  if (!cfg.is_object())
    throw ConfigError("config: top level must be a JSON object");
  const std::string prefix = "config.";
  reject_unknown_keys(cfg,
                      {"experiment", "seed", "dims", "activation_slope",
                       "dataset_size", "noise", "out_dir", "certify_samples",
                       "regions", "train"},
                      prefix);

  const af::ExperimentKind kind =
      kind_from_string(string_field(cfg, "experiment", prefix));
  std::uint64_t seed = cli_seed;
  if (cfg.contains("seed")) seed = count_field(cfg, "seed", prefix);

  af::ExperimentSpec spec = af::default_spec(kind, seed);

  if (cfg.contains("dims")) {
    const json& dims = cfg.at("dims");
    if (!dims.is_array() || dims.size() < 3)
      throw ConfigError(
          "config.dims: expected an array of at least three layer widths");
    spec.dims.clear();
    for (const json& v : dims) {
      if (!v.is_number_unsigned() || v.get<std::size_t>() == 0)
        throw ConfigError("config.dims: widths must be positive integers");
      spec.dims.push_back(v.get<std::size_t>());
    }
  }
  if (cfg.contains("activation_slope"))
    spec.activation_slope = num_field(cfg, "activation_slope", prefix);
  if (cfg.contains("dataset_size"))
    spec.dataset_size = count_field(cfg, "dataset_size", prefix);
  if (cfg.contains("noise")) spec.noise = num_field(cfg, "noise", prefix);
  if (cfg.contains("out_dir"))
    spec.out_dir = string_field(cfg, "out_dir", prefix);
  if (cfg.contains("certify_samples"))
    spec.certify_samples = count_field(cfg, "certify_samples", prefix);

  if (cfg.contains("regions")) {
    try {
      spec.regions = af::regions_from_json(cfg.at("regions"));
    } catch (const std::exception& e) {
      throw ConfigError(std::string("config.regions: ") + e.what());
    }
  }

  if (cfg.contains("train")) parse_train_overrides(cfg.at("train"), spec.train);
  spec.train.seed = seed;
  return spec;
}

json load_config(const std::string& path) {
  try {
    return af::load_json_file(path);
  } catch (const json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

int cmd_train(const std::string& config_path, const std::string& out_override,
              std::uint64_t seed) {
  const json cfg = load_config(config_path);
  af::ExperimentSpec spec = parse_spec(cfg, seed);
  if (!out_override.empty()) spec.out_dir = out_override;

  const af::ExperimentResult res = af::run_experiment(spec);

  std::cout << "baseline violation: " << res.baseline_violation << '\n'
            << "final violation:    " << res.final_violation
            << "  (tolerance " << spec.train.violation_tolerance << ")\n"
            << "stop reason:        "
            << stop_reason_name(res.finetune_report.stop_reason) << '\n'
            << "certified:          " << (res.certified ? "yes" : "no") << '\n';
  if (res.heldout_accuracy > 0.0)
    std::cout << "held-out accuracy:  " << res.heldout_accuracy << '\n';
  if (!spec.out_dir.empty())
    std::cout << "artifacts:          " << spec.out_dir << '\n';
  std::cout << (res.success ? "result: success" : "result: failure") << '\n';
  return res.success ? 0 : 1;
}

struct EnforceArgs {
  std::string model_path;
  std::string regions_path;
  std::string out_path;
  std::string report_path;
  std::string method = "majority";
  double margin = 0.0;
};

int cmd_enforce(const EnforceArgs& a) {
  const af::ModelBundle bundle = af::load_model(a.model_path);
  af::RegionSet regions;
  if (!a.regions_path.empty())
    regions = af::load_regions(a.regions_path);
  else if (bundle.regions)
    regions = *bundle.regions;
  else
    throw ConfigError(
        "enforce: no --regions file and none embedded in the model");

  const af::RegionPreActivations preacts =
      af::propagate_vertices(bundle.net, regions);
  af::SignMap map = a.method == "mean" ? af::assign_mean(preacts)
                                       : af::assign_majority(preacts);
  map = af::ensure_unique(map, preacts);

  af::EnforceConfig cfg;
  cfg.margin = a.margin;
  auto [enforced, report] = af::enforce_signs(bundle.net, regions, map, cfg);

  if (!a.report_path.empty())
    af::write_json_file(a.report_path, af::enforcement_report_to_json(report));

  if (!report.success()) {
    for (const af::QpFailure& f : report.qp_failures)
      std::cerr << "infeasible neuron: layer " << f.layer << ", neuron "
                << f.neuron << '\n';
    std::cerr << "enforcement failed; model left unchanged\n";
    return 1;
  }

  af::save_model(a.out_path, enforced, map, regions);
  std::cout << "total parameter shift: " << report.total_shift << '\n'
            << "worst margin deficit:  " << report.worst_margin_deficit << '\n'
            << "wrote " << a.out_path << '\n';
  return 0;
}

void print_counterexample(const af::MlpNetwork& net,
                          const af::ConvexRegion& region,
                          const af::ActivationPattern& expected,
                          std::size_t n_samples, std::uint64_t seed) {
  const auto print_point = [](const char* what, std::size_t index,
                              const af::Vector& x) {
    std::cout << "  counterexample " << what << ' ' << index << " at (";
    for (std::size_t j = 0; j < x.size(); ++j)
      std::cout << (j ? ", " : "") << x[j];
    std::cout << "): realized pattern differs from the assigned one\n";
  };
  for (std::size_t i = 0; i < region.vertex_count(); ++i) {
    const af::Vector x = region.vertices.row(i);
    if (af::activation_pattern_at(net, x) != expected) {
      print_point("vertex", i, x);
      return;
    }
  }
  const af::Matrix samples = af::sample_interior(region, n_samples, seed);
  for (std::size_t i = 0; i < samples.rows; ++i) {
    const af::Vector x = samples.row(i);
    if (af::activation_pattern_at(net, x) != expected) {
      print_point("sample", i, x);
      return;
    }
  }
}

struct VerifyArgs {
  std::string model_path;
  std::string regions_path;
  std::string signmap_path;
  std::size_t samples = 10000;
};

int cmd_verify(const VerifyArgs& a, std::uint64_t seed) {
  const af::ModelBundle bundle = af::load_model(a.model_path);
  af::RegionSet regions;
  if (!a.regions_path.empty())
    regions = af::load_regions(a.regions_path);
  else if (bundle.regions)
    regions = *bundle.regions;
  else
    throw ConfigError(
        "verify: no --regions file and none embedded in the model");

  af::SignMap map;
  if (!a.signmap_path.empty())
    map = af::load_signmap(a.signmap_path, regions);
  else if (bundle.map)
    map = *bundle.map;
  else
    throw ConfigError(
        "verify: no --signmap file and none embedded in the model");
  if (map.region_count() != regions.regions.size())
    throw ConfigError("verify: sign map does not cover every region");

  std::cout << std::left << std::setw(16) << "region" << std::setw(10)
            << "constant" << std::setw(10) << "matched" << std::setw(14)
            << "residual" << std::setw(14) << "violation" << "samples\n";

  bool all_ok = true;
  for (std::size_t i = 0; i < regions.regions.size(); ++i) {
    const af::ConvexRegion& region = regions.regions[i];
    const std::uint64_t region_seed = seed + i;
    const af::AffinityReport r = af::certify_region(
        bundle.net, region, map.patterns[i], a.samples, region_seed);
    std::cout << std::left << std::setw(16) << r.region_id << std::setw(10)
              << (r.pattern_constant ? "yes" : "no") << std::setw(10)
              << (r.assigned_pattern_matched ? "yes" : "no") << std::setw(14)
              << r.affine_residual << std::setw(14)
              << r.sampled_constraint_violation << r.samples_used << '\n';
    const bool ok = r.pattern_constant && r.assigned_pattern_matched &&
                    r.affine_residual <= 1e-9;
    if (!r.pattern_constant || !r.assigned_pattern_matched)
      print_counterexample(bundle.net, region, map.patterns[i], a.samples,
                           region_seed);
    all_ok = all_ok && ok;
  }

  const bool distinct = af::certify_distinct(map);
  std::cout << "patterns pairwise distinct: " << (distinct ? "yes" : "no")
            << '\n';
  return (all_ok && distinct) ? 0 : 1;
}

struct BenchArgs {
  std::vector<std::size_t> widths = {64, 128, 256};
  std::vector<std::size_t> depths = {1, 2, 3};
  std::vector<std::size_t> regions = {2, 4, 8};
  std::string out_path = "bench.csv";
};

int cmd_bench(const BenchArgs& a, std::uint64_t seed) {
  const std::vector<af::BenchRow> rows =
      af::run_bench(a.widths, a.depths, a.regions, seed);
  af::write_bench_csv(a.out_path, rows);

  std::cout << "N_Regions,Total_Vertices,Net_Width,Num_Hidden_L,T_Assign_s,"
               "T_Enforce_s\n";
  std::size_t failures = 0;
  for (const af::BenchRow& r : rows) {
    std::cout << r.n_regions << ',' << r.total_vertices << ',' << r.net_width
              << ',' << r.num_hidden_layers << ',' << r.t_assign_s << ','
              << r.t_enforce_s << '\n';
    failures += r.qp_failures;
  }
  if (failures > 0)
    std::cerr << "warning: " << failures
              << " infeasible neuron(s) across the sweep\n";
  std::cout << "wrote " << a.out_path << '\n';
  return 0;
}

int cmd_demo_bias_only(const std::string& out_dir, std::uint64_t seed) {
  af::ExperimentSpec spec =
      af::default_spec(af::ExperimentKind::bias_only_demo, seed);
  spec.out_dir = out_dir;
  const af::ExperimentResult res = af::run_experiment(spec);

  if (!res.bias_only) {
    std::cerr << "demo did not produce a bias-only result\n";
    return 1;
  }
  std::cout << "bias-only enforcement: "
            << (res.bias_only->feasible ? "feasible" : "infeasible") << '\n';
  if (!res.bias_only->feasible)
    std::cout << "  conflicting bias bounds at layer " << res.bias_only->layer
              << ", neuron " << res.bias_only->neuron << ": b >= "
              << res.bias_only->lower << " and b <= " << res.bias_only->upper
              << '\n';
  if (res.full_enforce)
    std::cout << "full weight+bias enforcement: "
              << (res.full_enforce->success() ? "success" : "failure")
              << " (total shift " << res.full_enforce->total_shift << ")\n";
  std::cout << "regions certified: " << (res.certified ? "yes" : "no") << '\n';
  return res.success ? 0 : 1;
}

int cmd_demo_hull(const std::string& out_dir, std::uint64_t seed) {
  af::ExperimentSpec spec = af::default_spec(af::ExperimentKind::hull_demo, seed);
  spec.out_dir = out_dir;
  const af::ExperimentResult res = af::run_experiment(spec);

  for (const af::HullReport& h : res.hulls)
    std::cout << "hull(" << h.region_a << ", " << h.region_b
              << "): pattern constant = "
              << (h.hull_pattern_constant ? "yes" : "no")
              << ", affine residual = " << h.hull_affine_residual << '\n';
  std::cout << "the shared-pattern run must collapse the hull, the "
               "distinct-pattern run must not\n"
            << "regions certified: " << (res.certified ? "yes" : "no") << '\n';
  return res.success ? 0 : 1;
}

int run_cli(int argc, char** argv) {
  CLI::App app{
      "affine-fence: train and adjust piecewise-affine networks so chosen "
      "convex input regions provably map through a single affine piece"};
  app.require_subcommand(1);

  std::uint64_t seed = env_seed();
  int jobs = 1;
  app.add_option("--seed", seed,
                 "Seed for all randomness (env AFFINE_FENCE_SEED)");
  app.add_option("--jobs", jobs, "Worker threads for the parallel kernels")
      ->check(CLI::PositiveNumber);

  std::string train_config, train_out;
  CLI::App* train = app.add_subcommand(
      "train", "Run a training experiment from a JSON config");
  train->fallthrough();
  train->add_option("config", train_config, "Experiment config (JSON)")
      ->required()
      ->check(CLI::ExistingFile);
  train->add_option("--out", train_out,
                    "Artifact directory (overrides config out_dir)");

  EnforceArgs enforce_args;
  CLI::App* enforce = app.add_subcommand(
      "enforce", "Assign signs and pin them with minimal-norm updates");
  enforce->fallthrough();
  enforce->add_option("--model", enforce_args.model_path, "Model file (JSON)")
      ->required()
      ->check(CLI::ExistingFile);
  enforce->add_option("--regions", enforce_args.regions_path,
                      "Region file (JSON); defaults to regions embedded in "
                      "the model")
      ->check(CLI::ExistingFile);
  enforce->add_option("--out", enforce_args.out_path, "Adjusted model path")
      ->required();
  enforce->add_option("--report", enforce_args.report_path,
                      "Enforcement report path (JSON)");
  enforce->add_option("--method", enforce_args.method,
                      "Sign assignment rule")
      ->check(CLI::IsMember({"majority", "mean"}))
      ->capture_default_str();
  enforce->add_option("--margin", enforce_args.margin,
                      "Strict margin delta for pinned signs")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();

  VerifyArgs verify_args;
  CLI::App* verify = app.add_subcommand(
      "verify", "Certify localized affine behavior by exhaustive sampling");
  verify->fallthrough();
  verify->add_option("--model", verify_args.model_path, "Model file (JSON)")
      ->required()
      ->check(CLI::ExistingFile);
  verify->add_option("--regions", verify_args.regions_path,
                     "Region file (JSON); defaults to regions embedded in "
                     "the model")
      ->check(CLI::ExistingFile);
  verify->add_option("--signmap", verify_args.signmap_path,
                     "Sign map file (JSON); defaults to the map embedded in "
                     "the model")
      ->check(CLI::ExistingFile);
  verify->add_option("--samples", verify_args.samples,
                     "Interior samples per region")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();

  BenchArgs bench_args;
  CLI::App* bench = app.add_subcommand(
      "bench", "Time sign assignment and enforcement across architectures");
  bench->fallthrough();
  bench->add_option("--widths", bench_args.widths, "Hidden layer widths")
      ->check(CLI::PositiveNumber);
  bench->add_option("--depths", bench_args.depths, "Hidden layer counts")
      ->check(CLI::PositiveNumber);
  bench->add_option("--regions", bench_args.regions, "Region counts")
      ->check(CLI::PositiveNumber);
  bench->add_option("--out", bench_args.out_path, "Output CSV path")
      ->capture_default_str();

  CLI::App* demo = app.add_subcommand("demo", "Built-in demonstrations");
  demo->require_subcommand(1);
  std::string demo_out;
  CLI::App* demo_bias = demo->add_subcommand(
      "bias-only",
      "Bias-only enforcement hits conflicting bounds; full updates succeed");
  demo_bias->fallthrough();
  demo_bias->add_option("--out", demo_out, "Artifact directory");
  CLI::App* demo_hull = demo->add_subcommand(
      "hull",
      "Sharing one pattern across two regions collapses their convex hull "
      "into a single affine piece");
  demo_hull->fallthrough();
  demo_hull->add_option("--out", demo_out, "Artifact directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  af::set_max_jobs(jobs);

  if (train->parsed()) return cmd_train(train_config, train_out, seed);
  if (enforce->parsed()) return cmd_enforce(enforce_args);
  if (verify->parsed()) return cmd_verify(verify_args, seed);
  if (bench->parsed()) return cmd_bench(bench_args, seed);
  if (demo->parsed()) {
    if (demo_bias->parsed()) return cmd_demo_bias_only(demo_out, seed);
    if (demo_hull->parsed()) return cmd_demo_hull(demo_out, seed);
  }
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run_cli(argc, argv);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
