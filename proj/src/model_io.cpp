#include "affinefence/model_io.hpp"

#include <fstream>
#include <stdexcept>

namespace affinefence {

namespace {

using nlohmann::json;

json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (std::size_t i = 0; i < m.rows; ++i) {
    json row = json::array();
    for (std::size_t j = 0; j < m.cols; ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Matrix matrix_from_json(const json& j, const char* what) {
  if (!j.is_array() || j.empty() || !j.front().is_array())
    throw std::invalid_argument(std::string(what) +
                                ": expected a nested array");
  Matrix m(j.size(), j.front().size());
  for (std::size_t i = 0; i < m.rows; ++i) {
    if (j[i].size() != m.cols)
      throw std::invalid_argument(std::string(what) + ": ragged rows");
    for (std::size_t k = 0; k < m.cols; ++k) m(i, k) = j[i][k].get<double>();
  }
  return m;
}

Vector vector_from_json(const json& j, const char* what) {
  if (!j.is_array())
    throw std::invalid_argument(std::string(what) + ": expected an array");
  Vector v(j.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = j[i].get<double>();
  return v;
}

}  // namespace

nlohmann::json network_to_json(const MlpNetwork& net) {
  json j;
  j["schema_version"] = 1;
  j["activation_slope"] = net.activation_slope;
  json dims = json::array();
  dims.push_back(net.input_dim);
  for (const LayerParams& layer : net.layers) dims.push_back(layer.biases.size());
  j["dims"] = std::move(dims);
  json layers = json::array();
  for (const LayerParams& layer : net.layers) {
    json jl;
    jl["weights"] = matrix_to_json(layer.weights);
    jl["biases"] = layer.biases;
    layers.push_back(std::move(jl));
  }
  j["layers"] = std::move(layers);
  return j;
}

MlpNetwork network_from_json(const nlohmann::json& j) {
  if (!j.contains("layers") || !j.contains("activation_slope"))
    throw std::invalid_argument("model: missing 'layers' or 'activation_slope'");
  if (j.value("schema_version", 1) != 1)
    throw std::invalid_argument("model: unsupported schema_version");

  MlpNetwork net;
  net.activation_slope = j.at("activation_slope").get<double>();
  for (const json& jl : j.at("layers")) {
    LayerParams layer;
    layer.weights = matrix_from_json(jl.at("weights"), "model weights");
    layer.biases = vector_from_json(jl.at("biases"), "model biases");
    if (layer.weights.rows != layer.biases.size())
      throw std::invalid_argument("model: weight rows != bias length");
    net.layers.push_back(std::move(layer));
  }
  if (net.layers.size() < 2)
    throw std::invalid_argument("model: need at least two layers");
  for (std::size_t l = 0; l + 1 < net.layers.size(); ++l)
    if (net.layers[l].weights.rows != net.layers[l + 1].weights.cols)
      throw std::invalid_argument("model: layer dims do not chain");
  net.input_dim = net.layers.front().weights.cols;
  net.output_dim = net.layers.back().weights.rows;
  return net;
}

nlohmann::json regions_to_json(const RegionSet& regions) {
  json arr = json::array();
  for (const ConvexRegion& r : regions.regions) {
    json jr;
    jr["id"] = r.id;
    jr["vertices"] = matrix_to_json(r.vertices);
    if (r.equality) {
      jr["equality"] = {{"e", matrix_to_json(r.equality->e)},
                        {"f", r.equality->f}};
    }
    if (r.inequality) {
      jr["inequality"] = {{"c", matrix_to_json(r.inequality->c)},
                          {"d", r.inequality->d}};
    }
    arr.push_back(std::move(jr));
  }
  return arr;
}

RegionSet regions_from_json(const nlohmann::json& j) {
  if (!j.is_array())
    throw std::invalid_argument("regions: expected an array of regions");
  std::vector<ConvexRegion> out;
  for (const json& jr : j) {
    if (!jr.contains("id") || !jr.contains("vertices"))
      throw std::invalid_argument("regions: entry missing 'id' or 'vertices'");
    std::optional<EqualityConstraint> eq;
    if (jr.contains("equality")) {
      eq = EqualityConstraint{
          matrix_from_json(jr.at("equality").at("e"), "equality e"),
          vector_from_json(jr.at("equality").at("f"), "equality f")};
    }
    std::optional<InequalityConstraint> ineq;
    if (jr.contains("inequality")) {
      ineq = InequalityConstraint{
          matrix_from_json(jr.at("inequality").at("c"), "inequality c"),
          vector_from_json(jr.at("inequality").at("d"), "inequality d")};
    }
    out.push_back(make_region(jr.at("id").get<std::string>(),
                              matrix_from_json(jr.at("vertices"), "vertices"),
                              std::move(eq), std::move(ineq)));
  }
  return make_region_set(std::move(out));
}

nlohmann::json signmap_to_json(const SignMap& map) {
  json j = json::object();
  for (std::size_t i = 0; i < map.region_ids.size(); ++i) {
    json layers = json::array();
    for (const std::vector<int>& layer : map.patterns[i])
      layers.push_back(layer);
    j[map.region_ids[i]] = std::move(layers);
  }
  return j;
}

SignMap signmap_from_json(const nlohmann::json& j, const RegionSet& regions) {
  SignMap map;
  for (const ConvexRegion& r : regions.regions) {
    if (!j.contains(r.id))
      throw std::invalid_argument("sign map: no entry for region '" + r.id +
                                  "'");
    ActivationPattern pattern;
    for (const json& jl : j.at(r.id)) {
      std::vector<int> layer;
      for (const json& js : jl) {
        const int s = js.get<int>();
        if (s != 1 && s != -1)
          throw std::invalid_argument("sign map: signs must be +1 or -1");
        layer.push_back(s);
      }
      pattern.push_back(std::move(layer));
    }
    map.region_ids.push_back(r.id);
    map.patterns.push_back(std::move(pattern));
  }
  return map;
}

nlohmann::json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read '" + path + "'");
  json j;
  in >> j;
  return j;
}

void write_json_file(const std::string& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << j.dump(2) << '\n';
}

void save_model(const std::string& path, const MlpNetwork& net,
                const std::optional<SignMap>& map,
                const std::optional<RegionSet>& regions) {
  json j = network_to_json(net);
  if (map) j["sign_map"] = signmap_to_json(*map);
  if (regions) j["regions"] = regions_to_json(*regions);
  write_json_file(path, j);
}

ModelBundle load_model(const std::string& path) {
  const json j = load_json_file(path);
  ModelBundle bundle;
  bundle.net = network_from_json(j);
  if (j.contains("regions")) bundle.regions = regions_from_json(j["regions"]);
  if (j.contains("sign_map")) {
    if (!bundle.regions)
      throw std::invalid_argument(
          "model: sign_map embedded without region definitions");
    bundle.map = signmap_from_json(j["sign_map"], *bundle.regions);
  }
  return bundle;
}

void save_regions(const std::string& path, const RegionSet& regions) {
  write_json_file(path, regions_to_json(regions));
}

RegionSet load_regions(const std::string& path) {
  return regions_from_json(load_json_file(path));
}

void save_signmap(const std::string& path, const SignMap& map) {
  write_json_file(path, signmap_to_json(map));
}

SignMap load_signmap(const std::string& path, const RegionSet& regions) {
  return signmap_from_json(load_json_file(path), regions);
}

nlohmann::json enforcement_report_to_json(const EnforcementReport& report) {
  json j;
  j["adjustment_norms"] = report.adjustment_norms;
  j["total_shift"] = report.total_shift;
  j["worst_margin_deficit"] = report.worst_margin_deficit;
  j["layer_seconds"] = report.layer_seconds;
  json failures = json::array();
  for (const QpFailure& f : report.qp_failures) {
    const char* status = f.status == QpStatus::infeasible ? "infeasible"
                                                          : "iteration_limit";
    failures.push_back({{"layer", f.layer},
                        {"neuron", f.neuron},
                        {"status", status}});
  }
  j["qp_failures"] = std::move(failures);
  return j;
}

nlohmann::json train_report_to_json(const TrainReport& report) {
  json j;
  j["task_loss"] = report.task_loss;
  j["violation"] = report.violation;
  j["lambda"] = report.lambda_history;
  j["balanced_loss"] = report.balanced_history;
  switch (report.stop_reason) {
    case StopReason::tolerance_met: j["stop_reason"] = "tolerance_met"; break;
    case StopReason::patience_exhausted:
      j["stop_reason"] = "patience_exhausted";
      break;
    case StopReason::max_epochs: j["stop_reason"] = "max_epochs"; break;
    case StopReason::aborted: j["stop_reason"] = "aborted"; break;
  }
  j["best_epoch"] = report.best_epoch;
  j["best_balanced"] = report.best_balanced;
  j["pretrain_seconds"] = report.pretrain_seconds;
  j["finetune_seconds"] = report.finetune_seconds;
  j["enforcement_seconds"] = report.enforcement_seconds;
  j["margin_deficits"] = report.margin_deficits;
  j["aborted"] = report.aborted;
  if (report.enforcement_failure)
    j["enforcement_failure"] =
        enforcement_report_to_json(*report.enforcement_failure);
  return j;
}

nlohmann::json affinity_report_to_json(const AffinityReport& report) {
  return {{"region_id", report.region_id},
          {"pattern_constant", report.pattern_constant},
          {"assigned_pattern_matched", report.assigned_pattern_matched},
          {"degenerate_fit", report.degenerate_fit},
          {"affine_residual", report.affine_residual},
          {"sampled_constraint_violation", report.sampled_constraint_violation},
          {"samples_used", report.samples_used}};
}

nlohmann::json hull_report_to_json(const HullReport& report) {
  return {{"region_a", report.region_a},
          {"region_b", report.region_b},
          {"hull_pattern_constant", report.hull_pattern_constant},
          {"hull_affine_residual", report.hull_affine_residual}};
}

void write_curves_csv(const std::string& path, const TrainReport& report) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out.precision(12);
  out << "epoch,task_loss,V,lambda,L_balanced\n";
  for (std::size_t i = 0; i < report.task_loss.size(); ++i) {
    out << (i + 1) << ',' << report.task_loss[i] << ','
        << report.violation[i] << ',' << report.lambda_history[i] << ','
        << report.balanced_history[i] << '\n';
  }
}

}  // namespace affinefence
