#pragma once

#include <optional>
#include <string>

#include <json.hpp>

#include "affinefence/enforce.hpp"
#include "affinefence/network.hpp"
#include "affinefence/regions.hpp"
#include "affinefence/signs.hpp"
#include "affinefence/trainer.hpp"
#include "affinefence/verifier.hpp"

namespace affinefence {

// JSON model schema v1: activation slope, layer dims, nested weight/bias
// arrays, optionally an embedded sign map and region definitions. Doubles
// serialize in shortest round-trip decimal form, so load(save(net))
// reproduces the network bit-exactly.
nlohmann::json network_to_json(const MlpNetwork& net);
MlpNetwork network_from_json(const nlohmann::json& j);

nlohmann::json regions_to_json(const RegionSet& regions);
RegionSet regions_from_json(const nlohmann::json& j);

// Sign maps serialize keyed by region id; loading realigns the patterns to
// the given region order and rejects missing ids.
nlohmann::json signmap_to_json(const SignMap& map);
SignMap signmap_from_json(const nlohmann::json& j, const RegionSet& regions);

struct ModelBundle {
  MlpNetwork net;
  std::optional<SignMap> map;
  std::optional<RegionSet> regions;
};

void save_model(const std::string& path, const MlpNetwork& net,
                const std::optional<SignMap>& map = {},
                const std::optional<RegionSet>& regions = {});
ModelBundle load_model(const std::string& path);

void save_regions(const std::string& path, const RegionSet& regions);
RegionSet load_regions(const std::string& path);

void save_signmap(const std::string& path, const SignMap& map);
SignMap load_signmap(const std::string& path, const RegionSet& regions);

nlohmann::json enforcement_report_to_json(const EnforcementReport& report);
nlohmann::json train_report_to_json(const TrainReport& report);
nlohmann::json affinity_report_to_json(const AffinityReport& report);
nlohmann::json hull_report_to_json(const HullReport& report);

// epoch, task_loss, V, lambda, L_balanced rows.
void write_curves_csv(const std::string& path, const TrainReport& report);

nlohmann::json load_json_file(const std::string& path);
void write_json_file(const std::string& path, const nlohmann::json& j);

}  // namespace affinefence
