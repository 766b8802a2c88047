#include "respond/json_io.hpp"

namespace respond {

using nlohmann::json;

void to_json(json& j, const VehicleState& v) {
  j = json{{"id", v.id},         {"x", v.x},         {"y", v.y},
           {"vx", v.vx},         {"vy", v.vy},       {"length", v.length},
           {"width", v.width},   {"lane_index", v.lane_index}};
}

void from_json(const json& j, VehicleState& v) {
  v.id = j.at("id").get<int>();
  v.x = j.at("x").get<double>();
  v.y = j.at("y").get<double>();
  v.vx = j.at("vx").get<double>();
  v.vy = j.value("vy", 0.0);
  v.length = j.at("length").get<double>();
  v.width = j.at("width").get<double>();
  v.lane_index = j.at("lane_index").get<int>();
}

void to_json(json& j, const RoadTopology& r) {
  j = json{{"lane_count", r.lane_count},
           {"lane_width", r.lane_width},
           {"drivable_y_min", r.drivable_y_min},
           {"drivable_y_max", r.drivable_y_max}};
}

void from_json(const json& j, RoadTopology& r) {
  r.lane_count = j.at("lane_count").get<int>();
  r.lane_width = j.at("lane_width").get<double>();
  r.drivable_y_min = j.value("drivable_y_min", 0.0);
  r.drivable_y_max = j.value("drivable_y_max", r.drivable_y_min + r.lane_count * r.lane_width);
}

void to_json(json& j, const Scene& s) {
  j = json{{"ego", s.ego}, {"others", s.others}, {"road", s.road}, {"timestamp", s.timestamp}};
}

void from_json(const json& j, Scene& s) {
  s.ego = j.at("ego").get<VehicleState>();
  s.others = j.at("others").get<std::vector<VehicleState>>();
  s.road = j.at("road").get<RoadTopology>();
  s.timestamp = j.value("timestamp", 0.0);
}

void to_json(json& j, const DirectionalRisks& r) {
  j = json::object();
  for (Zone z : kAllZones) j[std::string(zone_name(z))] = r[z];
}

void from_json(const json& j, DirectionalRisks& r) {
  for (Zone z : kAllZones) r[z] = j.at(std::string(zone_name(z))).get<double>();
}

json pattern_to_json(const RiskPattern& p) {
  json rows = json::array();
  for (int r = 0; r < kRows; ++r) {
    json row = json::array();
    for (int c = 0; c < kCols; ++c) row.push_back(static_cast<int>(p.at(r, c)));
    rows.push_back(row);
  }
  return rows;
}

RiskPattern pattern_from_json(const json& j) {
  std::vector<int> values;
  for (const auto& row : j) {
    for (const auto& c : row) values.push_back(c.get<int>());
  }
  return unflatten(std::span<const int>(values));
}

void to_json(json& j, const Frame& f) {
  j = json{{"scene", f.scene}, {"pattern", pattern_to_json(f.pattern)}, {"risks", f.risks}};
}

void from_json(const json& j, Frame& f) {
  f.scene = j.at("scene").get<Scene>();
  f.pattern = pattern_from_json(j.at("pattern"));
  f.vector = flatten(f.pattern);
  f.risks = j.at("risks").get<DirectionalRisks>();
}

json actions_to_json(ActionSet s) {
  json a = json::array();
  for (Action x : s.to_vector()) a.push_back(std::string(to_token(x)));
  return a;
}

}  // namespace respond
