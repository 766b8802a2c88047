#include "respond/types.hpp"

#include <bit>
#include <cctype>
#include <cmath>
#include <string>

namespace respond {

std::string_view to_token(Action a) {
  switch (a) {
    case Action::LaneLeft:
      return "LANE_LEFT";
    case Action::Idle:
      return "IDLE";
    case Action::LaneRight:
      return "LANE_RIGHT";
    case Action::Faster:
      return "FASTER";
    case Action::Slower:
      return "SLOWER";
  }
  return "IDLE";
}

std::optional<Action> action_from_token(std::string_view token) {
  std::string upper;
  upper.reserve(token.size());
  for (char c : token) upper.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
  for (Action a : kAllActions) {
    if (upper == to_token(a)) return a;
  }
  return std::nullopt;
}

int ActionSet::size() const { return std::popcount(static_cast<unsigned>(bits_)); }

std::vector<Action> ActionSet::to_vector() const {
  std::vector<Action> out;
  for (Action a : kAllActions) {
    if (contains(a)) out.push_back(a);
  }
  return out;
}

std::string ActionSet::to_string() const {
  std::string out;
  for (Action a : to_vector()) {
    if (!out.empty()) out += ", ";
    out += to_token(a);
  }
  return out;
}

RoadTopology RoadTopology::uniform(int lanes, double lane_width, double y_min) {
  RoadTopology r;
  r.lane_count = lanes;
  r.lane_width = lane_width;
  r.drivable_y_min = y_min;
  r.drivable_y_max = y_min + lanes * lane_width;
  return r;
}

int RoadTopology::lane_of(double y) const {
  int lane = static_cast<int>(std::floor((y - drivable_y_min) / lane_width));
  if (lane < 0) return 0;
  if (lane >= lane_count) return lane_count - 1;
  return lane;
}

namespace {

bool finite(double v) { return std::isfinite(v); }

}  // namespace

void validate(const VehicleState& v, const RoadTopology& road) {
  if (!finite(v.x) || !finite(v.y) || !finite(v.vx) || !finite(v.vy) || !finite(v.length) || !finite(v.width)) {
    throw EncodingError("vehicle " + std::to_string(v.id) + " has a non-finite state value");
  }
  if (v.length <= 0.0 || v.width <= 0.0) {
    throw EncodingError("vehicle " + std::to_string(v.id) + " has non-positive dimensions");
  }
  if (v.lane_index < 0 || v.lane_index >= road.lane_count) {
    throw EncodingError("vehicle " + std::to_string(v.id) + " has lane index outside the road");
  }
  if (std::abs(v.y - road.lane_center(v.lane_index)) >= road.lane_width / 2.0 + 1e-9) {
    throw EncodingError("vehicle " + std::to_string(v.id) + " lane index inconsistent with lateral position");
  }
}

void validate(const Scene& scene) {
  const RoadTopology& r = scene.road;
  if (r.lane_count < 2 || !(r.lane_width > 0.0)) throw EncodingError("road needs >= 2 lanes of positive width");
  if (std::abs((r.drivable_y_max - r.drivable_y_min) - r.lane_count * r.lane_width) > 1e-6) {
    throw EncodingError("drivable span does not equal lane_count * lane_width");
  }
  validate(scene.ego, r);
  for (const auto& o : scene.others) {
    if (o.id == scene.ego.id) throw EncodingError("ego id appears among surrounding vehicles");
    validate(o, r);
  }
}

RoadTopology mirror_road(const RoadTopology& road) {
  RoadTopology m = road;
  m.drivable_y_min = -road.drivable_y_max;
  m.drivable_y_max = -road.drivable_y_min;
  return m;
}

VehicleState mirror_vehicle(const VehicleState& v, const RoadTopology& road) {
  VehicleState m = v;
  m.y = -v.y;
  m.vy = -v.vy;
  m.lane_index = road.lane_count - 1 - v.lane_index;
  return m;
}

Scene mirror_scene(const Scene& scene) {
  Scene m;
  m.road = mirror_road(scene.road);
  m.timestamp = scene.timestamp;
  m.ego = mirror_vehicle(scene.ego, scene.road);
  m.others.reserve(scene.others.size());
  for (const auto& o : scene.others) m.others.push_back(mirror_vehicle(o, scene.road));
  return m;
}

}  // namespace respond
