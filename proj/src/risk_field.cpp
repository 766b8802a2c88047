#include "respond/risk_field.hpp"

#include <algorithm>
#include <cmath>

namespace respond {

std::string_view zone_name(Zone z) {
  switch (z) {
    case Zone::Front:
      return "front";
    case Zone::Rear:
      return "rear";
    case Zone::LeftFront:
      return "left_front";
    case Zone::LeftRear:
      return "left_rear";
    case Zone::RightFront:
      return "right_front";
    case Zone::RightRear:
      return "right_rear";
  }
  return "front";
}

std::optional<Zone> zone_from_name(std::string_view name) {
  for (Zone z : kAllZones) {
    if (zone_name(z) == name) return z;
  }
  return std::nullopt;
}

Zone mirror_zone(Zone z) {
  switch (z) {
    case Zone::LeftFront:
      return Zone::RightFront;
    case Zone::LeftRear:
      return Zone::RightRear;
    case Zone::RightFront:
      return Zone::LeftFront;
    case Zone::RightRear:
      return Zone::LeftRear;
    default:
      return z;
  }
}

double& DirectionalRisks::operator[](Zone z) {
  switch (z) {
    case Zone::Front:
      return front;
    case Zone::Rear:
      return rear;
    case Zone::LeftFront:
      return left_front;
    case Zone::LeftRear:
      return left_rear;
    case Zone::RightFront:
      return right_front;
    case Zone::RightRear:
      return right_rear;
  }
  throw ContractError("invalid zone id");
}

double DirectionalRisks::operator[](Zone z) const { return const_cast<DirectionalRisks&>(*this)[z]; }

double DirectionalRisks::max() const {
  return std::max({front, rear, left_front, left_rear, right_front, right_rear});
}

DirectionalRisks mirror_risks(const DirectionalRisks& r) {
  DirectionalRisks m = r;
  std::swap(m.left_front, m.right_front);
  std::swap(m.left_rear, m.right_rear);
  return m;
}

namespace {

struct Extent {
  double lo;
  double hi;
};

double forward_reach(const VehicleState& v, const FootprintParams& p) {
  return std::max(v.vx, 0.0) * p.headway_time_s;
}

// Longitudinal extent relative to a reference x.
Extent longitudinal(const VehicleState& v, double dx, const FootprintParams& p) {
  return {dx - v.length / 2.0, dx + v.length / 2.0 + forward_reach(v, p)};
}

double footprint_area(const VehicleState& v, const FootprintParams& p) {
  return (v.length + forward_reach(v, p)) * (v.width + 2.0 * p.lateral_margin_m);
}

double interval_overlap(Extent a, Extent b) { return std::max(0.0, std::min(a.hi, b.hi) - std::max(a.lo, b.lo)); }

// Overlap of [-pa, pa] with [c - pb, c + pb]; depends on |c| only.
double centered_overlap(double pa, double pb, double c) {
  c = std::abs(c);
  return std::max(0.0, std::min(pa, c + pb) - std::max(-pa, c - pb));
}

void check_params(const FootprintParams& p) {
  if (!(p.headway_time_s > 0.0) || !(p.lateral_margin_m >= 0.0) || !std::isfinite(p.headway_time_s) ||
      !std::isfinite(p.lateral_margin_m)) {
    throw ContractError("footprint params require headway_time_s > 0 and lateral_margin_m >= 0");
  }
}

void check_vehicle(const VehicleState& v) {
  if (!std::isfinite(v.x) || !std::isfinite(v.y) || !std::isfinite(v.vx) || !std::isfinite(v.length) ||
      !std::isfinite(v.width)) {
    throw EncodingError("vehicle " + std::to_string(v.id) + " has a non-finite state value");
  }
  if (v.length <= 0.0 || v.width <= 0.0) {
    throw EncodingError("vehicle " + std::to_string(v.id) + " has non-positive dimensions");
  }
}

}  // namespace

RiskFootprint footprint(const VehicleState& vehicle, const FootprintParams& params) {
  check_params(params);
  check_vehicle(vehicle);
  RiskFootprint f;
  f.x_min = vehicle.x - vehicle.length / 2.0;
  f.x_max = vehicle.x + vehicle.length / 2.0 + forward_reach(vehicle, params);
  f.y_min = vehicle.y - vehicle.width / 2.0 - params.lateral_margin_m;
  f.y_max = vehicle.y + vehicle.width / 2.0 + params.lateral_margin_m;
  f.area = (f.x_max - f.x_min) * (f.y_max - f.y_min);
  return f;
}

double overlap_area(const RiskFootprint& a, const RiskFootprint& b) {
  return interval_overlap({a.x_min, a.x_max}, {b.x_min, b.x_max}) *
         interval_overlap({a.y_min, a.y_max}, {b.y_min, b.y_max});
}

double pairwise_risk(const VehicleState& ego, const VehicleState& other, Zone zone, double lane_width,
                     const FootprintParams& params) {
  check_params(params);
  check_vehicle(ego);
  check_vehicle(other);

  double shift = 0.0;
  switch (zone) {
    case Zone::Front:
    case Zone::Rear:
      break;
    case Zone::LeftFront:
    case Zone::LeftRear:
      shift = lane_width;
      break;
    case Zone::RightFront:
    case Zone::RightRear:
      shift = -lane_width;
      break;
    default:
      throw ContractError("invalid zone id");
  }

  // Ego-relative coordinates keep the result invariant under translation and
  // exactly equivariant under y -> -y.
  const double dx = other.x - ego.x;
  const double dy = other.y - ego.y;
  const double len = interval_overlap(longitudinal(ego, 0.0, params), longitudinal(other, dx, params));
  if (len <= 0.0) return 0.0;
  const double half_ego = ego.width / 2.0 + params.lateral_margin_m;
  const double half_other = other.width / 2.0 + params.lateral_margin_m;
  const double wid = centered_overlap(half_ego, half_other, dy - shift);
  if (wid <= 0.0) return 0.0;

  const double reference = is_front_variant(zone) ? footprint_area(ego, params) : footprint_area(other, params);
  return std::clamp(len * wid / reference, 0.0, 1.0);
}

std::optional<Zone> assign_zone(const VehicleState& ego, const VehicleState& other) {
  const int rel = other.lane_index - ego.lane_index;
  const bool ahead = other.x - ego.x >= 0.0;
  switch (rel) {
    case 0:
      return ahead ? Zone::Front : Zone::Rear;
    case 1:
      return ahead ? Zone::LeftFront : Zone::LeftRear;
    case -1:
      return ahead ? Zone::RightFront : Zone::RightRear;
    default:
      return std::nullopt;
  }
}

DirectionalRisks directional_risks(const Scene& scene, const FootprintParams& params) {
  validate(scene);
  DirectionalRisks out;
  for (const auto& other : scene.others) {
    auto zone = assign_zone(scene.ego, other);
    if (!zone) continue;
    double rv = pairwise_risk(scene.ego, other, *zone, scene.road.lane_width, params);
    out[*zone] = std::max(out[*zone], rv);
  }
  return out;
}

double ttc(const VehicleState& follower, const VehicleState& leader) {
  const double gap = (leader.x - follower.x) - (leader.length + follower.length) / 2.0;
  if (gap <= 0.0) return 0.0;
  const double closing = follower.vx - leader.vx;
  if (closing <= 0.0) return kInfiniteTtc;
  return gap / closing;
}

}  // namespace respond
