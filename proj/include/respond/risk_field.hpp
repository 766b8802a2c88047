#pragma once

#include <array>
#include <limits>
#include <string_view>

#include "respond/types.hpp"

namespace respond {

/// Parameters of the speed-extended rectangular risk footprint.
struct FootprintParams {
  double headway_time_s = 1.2;
  double lateral_margin_m = 0.25;
};

/// Axis-aligned bounds of a vehicle's extended risk region.
struct RiskFootprint {
  double x_min = 0.0;
  double x_max = 0.0;
  double y_min = 0.0;
  double y_max = 0.0;
  double area = 0.0;
};

enum class Zone : int { Front, Rear, LeftFront, LeftRear, RightFront, RightRear };

inline constexpr std::array<Zone, 6> kAllZones = {Zone::Front,    Zone::Rear,       Zone::LeftFront,
                                                  Zone::LeftRear, Zone::RightFront, Zone::RightRear};

std::string_view zone_name(Zone z);  // "front", "left_rear", ...
std::optional<Zone> zone_from_name(std::string_view name);
Zone mirror_zone(Zone z);
constexpr bool is_front_variant(Zone z) {
  return z == Zone::Front || z == Zone::LeftFront || z == Zone::RightFront;
}

/// Six normalized directional risk values, each in [0, 1].
struct DirectionalRisks {
  double front = 0.0;
  double rear = 0.0;
  double left_front = 0.0;
  double left_rear = 0.0;
  double right_front = 0.0;
  double right_rear = 0.0;

  double& operator[](Zone z);
  double operator[](Zone z) const;
  double max() const;
  double left_max() const { return left_front > left_rear ? left_front : left_rear; }
  double right_max() const { return right_front > right_rear ? right_front : right_rear; }
  bool operator==(const DirectionalRisks&) const = default;
};

DirectionalRisks mirror_risks(const DirectionalRisks& r);

/// Footprint interface; the rectangle model is the only registered variant.
/// Covers the body, extended forward by vx * headway and padded laterally.
RiskFootprint footprint(const VehicleState& vehicle, const FootprintParams& params);

/// Area of the intersection of two footprints (0 when disjoint or touching).
double overlap_area(const RiskFootprint& a, const RiskFootprint& b);

/// Normalized footprint overlap for `other` assigned to `zone`, clamped to [0,1].
/// Lateral zones shift the ego footprint one lane width toward `other` first.
double pairwise_risk(const VehicleState& ego, const VehicleState& other, Zone zone, double lane_width,
                     const FootprintParams& params);

/// Zone of `other` relative to `ego`, or nullopt when two or more lanes away.
std::optional<Zone> assign_zone(const VehicleState& ego, const VehicleState& other);

DirectionalRisks directional_risks(const Scene& scene, const FootprintParams& params);

inline constexpr double kInfiniteTtc = std::numeric_limits<double>::infinity();

/// Time to collision of `follower` into `leader` (same lane, leader ahead).
double ttc(const VehicleState& follower, const VehicleState& leader);

}  // namespace respond
