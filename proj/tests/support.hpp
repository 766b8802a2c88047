#pragma once
// Scene builders and independent oracles shared by the unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

#include "respond/pattern.hpp"
#include "respond/risk_field.hpp"
#include "respond/sim.hpp"
#include "respond/types.hpp"

namespace testsupport {

using namespace respond;

inline VehicleState car(int id, int lane, double x, double vx, const RoadTopology& road, double length = 5.0,
                        double width = 2.0) {
  VehicleState v;
  v.id = id;
  v.lane_index = lane;
  v.x = x;
  v.y = road.lane_center(lane);
  v.vx = vx;
  v.length = length;
  v.width = width;
  return v;
}

inline Scene scene_with(int lanes, int ego_lane, double ego_vx, std::vector<VehicleState> others = {}) {
  Scene s;
  s.road = RoadTopology::uniform(lanes, 4.0);
  s.ego = car(0, ego_lane, 0.0, ego_vx, s.road);
  s.others = std::move(others);
  return s;
}

/// Axis-aligned rectangle built straight from the footprint definition:
/// body extended forward by vx * headway, padded laterally by the margin.
struct Rect {
  double x0, x1, y0, y1;
  double area() const { return (x1 - x0) * (y1 - y0); }
};

inline Rect oracle_footprint(const VehicleState& v, double headway = 1.2, double margin = 0.25, double dy = 0.0) {
  return {v.x - v.length / 2.0, v.x + v.length / 2.0 + v.vx * headway, v.y + dy - v.width / 2.0 - margin,
          v.y + dy + v.width / 2.0 + margin};
}

/// Stratified Monte-Carlo estimate of area(a ∩ b) / area(ref): one jittered
/// sample per cell of an n x n grid laid over `ref`.
inline double mc_overlap_ratio(const Rect& ref, const Rect& other, int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double cw = (ref.x1 - ref.x0) / n, ch = (ref.y1 - ref.y0) / n;
  std::uint64_t hits = 0;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const double x = ref.x0 + (i + u(rng)) * cw;
      const double y = ref.y0 + (j + u(rng)) * ch;
      if (x > other.x0 && x < other.x1 && y > other.y0 && y < other.y1) ++hits;
    }
  }
  return static_cast<double>(hits) / (static_cast<double>(n) * n);
}

/// A simulator scene: seeded traffic advanced a few decision steps with a
/// seeded random action stream, so lane changes are caught mid-transition.
inline Scene random_sim_scene(std::uint64_t seed) {
  sim::SimConfig c;
  c.seed = seed;
  c.lanes = 3 + static_cast<int>(seed % 3);
  c.density = 1.5 + 0.5 * static_cast<double>(seed % 4);
  c.cut_in_rate = 0.1;
  std::mt19937_64 rng(seed * 7919 + 1);
  sim::World w = sim::spawn_traffic(c, rng);
  const int steps = static_cast<int>(seed % 4);
  for (int k = 0; k < steps; ++k) {
    const Action a = kAllActions[rng() % kAllActions.size()];
    sim::trigger_cut_ins(w, c);
    if (sim::step_physics(w, a, c)) break;
  }
  return w.scene();
}

/// Scratch directory under the build tree, emptied on construction.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("respond-test-" + name + "-" + std::to_string(::getpid()));
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace testsupport
