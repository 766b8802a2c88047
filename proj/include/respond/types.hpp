#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace respond {

/// Raised when a caller violates an operation's documented precondition.
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a scene cannot be encoded (non-finite or inconsistent state).
class EncodingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Discrete meta-actions of the tactical layer.
enum class Action : std::uint8_t { LaneLeft, Idle, LaneRight, Faster, Slower };

inline constexpr std::array<Action, 5> kAllActions = {
    Action::LaneLeft, Action::Idle, Action::LaneRight, Action::Faster, Action::Slower};

std::string_view to_token(Action a);
std::optional<Action> action_from_token(std::string_view token);

/// LANE_LEFT <-> LANE_RIGHT; every other action is a fixed point.
constexpr Action mirror_action(Action a) {
  switch (a) {
    case Action::LaneLeft:
      return Action::LaneRight;
    case Action::LaneRight:
      return Action::LaneLeft;
    default:
      return a;
  }
}

constexpr bool is_lane_change(Action a) { return a == Action::LaneLeft || a == Action::LaneRight; }

/// Small value-type set over the five actions, iterated in enumeration order.
class ActionSet {
 public:
  constexpr ActionSet() = default;
  constexpr ActionSet(std::initializer_list<Action> actions) {
    for (Action a : actions) insert(a);
  }
  static constexpr ActionSet all() {
    return ActionSet{Action::LaneLeft, Action::Idle, Action::LaneRight, Action::Faster, Action::Slower};
  }

  constexpr void insert(Action a) { bits_ |= bit(a); }
  constexpr void erase(Action a) { bits_ &= static_cast<std::uint8_t>(~bit(a)); }
  constexpr bool contains(Action a) const { return (bits_ & bit(a)) != 0; }
  constexpr bool empty() const { return bits_ == 0; }
  int size() const;
  std::vector<Action> to_vector() const;
  std::string to_string() const;  // "IDLE, FASTER, SLOWER"

  constexpr ActionSet operator&(ActionSet o) const { return from_bits(bits_ & o.bits_); }
  constexpr ActionSet operator|(ActionSet o) const { return from_bits(bits_ | o.bits_); }
  constexpr bool operator==(const ActionSet&) const = default;
  constexpr bool is_subset_of(ActionSet o) const { return (bits_ & ~o.bits_) == 0; }

 private:
  static constexpr std::uint8_t bit(Action a) { return static_cast<std::uint8_t>(1u << static_cast<unsigned>(a)); }
  static constexpr ActionSet from_bits(unsigned b) {
    ActionSet s;
    s.bits_ = static_cast<std::uint8_t>(b);
    return s;
  }
  std::uint8_t bits_ = 0;
};

struct VehicleState {
  int id = 0;
  double x = 0.0;   // longitudinal, m, increasing in travel direction
  double y = 0.0;   // lateral, m, increasing leftward
  double vx = 0.0;  // m/s
  double vy = 0.0;  // m/s
  double length = 5.0;
  double width = 2.0;
  int lane_index = 0;  // 0 = rightmost
};

struct RoadTopology {
  int lane_count = 4;
  double lane_width = 4.0;
  double drivable_y_min = 0.0;
  double drivable_y_max = 16.0;

  static RoadTopology uniform(int lanes, double lane_width, double y_min = 0.0);

  double lane_center(int lane) const { return drivable_y_min + (lane + 0.5) * lane_width; }
  /// Lane containing lateral position y, clamped to the drivable lanes.
  int lane_of(double y) const;
  bool is_leftmost(int lane) const { return lane == lane_count - 1; }
  bool is_rightmost(int lane) const { return lane == 0; }
};

struct Scene {
  VehicleState ego;
  std::vector<VehicleState> others;
  RoadTopology road;
  double timestamp = 0.0;
};

/// Throws EncodingError on non-finite state, non-positive dimensions, or a
/// lane index inconsistent with the lateral position.
void validate(const VehicleState& v, const RoadTopology& road);
void validate(const Scene& scene);

/// Lateral mirror: y -> -y, vy -> -vy, lanes reindexed right-to-left.
VehicleState mirror_vehicle(const VehicleState& v, const RoadTopology& road);
RoadTopology mirror_road(const RoadTopology& road);
Scene mirror_scene(const Scene& scene);

}  // namespace respond
