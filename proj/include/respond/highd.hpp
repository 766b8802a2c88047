#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "respond/context.hpp"
#include "respond/decision.hpp"
#include "respond/llm.hpp"
#include "respond/memory.hpp"

// HighD-schema trajectory ingestion: lane-change mining, rear-TTC labelling
// and counterfactual intervention rollouts.
namespace respond::highd {

/// A required column or file is missing.
class SchemaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The data violates an invariant (frame order, unknown vehicle, bad value).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One row of a tracks file, in the dataset's own frame: x/y is the upper-left
/// bounding-box corner, y grows downward, width is along x and height along y.
struct TrackSample {
  int frame = 0;
  int vehicle_id = 0;
  double x = 0.0;
  double y = 0.0;
  double width = 0.0;
  double height = 0.0;
  double x_velocity = 0.0;
  double y_velocity = 0.0;
  int lane_id = 0;
};

struct Track {
  int id = 0;
  int driving_direction = 2;  // 1: travels toward -x (upper lanes), 2: toward +x
  std::vector<TrackSample> samples;  // contiguous, ascending frames

  int first_frame() const { return samples.front().frame; }
  int last_frame() const { return samples.back().frame; }
  const TrackSample* at(int frame) const;
};

struct RecordingMeta {
  int id = 0;
  double frame_rate = 25.0;
  std::vector<double> upper_markings;  // dataset y, ascending
  std::vector<double> lower_markings;
};

struct Recording {
  RecordingMeta meta;
  std::map<int, Track> tracks;
};

struct RecordingPaths {
  std::filesystem::path tracks;
  std::filesystem::path tracks_meta;
  std::filesystem::path recording_meta;
};

Recording parse_recording(const RecordingPaths& paths);
/// Finds every <prefix>_tracks.csv with its two metadata siblings, sorted by prefix.
std::vector<RecordingPaths> discover(const std::filesystem::path& dir);

/// Travel-direction frame of one driving direction: x forward, y leftward,
/// lane 0 rightmost. Lane widths are averaged from the markings.
RoadTopology road_for(const RecordingMeta& meta, int driving_direction);
VehicleState normalize(const TrackSample& s, int driving_direction, const RoadTopology& road);

enum class LaneChangeDirection { Left, Right };
std::string_view direction_name(LaneChangeDirection d);

struct LaneChangeEvent {
  int recording_id = 0;
  int ego_id = 0;
  int crossing_frame = 0;  // first frame with the new lane id
  LaneChangeDirection direction = LaneChangeDirection::Left;
  int from_lane_id = 0;
  int target_lane_id = 0;
  std::optional<int> rear_vehicle_id;
  // Filled by label_high_risk.
  bool labeled = false;
  double min_rear_ttc = std::numeric_limits<double>::infinity();
  int min_ttc_frame = -1;
  bool high_risk = false;
  /// Smallest TTC seen while the two bodies did not yet overlap laterally;
  /// reported only, never part of the high-risk test.
  double min_pre_overlap_ttc = std::numeric_limits<double>::infinity();
  bool truncated = false;  // a track ended inside the scan window
};

inline constexpr double kHighRiskTtc = 4.0;

std::vector<LaneChangeEvent> find_lane_changes(const Recording& rec);
LaneChangeEvent label_high_risk(LaneChangeEvent event, const Recording& rec, double window_s = 3.0);

struct InterventionContext {
  DecisionContext ctx;
  int frame = 0;
  bool partial = false;
  std::vector<std::string> notes;
  double corridor_min_x = 0.0;  // travel-direction x-range observed for this direction
  double corridor_max_x = 0.0;
};

InterventionContext build_intervention_context(const LaneChangeEvent& event, const Recording& rec,
                                               const EncoderParams& params = {});

enum class Verdict { RespondLowerRisk, Comparable, HumanLowerRisk };
std::string_view verdict_name(Verdict v);
Verdict verdict_for(double delta_risk, double dead_band = 0.05);

struct RolloutParams {
  double horizon_s = 2.0;
  double dt = 0.1;
  double dead_band = 0.05;
  double lane_change_s = 1.0;
  double speed_step = 2.5;  // FASTER / SLOWER change over the first second, m/s
  FootprintParams footprint;
};

struct RolloutResult {
  double cumulative_risk = 0.0;  // sum of RL(t) * dt over the horizon
  bool left_corridor = false;
};

/// Ego follows `action` from the context scene, every other vehicle keeps its
/// velocity. RL(t) = max(front, rear) is integrated at t = dt, 2dt, ..., horizon.
RolloutResult rollout(const Scene& start, Action action, const RolloutParams& params, double corridor_min_x,
                      double corridor_max_x);

struct InterventionReport {
  LaneChangeEvent event;
  Action human_action = Action::LaneLeft;
  Action respond_action = Action::Idle;
  DecisionSource respond_source = DecisionSource::DefaultLLM;
  DirectionalRisks risks_at_decision;
  RiskPattern pattern_at_decision;
  double human_risk = 0.0;
  double respond_risk = 0.0;
  double delta_risk = 0.0;  // human - respond; positive favours RESPOND
  Verdict verdict = Verdict::Comparable;
  bool excluded = false;  // a rollout left the observed corridor
  bool partial = false;
  std::vector<std::string> notes;
};

InterventionReport evaluate_intervention(const LaneChangeEvent& event, const InterventionContext& ictx,
                                         MemoryStore& memory, CompletionBackend& llm,
                                         const RolloutParams& params = {}, const DecisionConfig& config = {});

std::string events_csv(const std::vector<LaneChangeEvent>& events);
nlohmann::json report_json(const InterventionReport& r);
/// Three-way verdict counts over non-excluded reports plus mean delta_risk.
nlohmann::json summary_json(const std::vector<InterventionReport>& reports);

/// Mines and labels every recording under `dir` (recordings in parallel,
/// merged by recording id).
std::vector<LaneChangeEvent> mine_directory(const std::filesystem::path& dir, double window_s = 3.0);

// ---- fixtures ---------------------------------------------------------------

/// One planted lane change: the ego drifts laterally at lateral_speed and the
/// follower in the target lane closes at `closing_speed` up to and including
/// the crossing frame, then matches the ego's speed.
struct PlantedLaneChange {
  int driving_direction = 2;
  int from_lane = 1;  // travel-direction index, 0 rightmost
  LaneChangeDirection direction = LaneChangeDirection::Left;
  double ego_speed = 25.0;
  double lateral_speed = 3.0;  // m/s
  int start_frame = 25;        // lateral motion begins
  bool with_follower = true;
  double gap_at_crossing = 20.0;  // bumper gap to the follower, m
  double closing_speed = 5.0;     // follower minus ego speed before the crossing, m/s
  bool double_change = false;     // a second change in the same direction follows
  int tail_frames = 100;          // frames recorded after the (last) crossing
};

struct FixtureSpec {
  int lanes_per_direction = 3;
  double lane_width = 4.0;
  double frame_rate = 25.0;
  double vehicle_length = 5.0;
  double vehicle_width = 2.0;
  std::vector<PlantedLaneChange> events;  // one recording each
  int lane_keepers = 2;                   // extra vehicles per recording, far from the ego
};

/// Closed-form expectations for one planted change.
struct PlantedExpectation {
  int recording_id = 0;
  int ego_id = 0;
  int crossing_frame = 0;
  LaneChangeDirection direction = LaneChangeDirection::Left;
  std::optional<int> follower_id;
  double min_rear_ttc = std::numeric_limits<double>::infinity();
  bool high_risk = false;
};

/// Writes one CSV triplet per planted event and returns the expectations.
std::vector<PlantedExpectation> write_fixture(const std::filesystem::path& dir, const FixtureSpec& spec);
/// A seeded spec with a mix of high-risk, boundary, non-closing and
/// follower-less events.
FixtureSpec default_fixture_spec(std::uint64_t seed);
nlohmann::json expectations_json(const std::vector<PlantedExpectation>& ex);

}  // namespace respond::highd
