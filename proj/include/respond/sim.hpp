#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "respond/context.hpp"
#include "respond/decision.hpp"
#include "respond/llm.hpp"
#include "respond/memory.hpp"
#include "respond/reflection.hpp"

namespace respond::sim {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Intelligent-driver car-following parameters for surrounding traffic.
struct IdmParams {
  double max_accel = 1.5;      // m/s^2
  double comfort_decel = 2.0;  // m/s^2
  double min_gap = 2.0;        // m
  double headway = 1.2;        // s
  double exponent = 4.0;
  double max_decel = 6.0;  // physical braking limit, m/s^2
};

struct SimConfig {
  int lanes = 4;
  double lane_width = 4.0;
  double density = 2.0;
  std::uint64_t seed = 0;
  int decision_steps = 30;
  int decision_hz = 1;
  int physics_hz = 10;

  double traffic_speed_min = 20.0;
  double traffic_speed_max = 28.0;
  double ego_initial_speed = 25.0;
  double ego_v_max = 35.0;
  int ego_lane = -1;  // -1: drawn from the seed

  double speed_step = 2.5;            // FASTER / SLOWER target increment, m/s
  double speed_time_constant = 0.5;   // first-order speed response, s
  double lane_change_duration = 1.0;  // s
  double corridor_length = 400.0;     // spawn corridor centered on the ego, m
  double min_spawn_gap = 15.0;        // bumper-to-bumper, same lane, m
  double vehicle_length = 5.0;
  double vehicle_width = 2.0;

  double cut_in_rate = 0.0;     // probability per adjacent vehicle per decision step
  double cut_in_min_gap = 5.0;  // projected bumper gap to the ego required for a cut-in, m
  double cut_in_range = 40.0;   // only vehicles this far ahead of the ego cut in, m

  IdmParams idm;
  EncoderParams encoder;
  DecisionConfig decision;

  /// Throws ConfigError on inconsistent values.
  void validate() const;
  int substeps_per_decision() const { return physics_hz / decision_hz; }
  double dt() const { return 1.0 / physics_hz; }
};

void to_json(nlohmann::json& j, const SimConfig& c);
/// Missing keys keep their defaults; unknown keys are rejected.
void from_json(const nlohmann::json& j, SimConfig& c);
SimConfig load_config(const std::string& path);

/// Scripted behaviour of one surrounding vehicle, used for crash fixtures.
struct VehicleScript {
  /// HoldSpeed freezes the vehicle's speed and disables its car following.
  enum class Kind { HardBrake, LaneChange, HoldSpeed };
  int vehicle_id = 0;
  double start_time = 0.0;
  Kind kind = Kind::HardBrake;
  double decel = 8.0;   // HardBrake, m/s^2
  int direction = 1;    // LaneChange: +1 left, -1 right
  double duration = 1.0;  // LaneChange, s
  bool fired = false;
};

struct SimVehicle {
  VehicleState state;
  double desired_speed = 0.0;  // IDM free-road speed; ego: target speed
  bool changing_lane = false;
  int target_lane = 0;
  double lc_from_y = 0.0;
  double lc_to_y = 0.0;
  double lc_elapsed = 0.0;
  double lc_duration = 1.0;
  std::optional<double> forced_decel;  // scripted hard brake
};

struct World {
  SimVehicle ego;
  std::vector<SimVehicle> others;  // ascending id
  RoadTopology road;
  double time = 0.0;
  std::vector<VehicleScript> scripts;
  std::mt19937_64 rng;

  Scene scene() const;
};

/// Bumper-to-bumper gap between two vehicles in the same lane (negative when overlapping).
double bumper_gap(const VehicleState& a, const VehicleState& b);

/// Seeded initial world; ceil(density * lanes * 2) vehicles over the corridor.
World spawn_traffic(const SimConfig& config, std::mt19937_64& rng);
World spawn_traffic(const SimConfig& config);

/// Hand-built world for fixtures: the ego plus explicit surrounding vehicles.
World make_world(const SimConfig& config, const VehicleState& ego, const std::vector<VehicleState>& others,
                 std::vector<VehicleScript> scripts = {});

struct Collision {
  VehicleState ego;
  VehicleState collider;
};

/// First vehicle (by id) whose body strictly overlaps the ego's.
std::optional<Collision> detect_collision(const World& world);

/// Applies the ego action at a decision boundary, then integrates one decision
/// interval at physics_hz. Stops at the first collision and returns it.
std::optional<Collision> step_physics(World& world, Action ego_action, const SimConfig& config);

/// Draws seeded cut-ins for the coming decision interval.
void trigger_cut_ins(World& world, const SimConfig& config);

/// Seeded forced-crash setups for reflection tests. Executing `action` from
/// the initial world collides within the first decision steps.
enum class CrashClass { LeadHardBrake, LeftCutIn, RightCutIn };
inline constexpr std::array<CrashClass, 3> kAllCrashClasses = {CrashClass::LeadHardBrake, CrashClass::LeftCutIn,
                                                               CrashClass::RightCutIn};
std::string_view crash_class_name(CrashClass c);
std::optional<CrashClass> crash_class_from_name(std::string_view name);

struct CrashScenario {
  CrashClass kind = CrashClass::LeadHardBrake;
  SimConfig config;
  World world;
  std::vector<Action> actions;  // scripted ego actions; the last repeats
};

CrashScenario crash_scenario(CrashClass kind, std::uint64_t seed);

// ---- episodes ---------------------------------------------------------------

class Agent {
 public:
  virtual ~Agent() = default;
  virtual Decision act(const DecisionContext& ctx) = 0;
};

/// The full hybrid pipeline over a shared memory store and backend.
class RespondAgent final : public Agent {
 public:
  RespondAgent(MemoryStore& memory, CompletionBackend& llm, DecisionConfig config = {})
      : memory_(memory), llm_(llm), config_(config) {}
  Decision act(const DecisionContext& ctx) override { return decide(ctx, memory_, llm_, config_); }

 private:
  MemoryStore& memory_;
  CompletionBackend& llm_;
  DecisionConfig config_;
};

/// Replays a fixed action list (the last action repeats).
class ScriptedAgent final : public Agent {
 public:
  explicit ScriptedAgent(std::vector<Action> actions) : actions_(std::move(actions)) {}
  Decision act(const DecisionContext& ctx) override;

 private:
  std::vector<Action> actions_;
  std::size_t next_ = 0;
};

struct StepLog {
  int step = 0;
  double time = 0.0;
  std::string pattern;  // inline rendering
  PatternVector vector;
  DirectionalRisks risks;
  double risk_level = 0.0;
  Regime regime = Regime::LowRisk;
  DecisionSource source = DecisionSource::DefaultLLM;
  ActionSet allowed;
  Action proposed = Action::Idle;
  Action action = Action::Idle;
  int llm_calls = 0;
  double ego_speed = 0.0;
  int ego_lane = 0;
  double latency_ms = 0.0;
  bool paused = false;
};

nlohmann::json step_to_json(const StepLog& s, bool include_latency);

/// Invoked after each decision; may replace the executed action (returns it).
using StepHook = std::function<Action(const DecisionContext& ctx, const Decision& decision, StepLog& log)>;

struct EpisodeOptions {
  std::string episode_id = "episode";
  std::optional<std::string> profile;
  AblationFlags flags;
  StepHook hook;
  std::function<bool()> cancelled;  // polled before each decision step
};

struct EpisodeResult {
  std::string episode_id;
  int completed_steps = 0;
  bool collided = false;
  bool cancelled = false;
  std::optional<CrashRecord> crash;
  double avg_speed = 0.0;
  std::vector<StepLog> decision_log;
  int llm_call_total = 0;
  std::array<int, kAllSources.size()> source_histogram{};
  int memory_reuse_steps = 0;  // ExactReuse + IdleReuse
  int l2_guided_steps = 0;     // SubPatternConstrained + PersonalizedStyle + MaskedLLM

  int histogram(DecisionSource s) const { return source_histogram[static_cast<std::size_t>(s)]; }
};

/// Runs decision steps from `world` until collision or decision_steps.
EpisodeResult run_episode(const SimConfig& config, World world, Agent& agent, const EpisodeOptions& options = {});
/// Spawns seeded traffic from config.seed, then runs.
EpisodeResult run_episode(const SimConfig& config, Agent& agent, const EpisodeOptions& options = {});

/// Writes the low-risk IDLE steps of a collision-free episode to Layer 1
/// (provenance Episode) so later visits can reuse them without an LLM call.
/// Returns the number of entries created or refreshed.
std::size_t record_experience(const EpisodeResult& result, MemoryStore& memory, double confidence = 0.6);

/// Line-delimited JSON episode log; latency is omitted unless requested so
/// logs stay byte-reproducible.
std::string episode_log(const EpisodeResult& result, bool include_latency = false);

// ---- suites -----------------------------------------------------------------

struct AgentVariant {
  std::string name;
  AblationFlags flags;
  std::optional<std::string> profile;

  static AgentVariant full() { return {"Full (L1+L2)", {}, std::nullopt}; }
  static AgentVariant l1_only() { return {"L1 Only", {.disable_l2 = true}, std::nullopt}; }
  static AgentVariant no_memory() { return {"No Memory", {.disable_l1 = true, .disable_l2 = true}, std::nullopt}; }
  static AgentVariant no_risk_values() { return {"Without Risk Value", {.disable_risk_values = true}, std::nullopt}; }
  static AgentVariant ann_l1() { return {"ANN L1", {.ann_l1 = true}, std::nullopt}; }
};

struct SuiteCell {
  std::string label;
  SimConfig config;
};

struct SuiteOptions {
  int episodes = 20;
  /// Warm-up episodes (own seed stream) run with reflection before the
  /// evaluated episodes; their results are not reported.
  int training_episodes = 0;
  bool reflection = true;
  bool record_experience = false;  // see record_experience()
  std::uint64_t mock_seed = 0;
  bool adversarial = false;
  std::shared_ptr<const MemoryStore> initial_memory;
  /// Backend factory per (variant, cell); defaults to the mock.
  std::function<Backends()> backends;
  int jobs = 0;  // 0: one worker per hardware thread
};

struct SuiteRow {
  std::string variant;
  std::string cell;
  int episodes = 0;
  int successes = 0;
  int collisions = 0;
  double success_rate = 0.0;  // fraction
  double mean_avg_speed = 0.0;
  double llm_calls_per_step = 0.0;
  int steps = 0;
  int memory_reuse_steps = 0;
  std::array<int, kAllSources.size()> source_histogram{};
  int reflections = 0;          // during evaluated episodes
  int training_collisions = 0;  // during warm-up
  MemoryStats memory;
  std::vector<EpisodeResult> results;  // per episode, in seed order
};

std::uint64_t episode_seed(std::uint64_t base_seed, int episode_index);
/// Seed stream for warm-up episodes, disjoint in practice from episode_seed.
std::uint64_t training_seed(std::uint64_t base_seed, int episode_index);

std::vector<SuiteRow> run_suite(const std::vector<SuiteCell>& cells, const std::vector<AgentVariant>& variants,
                                const SuiteOptions& options);

std::string suite_csv(const std::vector<SuiteRow>& rows);
std::string suite_table(const std::vector<SuiteRow>& rows);

}  // namespace respond::sim
