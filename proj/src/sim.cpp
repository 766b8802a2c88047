#include "respond/sim.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <future>
#include <set>
#include <sstream>
#include <thread>

#include "respond/json_io.hpp"

namespace respond::sim {

using nlohmann::json;

void SimConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("invalid sim config: " + what); };
  if (lanes < 1) fail("lanes must be >= 1");
  if (!(lane_width > 0)) fail("lane_width must be positive");
  if (!(density >= 0) || !std::isfinite(density)) fail("density must be a finite non-negative number");
  if (decision_steps < 1) fail("decision_steps must be >= 1");
  if (decision_hz < 1 || physics_hz < 1) fail("rates must be >= 1 Hz");
  if (physics_hz % decision_hz != 0) fail("physics_hz must be a multiple of decision_hz");
  if (traffic_speed_min < 0 || traffic_speed_max < traffic_speed_min) fail("traffic speed range is empty");
  if (ego_initial_speed < 0 || ego_initial_speed > ego_v_max) fail("ego_initial_speed outside [0, ego_v_max]");
  if (ego_lane >= lanes) fail("ego_lane outside the road");
  if (!(speed_time_constant > 0) || !(lane_change_duration > 0)) fail("time constants must be positive");
  if (!(corridor_length > 0) || min_spawn_gap < 0) fail("corridor_length / min_spawn_gap");
  if (!(vehicle_length > 0) || !(vehicle_width > 0) || vehicle_width > lane_width) fail("vehicle dimensions");
  if (cut_in_rate < 0 || cut_in_rate > 1) fail("cut_in_rate must be in [0, 1]");
  if (!(idm.max_accel > 0) || !(idm.comfort_decel > 0) || !(idm.max_decel > 0)) fail("idm accelerations");
}

#define RESPOND_SIM_FIELDS(X)                                                                                    \
  X(lanes) X(lane_width) X(density) X(seed) X(decision_steps) X(decision_hz) X(physics_hz) X(traffic_speed_min) \
  X(traffic_speed_max) X(ego_initial_speed) X(ego_v_max) X(ego_lane) X(speed_step) X(speed_time_constant)      \
  X(lane_change_duration) X(corridor_length) X(min_spawn_gap) X(vehicle_length) X(vehicle_width) X(cut_in_rate) \
  X(cut_in_min_gap) X(cut_in_range)

void to_json(json& j, const SimConfig& c) {
  j = json::object();
#define X(f) j[#f] = c.f;
  RESPOND_SIM_FIELDS(X)
#undef X
  j["idm"] = {{"max_accel", c.idm.max_accel},   {"comfort_decel", c.idm.comfort_decel},
              {"min_gap", c.idm.min_gap},       {"headway", c.idm.headway},
              {"exponent", c.idm.exponent},     {"max_decel", c.idm.max_decel}};
  j["encoder"] = {{"headway_time_s", c.encoder.footprint.headway_time_s},
                  {"lateral_margin_m", c.encoder.footprint.lateral_margin_m},
                  {"proximity_m", c.encoder.proximity_m}};
  j["decision"] = {{"tau", c.decision.tau},
                   {"tau_lat", c.decision.tau_lat},
                   {"idle_reuse_min_confidence", c.decision.idle_reuse_min_confidence}};
}

namespace {

template <typename T>
void read_field(const json& j, const char* key, T& out) {
  if (auto it = j.find(key); it != j.end()) it->get_to(out);
}

void reject_unknown(const json& j, std::initializer_list<std::string_view> known, const std::string& where) {
  for (const auto& [key, _] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw ConfigError("unknown key '" + key + "' in " + where);
    }
  }
}

}  // namespace

void from_json(const json& j, SimConfig& c) {
  if (!j.is_object()) throw ConfigError("sim config must be a JSON object");
  reject_unknown(j,
                 {
#define X(f) #f,
                     RESPOND_SIM_FIELDS(X)
#undef X
                         "idm",
                     "encoder", "decision"},
                 "sim config");
  try {
#define X(f) read_field(j, #f, c.f);
    RESPOND_SIM_FIELDS(X)
#undef X
    if (auto it = j.find("idm"); it != j.end()) {
      reject_unknown(*it, {"max_accel", "comfort_decel", "min_gap", "headway", "exponent", "max_decel"}, "idm");
      read_field(*it, "max_accel", c.idm.max_accel);
      read_field(*it, "comfort_decel", c.idm.comfort_decel);
      read_field(*it, "min_gap", c.idm.min_gap);
      read_field(*it, "headway", c.idm.headway);
      read_field(*it, "exponent", c.idm.exponent);
      read_field(*it, "max_decel", c.idm.max_decel);
    }
    if (auto it = j.find("encoder"); it != j.end()) {
      reject_unknown(*it, {"headway_time_s", "lateral_margin_m", "proximity_m"}, "encoder");
      read_field(*it, "headway_time_s", c.encoder.footprint.headway_time_s);
      read_field(*it, "lateral_margin_m", c.encoder.footprint.lateral_margin_m);
      read_field(*it, "proximity_m", c.encoder.proximity_m);
    }
    if (auto it = j.find("decision"); it != j.end()) {
      reject_unknown(*it, {"tau", "tau_lat", "idle_reuse_min_confidence"}, "decision");
      read_field(*it, "tau", c.decision.tau);
      read_field(*it, "tau_lat", c.decision.tau_lat);
      read_field(*it, "idle_reuse_min_confidence", c.decision.idle_reuse_min_confidence);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("sim config: ") + e.what());
  }
}

#undef RESPOND_SIM_FIELDS

SimConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path + ": " + e.what());
  }
  SimConfig c = j.get<SimConfig>();
  c.validate();
  return c;
}

// ---- world ------------------------------------------------------------------

Scene World::scene() const {
  Scene s;
  s.road = road;
  s.timestamp = time;
  s.ego = ego.state;
  s.ego.lane_index = road.lane_of(ego.state.y);
  s.others.reserve(others.size());
  for (const auto& o : others) {
    VehicleState v = o.state;
    v.lane_index = road.lane_of(v.y);
    s.others.push_back(v);
  }
  return s;
}

double bumper_gap(const VehicleState& a, const VehicleState& b) {
  return std::abs(a.x - b.x) - (a.length + b.length) / 2.0;
}

namespace {

SimVehicle make_vehicle(const VehicleState& s) {
  SimVehicle v;
  v.state = s;
  v.desired_speed = s.vx;
  v.target_lane = s.lane_index;
  return v;
}

}  // namespace

World spawn_traffic(const SimConfig& config, std::mt19937_64& rng) {
  config.validate();
  World w;
  w.road = RoadTopology::uniform(config.lanes, config.lane_width);

  int ego_lane = config.ego_lane;
  if (ego_lane < 0) ego_lane = std::uniform_int_distribution<int>(0, config.lanes - 1)(rng);
  VehicleState ego;
  ego.id = 0;
  ego.x = 0.0;
  ego.y = w.road.lane_center(ego_lane);
  ego.vx = config.ego_initial_speed;
  ego.length = config.vehicle_length;
  ego.width = config.vehicle_width;
  ego.lane_index = ego_lane;
  w.ego = make_vehicle(ego);

  const int count = static_cast<int>(std::ceil(config.density * config.lanes * 2.0 - 1e-9));
  const double pitch = config.vehicle_length + config.min_spawn_gap;
  // Each lane holds at most floor((L + gap) / pitch) vehicles; the ego takes one slot.
  const int per_lane = static_cast<int>(std::floor((config.corridor_length + config.min_spawn_gap) / pitch));
  if (count > per_lane * config.lanes - 1) {
    throw ConfigError("infeasible packing: " + std::to_string(count) + " vehicles exceed corridor capacity " +
                      std::to_string(per_lane * config.lanes - 1));
  }

  std::uniform_int_distribution<int> lane_dist(0, config.lanes - 1);
  std::uniform_real_distribution<double> x_dist(-config.corridor_length / 2.0 + config.vehicle_length / 2.0,
                                                config.corridor_length / 2.0 - config.vehicle_length / 2.0);
  std::uniform_real_distribution<double> v_dist(config.traffic_speed_min, config.traffic_speed_max);
  std::vector<std::vector<double>> occupied(static_cast<std::size_t>(config.lanes));
  occupied[static_cast<std::size_t>(ego_lane)].push_back(0.0);

  constexpr int kMaxAttempts = 2000;
  for (int i = 1; i <= count; ++i) {
    bool placed = false;
    for (int attempt = 0; attempt < kMaxAttempts && !placed; ++attempt) {
      const int lane = lane_dist(rng);
      const double x = x_dist(rng);
      auto& xs = occupied[static_cast<std::size_t>(lane)];
      const bool clear = std::all_of(xs.begin(), xs.end(), [&](double ox) {
        return std::abs(ox - x) - config.vehicle_length >= config.min_spawn_gap;
      });
      if (!clear) continue;
      xs.push_back(x);
      VehicleState v;
      v.id = i;
      v.x = x;
      v.y = w.road.lane_center(lane);
      v.vx = v_dist(rng);
      v.length = config.vehicle_length;
      v.width = config.vehicle_width;
      v.lane_index = lane;
      w.others.push_back(make_vehicle(v));
      placed = true;
    }
    if (!placed) {
      throw ConfigError("infeasible packing: could not place vehicle " + std::to_string(i) + " of " +
                        std::to_string(count) + " with the gap rule");
    }
  }
  w.rng = rng;
  return w;
}

World spawn_traffic(const SimConfig& config) {
  std::mt19937_64 rng(config.seed);
  return spawn_traffic(config, rng);
}

World make_world(const SimConfig& config, const VehicleState& ego, const std::vector<VehicleState>& others,
                 std::vector<VehicleScript> scripts) {
  config.validate();
  World w;
  w.road = RoadTopology::uniform(config.lanes, config.lane_width);
  w.ego = make_vehicle(ego);
  for (const auto& o : others) w.others.push_back(make_vehicle(o));
  std::sort(w.others.begin(), w.others.end(), [](const SimVehicle& a, const SimVehicle& b) {
    return a.state.id < b.state.id;
  });
  w.scripts = std::move(scripts);
  w.rng.seed(config.seed);
  validate(w.scene());
  return w;
}

std::optional<Collision> detect_collision(const World& world) {
  const VehicleState& e = world.ego.state;
  const SimVehicle* hit = nullptr;
  for (const auto& o : world.others) {
    const VehicleState& v = o.state;
    const bool overlap = std::abs(v.x - e.x) < (v.length + e.length) / 2.0 &&
                         std::abs(v.y - e.y) < (v.width + e.width) / 2.0;
    if (overlap && (hit == nullptr || v.id < hit->state.id)) hit = &o;
  }
  if (hit == nullptr) return std::nullopt;
  Scene s = world.scene();
  Collision c{s.ego, {}};
  for (const auto& v : s.others) {
    if (v.id == hit->state.id) c.collider = v;
  }
  return c;
}

namespace {

bool begin_lane_change(SimVehicle& v, const RoadTopology& road, int direction, double duration) {
  if (v.changing_lane) return false;
  const int lane = road.lane_of(v.state.y);
  const int target = lane + direction;
  if (target < 0 || target >= road.lane_count) return false;
  v.changing_lane = true;
  v.target_lane = target;
  v.lc_from_y = v.state.y;
  v.lc_to_y = road.lane_center(target);
  v.lc_elapsed = 0.0;
  v.lc_duration = duration;
  v.state.vy = (v.lc_to_y - v.lc_from_y) / duration;
  return true;
}

void advance_lateral(SimVehicle& v, const RoadTopology& road, double dt) {
  if (!v.changing_lane) return;
  v.lc_elapsed += dt;
  if (v.lc_elapsed >= v.lc_duration - 1e-9) {
    v.state.y = v.lc_to_y;
    v.state.vy = 0.0;
    v.changing_lane = false;
  } else {
    v.state.y = v.lc_from_y + (v.lc_to_y - v.lc_from_y) * (v.lc_elapsed / v.lc_duration);
  }
  v.state.lane_index = road.lane_of(v.state.y);
}

// Lanes a vehicle currently claims: the lane under it plus a lane-change target.
std::pair<int, int> claimed_lanes(const SimVehicle& v, const RoadTopology& road) {
  const int lane = road.lane_of(v.state.y);
  return {lane, v.changing_lane ? v.target_lane : lane};
}

bool shares_lane(std::pair<int, int> a, std::pair<int, int> b) {
  return a.first == b.first || a.first == b.second || a.second == b.first || a.second == b.second;
}

double idm_accel(const IdmParams& p, double v, double v0, std::optional<std::pair<double, double>> lead) {
  const double free = v0 > 0 ? 1.0 - std::pow(v / v0, p.exponent) : -1.0;
  double interaction = 0.0;
  if (lead) {
    const auto [gap, lead_v] = *lead;
    if (gap <= 0.0) return -p.max_decel;
    const double dv = v - lead_v;
    const double s_star =
        std::max(0.0, p.min_gap + v * p.headway + v * dv / (2.0 * std::sqrt(p.max_accel * p.comfort_decel)));
    interaction = (s_star / gap) * (s_star / gap);
  }
  return std::clamp(p.max_accel * (free - interaction), -p.max_decel, p.max_accel);
}

void fire_scripts(World& world) {
  for (auto& s : world.scripts) {
    if (s.fired || world.time < s.start_time - 1e-9) continue;
    for (auto& o : world.others) {
      if (o.state.id != s.vehicle_id) continue;
      if (s.kind == VehicleScript::Kind::HardBrake) {
        o.forced_decel = s.decel;
      } else if (s.kind == VehicleScript::Kind::HoldSpeed) {
        o.forced_decel = 0.0;
      } else {
        begin_lane_change(o, world.road, s.direction, s.duration);
      }
    }
    s.fired = true;
  }
}

void substep(World& world, const SimConfig& config) {
  const double dt = config.dt();
  fire_scripts(world);

  // Accelerations from the current state, then a simultaneous update.
  std::vector<double> accel(world.others.size(), 0.0);
  for (std::size_t i = 0; i < world.others.size(); ++i) {
    const SimVehicle& f = world.others[i];
    if (f.forced_decel) {
      accel[i] = -*f.forced_decel;
      continue;
    }
    const auto lanes = claimed_lanes(f, world.road);
    std::optional<std::pair<double, double>> lead;
    double best_dx = std::numeric_limits<double>::infinity();
    auto consider = [&](const SimVehicle& l) {
      const double dx = l.state.x - f.state.x;
      if (dx <= 0.0 || dx >= best_dx) return;
      if (!shares_lane(lanes, claimed_lanes(l, world.road))) return;
      best_dx = dx;
      lead = std::pair{dx - (l.state.length + f.state.length) / 2.0, l.state.vx};
    };
    for (std::size_t j = 0; j < world.others.size(); ++j) {
      if (j != i) consider(world.others[j]);
    }
    consider(world.ego);
    accel[i] = idm_accel(config.idm, f.state.vx, f.desired_speed, lead);
  }

  SimVehicle& ego = world.ego;
  const double ego_a = (ego.desired_speed - ego.state.vx) / config.speed_time_constant;
  const double ego_v = std::clamp(ego.state.vx + ego_a * dt, 0.0, config.ego_v_max);
  ego.state.x += 0.5 * (ego.state.vx + ego_v) * dt;
  ego.state.vx = ego_v;
  advance_lateral(ego, world.road, dt);

  for (std::size_t i = 0; i < world.others.size(); ++i) {
    SimVehicle& o = world.others[i];
    const double v = std::max(0.0, o.state.vx + accel[i] * dt);
    o.state.x += 0.5 * (o.state.vx + v) * dt;
    o.state.vx = v;
    advance_lateral(o, world.road, dt);
  }
  world.time += dt;
}

}  // namespace

void trigger_cut_ins(World& world, const SimConfig& config) {
  if (config.cut_in_rate <= 0.0) return;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int ego_lane = world.road.lane_of(world.ego.state.y);
  for (auto& o : world.others) {
    const double draw = u(world.rng);  // one draw per vehicle keeps the stream aligned
    if (o.changing_lane || o.forced_decel) continue;
    const int lane = world.road.lane_of(o.state.y);
    if (std::abs(lane - ego_lane) != 1) continue;
    const double dx = o.state.x - world.ego.state.x;
    if (dx <= 0.0 || dx > config.cut_in_range) continue;
    // Projected bumper gap to the ego once the manoeuvre completes.
    const double projected = dx + (o.state.vx - world.ego.state.vx) * config.lane_change_duration -
                             (o.state.length + world.ego.state.length) / 2.0;
    if (projected <= config.cut_in_min_gap) continue;
    if (draw < config.cut_in_rate) begin_lane_change(o, world.road, ego_lane - lane, config.lane_change_duration);
  }
}

std::optional<Collision> step_physics(World& world, Action ego_action, const SimConfig& config) {
  SimVehicle& ego = world.ego;
  switch (ego_action) {
    case Action::Faster:
      ego.desired_speed = std::clamp(ego.desired_speed + config.speed_step, 0.0, config.ego_v_max);
      break;
    case Action::Slower:
      ego.desired_speed = std::clamp(ego.desired_speed - config.speed_step, 0.0, config.ego_v_max);
      break;
    case Action::LaneLeft:
      begin_lane_change(ego, world.road, +1, config.lane_change_duration);
      break;
    case Action::LaneRight:
      begin_lane_change(ego, world.road, -1, config.lane_change_duration);
      break;
    case Action::Idle:
      break;
  }
  for (int k = 0; k < config.substeps_per_decision(); ++k) {
    substep(world, config);
    if (auto c = detect_collision(world)) return c;
  }
  return std::nullopt;
}

// ---- episodes ---------------------------------------------------------------

Decision ScriptedAgent::act(const DecisionContext& ctx) {
  Decision d;
  d.action = actions_.empty() ? Action::Idle : actions_[std::min(next_, actions_.size() - 1)];
  ++next_;
  d.risk_level = risk_level(ctx.risks);
  d.regime = d.risk_level >= 0.75 ? Regime::HighRisk : Regime::LowRisk;
  d.source = DecisionSource::DefaultLLM;
  d.allowed = feasible_actions(ctx.scene);
  d.rationale = "scripted";
  return d;
}

json step_to_json(const StepLog& s, bool include_latency) {
  json j{{"step", s.step},
         {"t", s.time},
         {"pattern", s.pattern},
         {"risks", s.risks},
         {"rl", s.risk_level},
         {"regime", regime_name(s.regime)},
         {"source", source_name(s.source)},
         {"allowed", actions_to_json(s.allowed)},
         {"proposed", to_token(s.proposed)},
         {"action", to_token(s.action)},
         {"llm_calls", s.llm_calls},
         {"ego_speed", s.ego_speed},
         {"ego_lane", s.ego_lane}};
  if (s.paused) j["paused"] = true;
  if (include_latency) j["latency_ms"] = s.latency_ms;
  return j;
}

EpisodeResult run_episode(const SimConfig& config, World world, Agent& agent, const EpisodeOptions& options) {
  config.validate();
  EpisodeResult result;
  result.episode_id = options.episode_id;
  double speed_sum = 0.0;

  for (int step = 0; step < config.decision_steps; ++step) {
    if (options.cancelled && options.cancelled()) {
      result.cancelled = true;
      break;
    }
    const Frame frame = make_frame(world.scene(), config.encoder);
    const DecisionContext ctx = make_context(frame, options.profile, options.flags);

    const auto t0 = std::chrono::steady_clock::now();
    Decision decision = agent.act(ctx);
    const auto t1 = std::chrono::steady_clock::now();

    StepLog log;
    log.step = step;
    log.time = world.time;
    log.pattern = render_inline(frame.pattern);
    log.vector = frame.vector;
    log.risks = frame.risks;
    log.risk_level = decision.risk_level;
    log.regime = decision.regime;
    log.source = decision.source;
    log.allowed = decision.allowed;
    log.proposed = decision.action;
    log.action = decision.action;
    log.llm_calls = decision.llm_calls;
    log.ego_speed = frame.scene.ego.vx;
    log.ego_lane = frame.scene.ego.lane_index;
    log.latency_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    if (options.hook) log.action = options.hook(ctx, decision, log);

    result.llm_call_total += decision.llm_calls;
    ++result.source_histogram[static_cast<std::size_t>(decision.source)];
    if (decision.source == DecisionSource::ExactReuse || decision.source == DecisionSource::IdleReuse) {
      ++result.memory_reuse_steps;
    }
    if (decision.source == DecisionSource::SubPatternConstrained ||
        decision.source == DecisionSource::PersonalizedStyle || decision.source == DecisionSource::MaskedLLM) {
      ++result.l2_guided_steps;
    }
    const Action executed = log.action;
    result.decision_log.push_back(std::move(log));

    trigger_cut_ins(world, config);
    if (auto hit = step_physics(world, executed, config)) {
      result.collided = true;
      CrashRecord crash;
      crash.pre_frame = frame;
      crash.post_frame = make_frame(world.scene(), config.encoder);
      crash.executed_action = executed;
      crash.collider = hit->collider;
      crash.episode_id = options.episode_id;
      crash.step_index = step;
      result.crash = std::move(crash);
      break;
    }
    ++result.completed_steps;
    speed_sum += world.ego.state.vx;
  }
  result.avg_speed = result.completed_steps > 0 ? speed_sum / result.completed_steps : 0.0;
  return result;
}

EpisodeResult run_episode(const SimConfig& config, Agent& agent, const EpisodeOptions& options) {
  return run_episode(config, spawn_traffic(config), agent, options);
}

std::size_t record_experience(const EpisodeResult& result, MemoryStore& memory, double confidence) {
  if (result.collided) return 0;
  std::size_t written = 0;
  for (const auto& s : result.decision_log) {
    if (s.regime != Regime::LowRisk || s.action != Action::Idle || s.source == DecisionSource::IdleReuse) continue;
    written += memory.insert_l1(s.vector, Action::Idle, confidence, Provenance::Episode).empty() ? 0 : 1;
  }
  return written;
}

std::string episode_log(const EpisodeResult& result, bool include_latency) {
  std::string out;
  for (const auto& s : result.decision_log) {
    json j = step_to_json(s, include_latency);
    j["episode"] = result.episode_id;
    out += j.dump();
    out += '\n';
  }
  json summary{{"episode", result.episode_id},
               {"summary", true},
               {"completed_steps", result.completed_steps},
               {"collided", result.collided},
               {"avg_speed", result.avg_speed},
               {"llm_call_total", result.llm_call_total}};
  json hist = json::object();
  for (DecisionSource s : kAllSources) hist[std::string(source_name(s))] = result.histogram(s);
  summary["source_histogram"] = hist;
  if (result.crash) {
    summary["crash"] = {{"step", result.crash->step_index},
                        {"executed_action", to_token(result.crash->executed_action)},
                        {"collider_id", result.crash->collider.id}};
  }
  out += summary.dump();
  out += '\n';
  return out;
}

// ---- forced crashes ---------------------------------------------------------

std::string_view crash_class_name(CrashClass c) {
  switch (c) {
    case CrashClass::LeftCutIn:
      return "left_cut_in";
    case CrashClass::RightCutIn:
      return "right_cut_in";
    default:
      return "lead_hard_brake";
  }
}

std::optional<CrashClass> crash_class_from_name(std::string_view name) {
  for (CrashClass c : kAllCrashClasses) {
    if (crash_class_name(c) == name) return c;
  }
  return std::nullopt;
}

CrashScenario crash_scenario(CrashClass kind, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ (0xc2b2ae3d27d4eb4fULL * (static_cast<std::uint64_t>(kind) + 1)));
  auto uniform = [&rng](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  auto pick_lane = [&rng](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };

  CrashScenario sc;
  sc.kind = kind;
  sc.config.seed = seed;
  sc.config.decision_steps = 6;
  sc.config.density = 0.0;
  const SimConfig& c = sc.config;
  const RoadTopology road = RoadTopology::uniform(c.lanes, c.lane_width);

  VehicleState ego;
  ego.id = 0;
  ego.length = c.vehicle_length;
  ego.width = c.vehicle_width;
  VehicleState other = ego;
  other.id = 1;
  std::vector<VehicleScript> scripts;

  if (kind == CrashClass::LeadHardBrake) {
    // A tailgated lead brakes hard; holding speed closes the 2-3 m gap in
    // under a second.
    ego.lane_index = pick_lane(0, c.lanes - 1);
    ego.vx = uniform(24.0, 28.0);
    other.lane_index = ego.lane_index;
    other.vx = ego.vx - uniform(0.0, 1.0);
    other.x = c.vehicle_length + uniform(2.0, 3.0);
    scripts.push_back({other.id, 0.0, VehicleScript::Kind::HardBrake, 8.0, 1, 1.0, false});
    sc.actions = {Action::Idle};
  } else {
    // A faster vehicle closes from the target lane's rear zone; the ego's lane
    // change meets it before the maneuver completes.
    const int dir = kind == CrashClass::LeftCutIn ? 1 : -1;
    ego.lane_index = dir > 0 ? pick_lane(0, c.lanes - 2) : pick_lane(1, c.lanes - 1);
    ego.vx = uniform(16.0, 22.0);
    other.lane_index = ego.lane_index + dir;
    other.vx = ego.vx + uniform(9.0, 11.0);
    other.x = -uniform(11.0, 13.0);
    scripts.push_back({other.id, 0.0, VehicleScript::Kind::HoldSpeed, 0.0, 1, 1.0, false});
    sc.actions = {dir > 0 ? Action::LaneLeft : Action::LaneRight, Action::Idle};
  }
  ego.y = road.lane_center(ego.lane_index);
  other.y = road.lane_center(other.lane_index);
  sc.config.ego_initial_speed = ego.vx;
  sc.config.ego_lane = ego.lane_index;
  sc.world = make_world(sc.config, ego, {other}, std::move(scripts));
  return sc;
}

// ---- suites -----------------------------------------------------------------

std::uint64_t episode_seed(std::uint64_t base_seed, int episode_index) {
  // splitmix64 finalizer over (base, index)
  std::uint64_t z = base_seed + 0x9e3779b97f4a7c15ULL * (static_cast<std::uint64_t>(episode_index) + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t training_seed(std::uint64_t base_seed, int episode_index) {
  return episode_seed(base_seed ^ 0x5452414e494e4700ULL, episode_index);
}

namespace {

SuiteRow run_cell(const SuiteCell& cell, const AgentVariant& variant, const SuiteOptions& options) {
  SuiteRow row;
  row.variant = variant.name;
  row.cell = cell.label;
  MemoryStore memory = options.initial_memory ? *options.initial_memory : MemoryStore{};
  Backends backends = options.backends ? options.backends() : Backends::mock(options.mock_seed, options.adversarial);
  RespondAgent agent(memory, *backends.decision, cell.config.decision);

  for (int i = 0; i < options.training_episodes; ++i) {
    SimConfig config = cell.config;
    config.seed = training_seed(cell.config.seed, i);
    EpisodeOptions eo;
    eo.episode_id = cell.label + "/train-" + std::to_string(i);
    eo.flags = variant.flags;
    eo.profile = variant.profile;
    EpisodeResult r = run_episode(config, agent, eo);
    if (r.collided) {
      ++row.training_collisions;
      if (options.reflection) reflect(*r.crash, *backends.reflection, memory);
    } else if (options.record_experience) {
      record_experience(r, memory);
    }
  }

  double speed_sum = 0.0;
  int calls = 0;
  for (int i = 0; i < options.episodes; ++i) {
    SimConfig config = cell.config;
    config.seed = episode_seed(cell.config.seed, i);
    EpisodeOptions eo;
    eo.episode_id = cell.label + "/" + std::to_string(i);
    eo.flags = variant.flags;
    eo.profile = variant.profile;
    EpisodeResult r = run_episode(config, agent, eo);

    ++row.episodes;
    if (r.collided) {
      ++row.collisions;
      if (options.reflection) {
        reflect(*r.crash, *backends.reflection, memory);
        ++row.reflections;
      }
    } else {
      ++row.successes;
      if (options.record_experience) record_experience(r, memory);
    }
    speed_sum += r.avg_speed;
    calls += r.llm_call_total;
    row.steps += static_cast<int>(r.decision_log.size());
    row.memory_reuse_steps += r.memory_reuse_steps;
    for (std::size_t k = 0; k < row.source_histogram.size(); ++k) row.source_histogram[k] += r.source_histogram[k];
    row.results.push_back(std::move(r));
  }
  if (row.episodes > 0) {
    row.success_rate = 1.0 - static_cast<double>(row.collisions) / row.episodes;
    row.mean_avg_speed = speed_sum / row.episodes;
  }
  row.llm_calls_per_step = row.steps > 0 ? static_cast<double>(calls) / row.steps : 0.0;
  row.memory = memory.stats();
  return row;
}

}  // namespace

std::vector<SuiteRow> run_suite(const std::vector<SuiteCell>& cells, const std::vector<AgentVariant>& variants,
                                const SuiteOptions& options) {
  for (const auto& c : cells) c.config.validate();
  std::vector<SuiteRow> rows;
  if (options.episodes <= 0) return rows;

  struct Job {
    const AgentVariant* variant;
    const SuiteCell* cell;
  };
  std::vector<Job> jobs;
  for (const auto& v : variants) {
    for (const auto& c : cells) jobs.push_back({&v, &c});
  }
  rows.resize(jobs.size());

  // Cells are independent (own memory, own backend); episodes inside a cell
  // stay sequential so reflections feed later episodes deterministically.
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  const std::size_t workers = options.jobs > 0 ? static_cast<std::size_t>(options.jobs) : hw;
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(jobs.size());
  auto work = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      try {
        rows[i] = run_cell(*jobs[i].cell, *jobs[i].variant, options);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < std::min(workers, jobs.size()); ++w) pool.emplace_back(work);
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return rows;
}

std::string suite_csv(const std::vector<SuiteRow>& rows) {
  std::ostringstream out;
  out << "variant,config,episodes,successes,collisions,sr_pct,avg_speed,llm_calls_per_step,steps,memory_reuse_steps,"
         "l1_hits,l2_hits";
  for (DecisionSource s : kAllSources) out << ',' << source_name(s);
  out << '\n';
  char buf[64];
  for (const auto& r : rows) {
    out << '"' << r.variant << "\",\"" << r.cell << "\"," << r.episodes << ',' << r.successes << ',' << r.collisions;
    std::snprintf(buf, sizeof buf, ",%.1f,%.3f,%.4f", 100.0 * r.success_rate, r.mean_avg_speed, r.llm_calls_per_step);
    out << buf << ',' << r.steps << ',' << r.memory_reuse_steps << ',' << r.memory.l1_hits << ',' << r.memory.l2_hits;
    for (int c : r.source_histogram) out << ',' << c;
    out << '\n';
  }
  return out.str();
}

std::string suite_table(const std::vector<SuiteRow>& rows) {
  std::ostringstream out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-20s %-18s %8s %7s %10s %10s %12s %8s %8s\n", "variant", "config", "episodes",
                "SR %", "collisions", "avg m/s", "llm/step", "L1 hits", "L2 hits");
  out << buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-20s %-18s %8d %7.1f %10d %10.2f %12.3f %8llu %8llu\n", r.variant.c_str(),
                  r.cell.c_str(), r.episodes, 100.0 * r.success_rate, r.collisions, r.mean_avg_speed,
                  r.llm_calls_per_step, static_cast<unsigned long long>(r.memory.l1_hits),
                  static_cast<unsigned long long>(r.memory.l2_hits));
    out << buf;
  }
  return out.str();
}

}  // namespace respond::sim
