#include <cmath>

#include "doctest.h"
#include "respond/sim.hpp"
#include "support.hpp"

using namespace respond;
using namespace respond::sim;

namespace {

SimConfig quiet(int lanes = 3) {
  SimConfig c;
  c.lanes = lanes;
  c.density = 0.0;
  c.ego_lane = 1 % lanes;
  return c;
}

VehicleState at(int id, int lane, double x, double vx, const SimConfig& c) {
  return testsupport::car(id, lane, x, vx, RoadTopology::uniform(c.lanes, c.lane_width));
}

}  // namespace

TEST_CASE("spawn count and spacing") {
  for (int lanes = 2; lanes <= 5; ++lanes) {
    for (double d : {0.5, 1.0, 1.7, 2.5, 3.0}) {
      SimConfig c;
      c.lanes = lanes;
      c.density = d;
      c.seed = static_cast<std::uint64_t>(lanes * 100 + d * 10);
      const World w = spawn_traffic(c);
      CHECK(w.others.size() == static_cast<std::size_t>(std::ceil(d * lanes * 2.0 - 1e-9)));
      std::vector<VehicleState> all{w.ego.state};
      for (const auto& o : w.others) all.push_back(o.state);
      for (std::size_t i = 0; i < all.size(); ++i) {
        CHECK(std::abs(all[i].x) <= c.corridor_length / 2.0);
        CHECK(all[i].lane_index >= 0);
        CHECK(all[i].lane_index < lanes);
        for (std::size_t j = i + 1; j < all.size(); ++j) {
          if (all[i].lane_index != all[j].lane_index) continue;
          CHECK(std::abs(bumper_gap(all[i], all[j])) >= c.min_spawn_gap - 1e-9);
        }
      }
    }
  }
}

TEST_CASE("spawn is seed-deterministic and rejects impossible packing") {
  SimConfig c;
  c.seed = 77;
  const World a = spawn_traffic(c), b = spawn_traffic(c);
  REQUIRE(a.others.size() == b.others.size());
  for (std::size_t i = 0; i < a.others.size(); ++i) {
    CHECK(a.others[i].state.x == b.others[i].state.x);
    CHECK(a.others[i].state.vx == b.others[i].state.vx);
  }
  c.density = 30.0;
  CHECK_THROWS_AS(spawn_traffic(c), ConfigError);
}

TEST_CASE("config validation") {
  SimConfig c;
  CHECK_NOTHROW(c.validate());
  auto bad = [](auto mutate) {
    SimConfig x;
    mutate(x);
    CHECK_THROWS_AS(x.validate(), ConfigError);
  };
  bad([](SimConfig& x) { x.lanes = 0; });
  bad([](SimConfig& x) { x.density = -1; });
  bad([](SimConfig& x) { x.decision_hz = 3; });
  bad([](SimConfig& x) { x.ego_lane = 9; });
  bad([](SimConfig& x) { x.cut_in_rate = 1.5; });
  bad([](SimConfig& x) { x.vehicle_width = 5.0; });

  nlohmann::json j;
  to_json(j, c);
  SimConfig back;
  from_json(j, back);
  nlohmann::json again;
  to_json(again, back);
  CHECK(j == again);
  CHECK_THROWS(from_json(nlohmann::json{{"lanse", 3}}, back));
}

TEST_CASE("speed actions move the target in steps and stay in bounds") {
  SimConfig c = quiet();
  World w = make_world(c, at(0, 1, 0, 25.0, c), {});
  double prev = w.ego.state.vx;
  for (int i = 0; i < 6; ++i) {
    REQUIRE_FALSE(step_physics(w, Action::Faster, c));
    CHECK(w.ego.state.vx >= prev);
    CHECK(w.ego.state.vx <= c.ego_v_max + 1e-12);
    prev = w.ego.state.vx;
  }
  CHECK(prev > 30.0);
  for (int i = 0; i < 30; ++i) REQUIRE_FALSE(step_physics(w, Action::Slower, c));
  CHECK(w.ego.state.vx >= 0.0);
  CHECK(w.ego.state.vx < 1.0);
}

TEST_CASE("lane changes complete in one interval and respect the road edge") {
  SimConfig c = quiet();
  World w = make_world(c, at(0, 1, 0, 25.0, c), {});
  REQUIRE_FALSE(step_physics(w, Action::LaneLeft, c));
  CHECK(w.ego.state.lane_index == 2);
  CHECK(w.ego.state.y == doctest::Approx(w.road.lane_center(2)));
  REQUIRE_FALSE(step_physics(w, Action::LaneLeft, c));  // already leftmost
  CHECK(w.ego.state.lane_index == 2);
  CHECK(w.ego.state.y == doctest::Approx(w.road.lane_center(2)));
  for (int i = 0; i < 4; ++i) REQUIRE_FALSE(step_physics(w, Action::LaneRight, c));
  CHECK(w.ego.state.lane_index == 0);
}

TEST_CASE("the ego moves continuously and never leaves the road") {
  for (std::uint64_t seed = 1; seed <= 40; ++seed) {
    SimConfig c;
    c.seed = seed;
    c.lanes = 2 + static_cast<int>(seed % 3);
    c.density = 1.0;
    World w = spawn_traffic(c);
    std::mt19937_64 rng(seed);
    for (int k = 0; k < 20; ++k) {
      const double x0 = w.ego.state.x, y0 = w.ego.state.y;
      const Action a = kAllActions[rng() % kAllActions.size()];
      trigger_cut_ins(w, c);
      const bool hit = step_physics(w, a, c).has_value();
      CHECK(w.ego.state.x - x0 <= c.ego_v_max * 1.0 + 1e-9);
      CHECK(w.ego.state.x >= x0);
      CHECK(std::abs(w.ego.state.y - y0) <= c.lane_width + 1e-9);
      CHECK(w.ego.state.y >= 0.0);
      CHECK(w.ego.state.y <= c.lanes * c.lane_width);
      if (hit) break;
    }
  }
}

TEST_CASE("collision requires strict body overlap") {
  SimConfig c = quiet();
  World touching = make_world(c, at(0, 1, 0, 20.0, c), {at(1, 1, 5.0, 20.0, c)});
  CHECK_FALSE(detect_collision(touching));
  World overlap = make_world(c, at(0, 1, 0, 20.0, c), {at(1, 1, 4.99, 20.0, c)});
  CHECK(detect_collision(overlap));
  World side = make_world(c, at(0, 1, 0, 20.0, c), {at(1, 2, 0.0, 20.0, c)});
  CHECK_FALSE(detect_collision(side));

  // lowest id wins when several overlap
  World two = make_world(c, at(0, 1, 0, 20.0, c), {at(4, 1, 3.0, 20.0, c), at(2, 1, -3.0, 20.0, c)});
  REQUIRE(detect_collision(two));
  CHECK(detect_collision(two)->collider.id == 2);
}

TEST_CASE("crash scenarios collide with their scripted actions") {
  for (CrashClass k : kAllCrashClasses) {
    CHECK(crash_class_from_name(crash_class_name(k)) == k);
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      CrashScenario sc = crash_scenario(k, seed);
      ScriptedAgent agent(sc.actions);
      const auto r = run_episode(sc.config, sc.world, agent);
      CHECK(r.collided);
      REQUIRE(r.crash);
      CHECK(r.crash->collider.id != 0);
    }
  }
  CHECK_FALSE(crash_class_from_name("meteor"));
}

TEST_CASE("episodes are reproducible") {
  SimConfig c;
  c.seed = 4242;
  c.cut_in_rate = 0.1;
  MemoryStore m1, m2;
  auto b1 = Backends::mock(3), b2 = Backends::mock(3);
  RespondAgent a1(m1, *b1.decision), a2(m2, *b2.decision);
  const auto r1 = run_episode(c, a1), r2 = run_episode(c, a2);
  CHECK(episode_log(r1) == episode_log(r2));
  CHECK(r1.completed_steps + (r1.collided ? 1 : 0) == static_cast<int>(r1.decision_log.size()));
  CHECK(episode_log(r1).find("latency_ms") == std::string::npos);
  CHECK(episode_log(r1, true).find("latency_ms") != std::string::npos);
}

TEST_CASE("hooks override and cancellation stops") {
  SimConfig c = quiet();
  c.decision_steps = 10;
  World w = make_world(c, at(0, 1, 0, 25.0, c), {});
  ScriptedAgent agent({Action::Idle});
  EpisodeOptions o;
  o.hook = [](const DecisionContext&, const Decision&, StepLog&) { return Action::LaneLeft; };
  auto r = run_episode(c, w, agent, o);
  CHECK(r.decision_log.at(0).proposed == Action::Idle);
  CHECK(r.decision_log.at(0).action == Action::LaneLeft);
  CHECK(r.decision_log.at(1).ego_lane == 2);

  int polls = 0;
  EpisodeOptions stop;
  stop.cancelled = [&] { return ++polls > 3; };
  r = run_episode(c, w, agent, stop);
  CHECK(r.cancelled);
  CHECK(r.decision_log.size() == 3);
}

TEST_CASE("suite arithmetic") {
  SuiteCell cell{"lanes-3/density-2.0", {}};
  cell.config.lanes = 3;
  cell.config.decision_steps = 10;
  SuiteOptions o;
  o.episodes = 6;
  o.jobs = 2;
  const auto rows = run_suite({cell}, {AgentVariant::full(), AgentVariant::no_memory()}, o);
  REQUIRE(rows.size() == 2);
  for (const auto& r : rows) {
    CHECK(r.episodes == 6);
    CHECK(r.successes + r.collisions == 6);
    CHECK(r.success_rate == doctest::Approx(static_cast<double>(r.successes) / 6.0));
    CHECK(r.results.size() == 6);
    int steps = 0;
    for (const auto& e : r.results) steps += static_cast<int>(e.decision_log.size());
    CHECK(steps == r.steps);
  }
  CHECK(rows[1].variant == "No Memory");
  CHECK(rows[1].memory_reuse_steps == 0);

  o.episodes = 0;
  CHECK(run_suite({cell}, {AgentVariant::full()}, o).empty());

  o.episodes = 3;
  const auto once = run_suite({cell}, {AgentVariant::full()}, o);
  const auto twice = run_suite({cell}, {AgentVariant::full()}, o);
  CHECK(suite_csv(once) == suite_csv(twice));
}
