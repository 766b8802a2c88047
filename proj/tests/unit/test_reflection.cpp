#include "doctest.h"
#include "respond/decision.hpp"
#include "respond/json_io.hpp"
#include "respond/reflection.hpp"
#include "support.hpp"

using namespace respond;
using testsupport::car;

namespace {

const RoadTopology kRoad = RoadTopology::uniform(4, 4.0);

CrashRecord crash_from(const Scene& pre, Action executed, int collider_id) {
  CrashRecord c;
  c.pre_frame = make_frame(pre, EncoderParams{});
  Scene post = pre;
  post.timestamp += 0.7;
  c.post_frame = make_frame(post, EncoderParams{});
  c.executed_action = executed;
  for (const auto& o : pre.others)
    if (o.id == collider_id) c.collider = o;
  c.episode_id = "fixture";
  c.step_index = 3;
  return c;
}

// Ego in lane 1 with a left-lane vehicle alongside.
Scene left_conflict() {
  return testsupport::scene_with(4, 1, 24.0, {car(7, 2, -3.0, 27.0, kRoad), car(8, 1, 45.0, 24.0, kRoad)});
}

// Lead a few metres ahead in the ego lane.
Scene rear_end() { return testsupport::scene_with(4, 1, 30.0, {car(3, 1, 7.0, 28.0, kRoad)}); }

}  // namespace

TEST_CASE("failure classification table") {
  CHECK(classify_failure(crash_from(left_conflict(), Action::LaneLeft, 7)) == FailureMode::LateralDirect);
  CHECK(classify_failure(crash_from(rear_end(), Action::Idle, 3)) == FailureMode::LLMCausal);
  // lane change, but the collider sat in the ego column
  CHECK(classify_failure(crash_from(rear_end(), Action::LaneLeft, 3)) == FailureMode::LLMCausal);
  // lane change to the side opposite the collider
  CHECK(classify_failure(crash_from(left_conflict(), Action::LaneRight, 7)) == FailureMode::LLMCausal);
}

TEST_CASE("lateral reflection writes a mirrored constraint and a confident correction") {
  MemoryStore m;
  const CrashRecord c = crash_from(left_conflict(), Action::LaneLeft, 7);
  const ReflectionOutcome out = reflect_lateral(c, m);
  CHECK(out.mode == FailureMode::LateralDirect);
  CHECK(out.l2_written.size() == 2);
  CHECK(out.mirrored);
  CHECK_FALSE(out.l1_written.empty());
  CHECK(out.revised_action == Action::Idle);  // nothing ahead within the front rows
  const auto entry = m.lookup_exact(c.pre_frame.vector);
  REQUIRE(entry);
  CHECK(entry->confidence == 1.0);
  CHECK(entry->provenance == Provenance::Reflection);

  const auto l2 = m.l2_entries();
  CHECK(l2[0].kind == SubPatternKind::Left);
  CHECK(l2[0].target == Action::LaneLeft);
  CHECK(l2[0].slice == slice_of(c.pre_frame.pattern, SubPatternKind::Left));
  CHECK(l2[1].kind == SubPatternKind::Right);
  CHECK(l2[1].target == Action::LaneRight);

  CHECK_THROWS_AS(reflect_lateral(crash_from(rear_end(), Action::Idle, 3), m), ContractError);
}

TEST_CASE("lateral correction is SLOWER when the lane ahead is occupied") {
  Scene s = left_conflict();
  s.others.push_back(car(9, 1, 20.0, 24.0, kRoad));
  MemoryStore m;
  CHECK(reflect_lateral(crash_from(s, Action::LaneLeft, 7), m).revised_action == Action::Slower);
}

TEST_CASE("lateral reflection protects replay, mirror and same-column variants") {
  MemoryStore m;
  const Scene scene = left_conflict();
  reflect(crash_from(scene, Action::LaneLeft, 7), *Backends::mock().reflection, m);
  FunctionBackend wants_left([](const PromptBundle&) { return std::string("LANE_LEFT"); });
  FunctionBackend wants_right([](const PromptBundle&) { return std::string("LANE_RIGHT"); });

  const Decision replay = decide(make_context(scene, EncoderParams{}), m, wants_left);
  CHECK(replay.action != Action::LaneLeft);
  CHECK(replay.llm_calls == 0);

  const Decision mirrored = decide(make_context(mirror_scene(scene), EncoderParams{}), m, wants_right);
  CHECK(mirrored.action != Action::LaneRight);

  Scene variant = scene;
  variant.others.push_back(car(20, 0, 40.0, 22.0, kRoad));  // right column differs
  variant.others[1].x = 25.0;                                // ego lane differs
  const DecisionContext vc = make_context(variant, EncoderParams{});
  CHECK(vc.vector != make_context(scene, EncoderParams{}).vector);
  const Decision v = decide(vc, m, wants_left);
  CHECK_FALSE(v.allowed.contains(Action::LaneLeft));
  CHECK(v.action != Action::LaneLeft);
}

TEST_CASE("LLM reflection writes the revised action with confidence 1") {
  MemoryStore m;
  const CrashRecord c = crash_from(rear_end(), Action::Idle, 3);
  const ReflectionOutcome out = reflect_llm(c, *Backends::mock().reflection, m);
  CHECK(out.mode == FailureMode::LLMCausal);
  CHECK(out.revised_action == Action::Slower);
  CHECK_FALSE(out.fallback);
  CHECK_FALSE(out.cause.empty());
  CHECK(m.lookup_exact(c.pre_frame.vector)->action == Action::Slower);
  CHECK(m.lookup_exact(c.pre_frame.vector)->confidence == 1.0);
  CHECK(out.l2_written.empty());  // IDLE -> SLOWER stays keep-lane
}

TEST_CASE("LLM reflection falls back on unusable replies and transport errors") {
  MemoryStore m;
  const CrashRecord c = crash_from(rear_end(), Action::Idle, 3);
  ReflectionOutcome out = reflect_llm(c, *Backends::mock(0, true).reflection, m);
  CHECK(out.fallback);
  CHECK(out.revised_action == Action::Slower);
  CHECK(m.lookup_exact(c.pre_frame.vector)->confidence == 1.0);

  FunctionBackend down([](const PromptBundle&) -> std::string { throw BackendError("timeout"); });
  MemoryStore m2;
  out = reflect_llm(c, down, m2);
  CHECK(out.fallback);
  CHECK_FALSE(out.l1_written.empty());
}

TEST_CASE("reaffirmed action is written with a warning") {
  MemoryStore m;
  const CrashRecord c = crash_from(rear_end(), Action::Slower, 3);
  FunctionBackend same([](const PromptBundle&) { return std::string("CAUSE: bad luck\nREVISED_ACTION: SLOWER"); });
  const ReflectionOutcome out = reflect_llm(c, same, m);
  CHECK(out.revised_action == Action::Slower);
  CHECK_FALSE(out.warnings.empty());
  CHECK(m.lookup_exact(c.pre_frame.vector).has_value());
}

TEST_CASE("strategic abstraction gate") {
  const CrashRecord c = crash_from(rear_end(), Action::Idle, 3);
  REQUIRE(c.pre_frame.risks.front >= 0.75);
  MemoryStore m;
  const auto ids = strategic_abstraction(c, Action::LaneRight, m);
  REQUIRE(ids.size() == 1);
  const auto s = m.l2_entries().at(0);
  CHECK(s.kind == SubPatternKind::Front);
  CHECK(s.intent == Intent::ChangeLane);
  CHECK(s.slice == slice_of(c.pre_frame.pattern, SubPatternKind::Front));

  MemoryStore none;
  CHECK(strategic_abstraction(c, Action::Slower, none).empty());

  // below the gate
  Scene mild = testsupport::scene_with(4, 1, 25.0, {car(3, 1, 25.0, 22.0, kRoad)});
  const CrashRecord low = crash_from(mild, Action::Idle, 3);
  REQUIRE(low.pre_frame.risks.front < 0.75);
  CHECK(strategic_abstraction(low, Action::LaneLeft, none).empty());

  // change lane -> keep lane also flips the class
  MemoryStore back;
  CHECK(strategic_abstraction(crash_from(rear_end(), Action::LaneLeft, 3), Action::Slower, back).size() == 1);
  CHECK(back.l2_entries().at(0).intent == Intent::Decelerate);
}

TEST_CASE("mock reflection escapes sideways when braking already failed") {
  MemoryStore m;
  const CrashRecord c = crash_from(rear_end(), Action::Slower, 3);
  const ReflectionOutcome out = reflect(c, *Backends::mock().reflection, m);
  CHECK(is_lane_change(out.revised_action));
  CHECK(out.l2_written.size() == 1);  // FRONT strategy, change lane
  CHECK(m.l2_entries().at(0).intent == Intent::ChangeLane);
}

TEST_CASE("every reflection writes at least one confident layer-1 entry") {
  for (sim::CrashClass k : sim::kAllCrashClasses) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      sim::CrashScenario sc = sim::crash_scenario(k, seed);
      sim::ScriptedAgent agent(sc.actions);
      const auto r = sim::run_episode(sc.config, sc.world, agent);
      REQUIRE(r.crash);
      MemoryStore m;
      const auto out = reflect(*r.crash, *Backends::mock().reflection, m);
      CHECK_FALSE(out.l1_written.empty());
      CHECK(m.lookup_exact(r.crash->pre_frame.vector)->confidence == 1.0);
      if (out.mode == FailureMode::LateralDirect) CHECK(out.l2_written.size() >= 2);
    }
  }
}

TEST_CASE("crash records and audits serialize") {
  const CrashRecord c = crash_from(left_conflict(), Action::LaneLeft, 7);
  const CrashRecord back = crash_from_json(crash_to_json(c));
  CHECK(back.pre_frame.vector == c.pre_frame.vector);
  CHECK(back.executed_action == c.executed_action);
  CHECK(back.collider.id == 7);
  CHECK(crash_to_json(back) == crash_to_json(c));

  MemoryStore m;
  const auto out = reflect(c, *Backends::mock().reflection, m);
  const auto audit = nlohmann::json::parse(audit_json(c, out));
  CHECK(audit["mode"] == "LateralDirect");
  CHECK(audit["l2_written"].size() == 2);
}
