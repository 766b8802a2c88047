#include <atomic>

#include "doctest.h"
#include "respond/session.hpp"
#include "support.hpp"

using namespace respond;
using namespace respond::session;
using namespace std::chrono_literals;
using testsupport::car;

namespace {

FeedbackRecord fb_with(DirectionalRisks r, Action proposed, Action chosen) {
  return {"s", 0, proposed, chosen, r, std::nullopt};
}

sim::SimConfig hitl_config(std::uint64_t seed, int steps) {
  sim::SimConfig c;
  c.seed = seed;
  c.lanes = 4;
  c.density = 1.5;
  c.decision_steps = steps;
  return c;
}

}  // namespace

TEST_CASE("style bound rounds up to the next tenth") {
  CHECK(style_bound(0.55) == doctest::Approx(0.6));
  CHECK(style_bound(0.6) == doctest::Approx(0.7));
  CHECK(style_bound(0.0) == doctest::Approx(0.1));
  CHECK(style_bound(0.04) == doctest::Approx(0.1));
  CHECK(style_bound(0.91) == doctest::Approx(1.0));
}

TEST_CASE("feedback abstraction") {
  DirectionalRisks r;
  r.front = 0.55;
  r.left_rear = 0.2;
  auto s = abstract_feedback(fb_with(r, Action::Idle, Action::Faster), "sporty");
  REQUIRE(s);
  CHECK(s->kind == SubPatternKind::Style);
  CHECK(s->profile == "sporty");
  CHECK(s->style.direction == Zone::Front);
  CHECK(s->style.upper_bound == doctest::Approx(0.6));
  CHECK(s->style.preferred == Action::Faster);
  CHECK(s->provenance == Provenance::HumanFeedback);

  CHECK_FALSE(abstract_feedback(fb_with(r, Action::Faster, Action::Faster), "sporty"));

  DirectionalRisks high = r;
  high.front = 0.8;
  CHECK_FALSE(abstract_feedback(fb_with(high, Action::Idle, Action::Faster), "sporty"));

  DirectionalRisks lateral;
  lateral.right_front = 0.95;  // dominant but the bound would reach 1
  CHECK_FALSE(abstract_feedback(fb_with(lateral, Action::Idle, Action::Faster), "sporty"));

  DirectionalRisks ties;  // all zero: front wins
  auto t = abstract_feedback(fb_with(ties, Action::Idle, Action::Slower), "calm");
  REQUIRE(t);
  CHECK(t->style.direction == Zone::Front);
  CHECK(t->style.upper_bound == doctest::Approx(0.1));

  MemoryStore m;
  m.insert_l2(*s);
  m.insert_l2(*s);
  CHECK(m.styles("sporty").size() == 1);
}

TEST_CASE("gate passes high-risk steps straight through") {
  const RoadTopology road = RoadTopology::uniform(4, 4.0);
  MemoryStore m;
  auto b = Backends::mock();
  const Scene calm = testsupport::scene_with(4, 1, 25.0, {car(1, 1, 40.0, 25.0, road)});
  const DecisionContext cc = make_context(calm, EncoderParams{});
  const Decision dc = decide(cc, m, *b.decision);
  REQUIRE(dc.risk_level < 0.75);
  const auto p = gate(cc, dc, m, 4);
  REQUIRE(p);
  CHECK(p->step == 4);
  CHECK(p->allowed.contains(dc.action));
  CHECK(p->allowed.contains(Action::Idle));
  CHECK(p->allowed.contains(Action::Slower));
  const auto j = proposal_json(*p);
  CHECK(j["proposed"] == std::string(to_token(dc.action)));
  CHECK(j["rl"].get<double>() == doctest::Approx(dc.risk_level));

  const Scene tight = testsupport::scene_with(4, 1, 30.0, {car(1, 1, 7.0, 28.0, road)});
  const DecisionContext tc = make_context(tight, EncoderParams{});
  const Decision dt = decide(tc, m, *b.decision);
  REQUIRE(dt.risk_level >= 0.75);
  CHECK_FALSE(gate(tc, dt, m, 5));
}

TEST_CASE("scripted session teaches a style that later steps reuse") {
  auto memory = std::make_shared<MemoryStore>();
  auto b = Backends::mock();
  std::vector<FeedbackRecord> log;
  int reviewed_high = 0, reviews = 0;
  Reviewer sporty = [&](const Proposal& p) -> std::optional<Action> {
    ++reviews;
    if (p.risk_level >= 0.75) ++reviewed_high;
    return Action::Faster;
  };
  sim::RespondAgent agent(*memory, *b.decision);
  sim::EpisodeOptions o;
  o.profile = "sporty";
  o.hook = personalization_hook(*memory, "sporty", "s1", sporty, &log);
  const auto first = sim::run_episode(hitl_config(21, 20), agent, o);
  CHECK(reviews > 0);
  CHECK(reviewed_high == 0);
  const auto styles = memory->styles("sporty");
  CHECK(styles.size() >= 1);
  for (const auto& f : log) {
    CHECK(risk_level(f.risks) < 0.75);
    if (f.sub_pattern) CHECK(f.chosen != f.proposed);
  }
  for (const auto& s : first.decision_log) {
    if (s.risk_level >= 0.75) CHECK_FALSE(s.paused);
  }

  sim::EpisodeOptions follow;
  follow.profile = "sporty";
  const auto second = sim::run_episode(hitl_config(22, 30), agent, follow);
  int matching = 0, personalized = 0;
  for (const auto& s : second.decision_log) {
    if (s.risk_level >= 0.75) continue;
    bool match = false;
    for (const auto& st : styles) match |= s.risks[st.style.direction] < st.style.upper_bound;
    if (!match) continue;
    ++matching;
    if (s.source == DecisionSource::PersonalizedStyle && s.action == Action::Faster) ++personalized;
  }
  REQUIRE(matching > 0);
  CHECK(personalized >= 0.8 * matching);
}

TEST_CASE("session config parsing") {
  const sim::SimConfig d;
  auto c = session_config_from_json({{"mode", "personalization"}, {"profile", "calm"}, {"feedback_timeout_s", 2}}, d);
  CHECK(c.mode == Mode::Personalization);
  CHECK(c.profile == "calm");
  CHECK(c.feedback_timeout == 2000ms);
  c = session_config_from_json({{"config", {{"lanes", 3}}}}, d);
  CHECK(c.sim.lanes == 3);
  CHECK_THROWS_AS(session_config_from_json({{"mode", "chaos"}}, d), std::invalid_argument);
  CHECK_THROWS_AS(session_config_from_json({{"profile", ""}}, d), std::invalid_argument);
  CHECK_THROWS_AS(session_config_from_json({{"speed", 3}}, d), std::invalid_argument);
  CHECK_THROWS_AS(session_config_from_json({{"feedback_timeout_s", 0}}, d), std::invalid_argument);
  CHECK_THROWS_AS(session_config_from_json({{"config", {{"lanes", 0}}}}, d), sim::ConfigError);
  CHECK_THROWS(session_config_from_json(nlohmann::json::array(), d));
}

TEST_CASE("threaded session pauses, validates feedback and writes styles") {
  SessionConfig c;
  c.mode = Mode::Personalization;
  c.profile = "sporty";
  c.sim = hitl_config(5, 6);
  c.sim.ego_lane = 0;  // rightmost: LANE_RIGHT is never allowed
  auto memory = std::make_shared<MemoryStore>();
  Session s("s-1", c, memory, Backends::mock());
  std::vector<nlohmann::json> events;
  std::mutex em;
  s.subscribe([&](const nlohmann::json& e) {
    std::lock_guard l(em);
    events.push_back(e);
  });
  CHECK(s.feedback(Action::Idle).kind == FeedbackOutcome::Kind::NotPaused);
  s.start();
  int answered = 0;
  while (s.wait_paused(5s)) {
    const auto st = s.state();
    CHECK(st["status"] == "paused");
    REQUIRE(st["pending_proposal"].is_object());
    CHECK(st["paused_at_step"] == st["pending_proposal"]["step"]);
    CHECK(s.feedback(Action::LaneRight).kind == FeedbackOutcome::Kind::NotAllowed);
    const Action proposed = *action_from_token(st["pending_proposal"]["proposed"].get<std::string>());
    const auto out = proposed == Action::Faster ? s.resume() : s.feedback(Action::Faster);
    CHECK(out.kind == FeedbackOutcome::Kind::Accepted);
    CHECK(out.executed == Action::Faster);
    CHECK(out.style.has_value() == (proposed != Action::Faster));
    ++answered;
    // a second answer to the same pause is rejected
    CHECK(s.feedback(Action::Idle).kind == FeedbackOutcome::Kind::NotPaused);
  }
  REQUIRE(s.wait_finished(10s));
  CHECK(answered > 0);
  const auto st = s.state();
  CHECK(st["status"] == "finished");
  CHECK(st["pending_proposal"].is_null());
  CHECK(st["feedback_count"] == answered);
  std::lock_guard l(em);
  REQUIRE_FALSE(events.empty());
  CHECK(events.back()["type"] == "end");
  for (const auto& e : events)
    if (e["type"] == "step" && e["paused"].get<bool>()) CHECK(e["executed"] == "FASTER");
}

TEST_CASE("unanswered proposals time out and execute as proposed") {
  SessionConfig c;
  c.mode = Mode::Personalization;
  c.sim = hitl_config(8, 4);
  c.feedback_timeout = 20ms;
  Session s("s-2", c, std::make_shared<MemoryStore>(), Backends::mock());
  std::vector<nlohmann::json> steps;
  std::mutex em;
  s.subscribe([&](const nlohmann::json& e) {
    std::lock_guard l(em);
    if (e["type"] == "step") steps.push_back(e);
  });
  s.start();
  REQUIRE(s.wait_finished(10s));
  CHECK(s.state()["feedback_count"] == 0);
  std::lock_guard l(em);
  REQUIRE_FALSE(steps.empty());
  for (const auto& e : steps) CHECK(e["executed"] == e["proposed"]);
}

TEST_CASE("autonomous sessions never pause and stop cleanly") {
  SessionConfig c;
  c.sim = hitl_config(9, 30);
  c.step_delay = 50ms;
  Session s("s-3", c, std::make_shared<MemoryStore>(), Backends::mock());
  s.start();
  CHECK_FALSE(s.wait_paused(120ms));
  s.stop();
  CHECK(s.status() == Status::Finished);
  CHECK(s.state()["summary"]["cancelled"] == true);
}
