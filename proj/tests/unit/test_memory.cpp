#include <fstream>
#include <random>
#include <sstream>
#include <thread>

#include "doctest.h"
#include "respond/memory.hpp"
#include "support.hpp"

using namespace respond;

namespace {

PatternVector random_vector(std::mt19937_64& rng, int max_level = 3) {
  PatternVector v;
  for (auto& c : v.v) c = static_cast<CellLevel>(rng() % (max_level + 1));
  return v;
}

double euclid(const PatternVector& a, const PatternVector& b) {
  double s = 0;
  for (int i = 0; i < kCells; ++i) {
    const double d = static_cast<double>(a.v[i]) - b.v[i];
    s += d * d;
  }
  return std::sqrt(s);
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("insert_l1 stores the mirrored counterpart") {
  MemoryStore m;
  PatternVector v;
  v.v[9] = 1;  // row 3, left column
  const auto ids = m.insert_l1(v, Action::LaneLeft, 1.0, Provenance::Reflection);
  CHECK(ids.size() == 2);
  CHECK(m.stats().l1_count == 2);
  CHECK(m.stats().mirror_count == 1);
  const auto mirrored = m.lookup_exact(mirror_vector(v));
  REQUIRE(mirrored);
  CHECK(mirrored->action == Action::LaneRight);
  CHECK(mirrored->provenance == Provenance::Mirror);

  MemoryStore sym;
  PatternVector s;
  s.v[10] = 2;
  CHECK(sym.insert_l1(s, Action::Idle, 0.6, Provenance::Episode).size() == 1);
  CHECK(sym.stats().l1_count == 1);
  // a lane change cannot sit on a symmetric key without breaking mirror closure
  CHECK(sym.insert_l1(s, Action::LaneLeft, 1.0, Provenance::Reflection).empty());
  CHECK(sym.lookup_exact(s)->action == Action::Idle);
  CHECK(sym.insert_l1(PatternVector{}, Action::LaneRight, 1.0, Provenance::Manual).empty());
  CHECK_FALSE(sym.lookup_exact(PatternVector{}));
}

TEST_CASE("confidence-gated overwrite") {
  MemoryStore m;
  PatternVector v;
  v.v[4] = 1;
  m.insert_l1(v, Action::Idle, 0.5, Provenance::Episode);
  m.insert_l1(v, Action::Slower, 1.0, Provenance::Reflection);
  CHECK(m.lookup_exact(v)->confidence == 1.0);
  CHECK(m.lookup_exact(v)->action == Action::Slower);
  CHECK(m.insert_l1(v, Action::Faster, 0.7, Provenance::Manual).empty());
  CHECK(m.lookup_exact(v)->action == Action::Slower);
}

TEST_CASE("lookup_exact: read-your-write, mirror, exactness") {
  MemoryStore m;
  PatternVector v;
  v.v[0] = 2;
  v.v[13] = 1;
  m.insert_l1(v, Action::Faster, 0.8, Provenance::Manual);
  CHECK(m.lookup_exact(v)->action == Action::Faster);
  CHECK(m.lookup_exact(mirror_vector(v))->action == Action::Faster);
  PatternVector w = v;
  w.v[7] = 1;
  CHECK_FALSE(m.lookup_exact(w).has_value());
}

TEST_CASE("nearest_l1 examples") {
  MemoryStore m;
  CHECK_FALSE(m.nearest_l1(PatternVector{}).has_value());
  m.insert_l1(PatternVector{}, Action::Idle, 0.6, Provenance::Episode);
  PatternVector q;
  q.v[6] = 2;
  const auto n = m.nearest_l1(q);
  REQUIRE(n);
  CHECK(n->second == doctest::Approx(2.0));
  CHECK(m.nearest_l1(PatternVector{})->second == 0.0);
}

TEST_CASE("randomized store against brute-force scans") {
  std::mt19937_64 rng(2024);
  MemoryStore m;
  for (int i = 0; i < 300; ++i) {
    m.insert_l1(random_vector(rng, 2), kAllActions[rng() % 5], (rng() % 11) / 10.0, Provenance::Manual);
  }
  const auto entries = m.l1_entries();
  // mirror closure
  for (const auto& e : entries) {
    const auto mirrored = m.lookup_exact(mirror_vector(e.vector));
    REQUIRE(mirrored);
    CHECK(mirrored->action == mirror_action(e.action));
  }
  for (int q = 0; q < 2000; ++q) {
    const PatternVector query = q % 4 == 0 ? entries[rng() % entries.size()].vector : random_vector(rng, 2);
    const MemoryEntry* best = nullptr;
    double best_d = 1e300;
    for (const auto& e : entries) {
      const double d = euclid(e.vector, query);
      if (d < best_d || (d == best_d && e.id < best->id)) {
        best = &e;
        best_d = d;
      }
    }
    const auto got = m.nearest_l1(query);
    REQUIRE(got);
    CHECK(got->first.id == best->id);
    CHECK(got->second == doctest::Approx(best_d));
    CHECK(m.lookup_exact(query).has_value() == (got->second == 0.0));
  }
}

TEST_CASE("insert_l2 mirroring and idempotence") {
  MemoryStore m;
  const auto ids = m.insert_l2(make_constraint(SubPatternKind::Left, {0, 2, 1, 0, 0}, Action::LaneLeft, 1.0,
                                               Provenance::Reflection));
  CHECK(ids.size() == 2);
  const auto all = m.l2_entries();
  REQUIRE(all.size() == 2);
  CHECK(all[1].kind == SubPatternKind::Right);
  CHECK(all[1].target == Action::LaneRight);
  CHECK(all[1].slice == std::vector<CellLevel>{0, 2, 1, 0, 0});
  CHECK(all[1].provenance == Provenance::Mirror);

  CHECK(m.insert_l2(make_strategy(SubPatternKind::Front, {2, 1}, Intent::ChangeLane, Action::LaneLeft, 1.0,
                                  Provenance::Reflection))
            .size() == 1);
  const auto style = make_style("sporty", {Zone::Front, 0.6, Action::Faster}, 1.0, Provenance::HumanFeedback);
  const auto s1 = m.insert_l2(style);
  const auto s2 = m.insert_l2(style);
  CHECK(s1 == s2);
  CHECK(m.styles("sporty").size() == 1);
  CHECK(m.profiles() == std::vector<std::string>{"sporty"});
}

TEST_CASE("match_l2 semantics and ordering") {
  MemoryStore m;
  CHECK(m.match_l2(RiskPattern{}, {}, std::string("x")).empty());

  m.insert_l2(make_style("sporty", {Zone::Front, 0.6, Action::Faster}, 1.0, Provenance::HumanFeedback));
  m.insert_l2(make_constraint(SubPatternKind::Left, {0, 0, 0, 0, 0}, Action::LaneLeft, 0.9, Provenance::Manual));
  m.insert_l2(make_strategy(SubPatternKind::Front, {2, 1}, Intent::ChangeLane, Action::LaneLeft, 0.8,
                            Provenance::Manual));
  m.insert_l2(make_strategy(SubPatternKind::Front, {2, 1}, Intent::Decelerate, Action::Slower, 1.0,
                            Provenance::Reflection));

  RiskPattern p;
  p.at(3, kEgoCol) = 2;
  p.at(4, kEgoCol) = 1;
  DirectionalRisks r;
  r.front = 0.55;
  const auto got = m.match_l2(p, r, std::string("sporty"));
  REQUIRE(got.size() == 5);  // 2 strategies, LEFT + RIGHT constraints, 1 style
  CHECK(got[0].kind == SubPatternKind::Front);
  CHECK(got[0].confidence == 1.0);  // higher confidence first
  CHECK(got[1].intent == Intent::ChangeLane);
  CHECK(got[4].kind == SubPatternKind::Style);

  r.front = 0.65;
  CHECK(m.match_l2(p, r, std::string("sporty")).size() == 4);
  r.front = 0.55;
  for (const auto& s : m.match_l2(p, r, std::nullopt)) CHECK(s.kind != SubPatternKind::Style);
  CHECK(m.match_l2(p, r, std::string("calm")).size() == 4);

  RiskPattern other = p;
  other.at(4, kEgoCol) = 2;
  for (const auto& s : m.match_l2(other, r, std::nullopt)) CHECK(s.kind != SubPatternKind::Front);
}

TEST_CASE("replace_styles swaps a profile's rules") {
  MemoryStore m;
  m.insert_l2(make_style("a", {Zone::Front, 0.6, Action::Faster}, 1.0, Provenance::HumanFeedback));
  m.replace_styles("a", {{Zone::Rear, 0.3, Action::Slower}, {Zone::LeftFront, 0.2, Action::LaneLeft}});
  const auto s = m.styles("a");
  REQUIRE(s.size() == 2);
  CHECK(s[0].style.direction == Zone::Rear);
}

TEST_CASE("persistence: golden file, round trip, lenient and strict loads") {
  MemoryStore m;
  PatternVector v;
  v.v[13] = 2;
  v.v[9] = 1;
  m.insert_l1(v, Action::LaneLeft, 1.0, Provenance::Reflection);
  m.insert_l2(make_constraint(SubPatternKind::Left, {0, 1, 1, 0, 0}, Action::LaneLeft, 1.0, Provenance::Reflection));
  m.insert_l2(make_strategy(SubPatternKind::Front, {2, 1}, Intent::ChangeLane, Action::LaneLeft, 1.0,
                            Provenance::Reflection));
  m.insert_l2(make_style("sporty", {Zone::Front, 0.6, Action::Faster}, 1.0, Provenance::HumanFeedback));
  const std::string golden = slurp(std::string(RESPOND_GOLDEN_DIR) + "/memory.jsonl");
  CHECK(m.serialize() == golden);
  CHECK(MemoryStore::deserialize(golden) == m);

  const auto dir = testsupport::scratch_dir("memory");
  CHECK(MemoryStore::load(dir / "absent.jsonl") == MemoryStore{});
  m.record_l1_hit(1);
  m.persist(dir / "m.jsonl");
  const MemoryStore back = MemoryStore::load(dir / "m.jsonl");
  CHECK(back == m);
  CHECK(back.stats() == m.stats());
  CHECK(back.serialize() == m.serialize());

  std::string broken = golden;
  broken.insert(broken.find('\n') + 1, "{not json\n");
  LoadReport rep;
  const MemoryStore lenient = MemoryStore::deserialize(broken, false, &rep);
  CHECK(rep.warnings == 1);
  CHECK(rep.messages.at(0).rfind("line 2:", 0) == 0);
  CHECK(lenient == MemoryStore::deserialize(golden));
  CHECK_THROWS_AS(MemoryStore::deserialize(broken, true), PersistenceError);

  try {
    MemoryStore::deserialize("{\"schema_version\":99}\n");
    FAIL("expected a schema error");
  } catch (const PersistenceError& e) {
    CHECK(e.kind() == PersistenceError::Kind::SchemaVersion);
  }
  CHECK_THROWS_AS(m.persist(dir / "no" / "such" / "dir" / "m.jsonl"), PersistenceError);
}

TEST_CASE("determinism: identical insert sequences give identical stores") {
  auto build = [] {
    std::mt19937_64 rng(9);
    MemoryStore m;
    for (int i = 0; i < 100; ++i) m.insert_l1(random_vector(rng), kAllActions[rng() % 5], 1.0, Provenance::Manual);
    return m;
  };
  CHECK(build().serialize() == build().serialize());
}

TEST_CASE("concurrent readers with one writer") {
  MemoryStore m;
  std::atomic<bool> done{false};
  std::thread writer([&] {
    std::mt19937_64 rng(1);
    for (int i = 0; i < 2000; ++i) m.insert_l1(random_vector(rng, 1), Action::Idle, 0.6, Provenance::Episode);
    done = true;
  });
  std::vector<std::thread> readers;
  std::atomic<int> bad{0};
  for (int t = 0; t < 4; ++t) {
    readers.emplace_back([&, t] {
      std::mt19937_64 rng(100 + t);
      while (!done) {
        const auto v = random_vector(rng, 1);
        const auto hit = m.lookup_exact(v);
        if (hit && hit->vector != v) ++bad;
      }
    });
  }
  writer.join();
  for (auto& r : readers) r.join();
  CHECK(bad == 0);
  for (const auto& e : m.l1_entries()) CHECK(m.lookup_exact(mirror_vector(e.vector)).has_value());
}
