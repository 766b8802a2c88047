#include <fstream>
#include <set>
#include <sstream>

#include "doctest.h"
#include "respond/pattern.hpp"
#include "support.hpp"

using namespace respond;
using testsupport::car;

namespace {

std::string slurp(const std::string& name) {
  std::ifstream in(std::string(RESPOND_GOLDEN_DIR) + "/" + name);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

RiskPattern golden_pattern() {
  RiskPattern p;
  p.at(1, 1) = 1;
  p.at(3, 0) = 1;
  p.at(3, 1) = 2;
  p.at(4, 2) = 3;
  return p;
}

double rect_overlap(const testsupport::Rect& a, const testsupport::Rect& b) {
  const double w = std::min(a.x1, b.x1) - std::max(a.x0, b.x0);
  const double h = std::min(a.y1, b.y1) - std::max(a.y0, b.y0);
  return w > 0 && h > 0 ? w * h : 0.0;
}

}  // namespace

TEST_CASE("discretize boundary table") {
  CHECK(discretize(0.0) == 0);
  CHECK(discretize(0.20) == 0);
  CHECK(discretize(0.3399999) == 0);
  CHECK(discretize(0.34) == 1);
  CHECK(discretize(0.6599999) == 1);
  CHECK(discretize(0.66) == 2);
  CHECK(discretize(0.9899999) == 2);
  CHECK(discretize(0.99) == 3);
  CHECK(discretize(0.995) == 3);
  CHECK(discretize(1.0) == 3);
  CHECK_THROWS_AS(discretize(-0.01), ContractError);
  CHECK_THROWS_AS(discretize(1.01), ContractError);
}

TEST_CASE("ttc bins") {
  CHECK(ttc_level(kInfiniteTtc) == 1);
  CHECK(ttc_level(5.01) == 1);
  CHECK(ttc_level(5.0) == 2);
  CHECK(ttc_level(2.01) == 2);
  CHECK(ttc_level(2.0) == 3);
  CHECK(ttc_level(0.0) == 3);
}

TEST_CASE("row bands") {
  CHECK(row_of(-60.0) == 0);
  CHECK(row_of(-30.01) == 0);
  CHECK(row_of(-30.0) == 1);
  CHECK(row_of(-7.5) == 2);
  CHECK(row_of(7.49) == 2);
  CHECK(row_of(7.5) == 3);
  CHECK(row_of(30.0) == 4);
  CHECK(row_of(59.99) == 4);
  CHECK(row_of(60.0) == -1);
  CHECK(row_of(-60.01) == -1);
}

TEST_CASE("encode: empty road in an interior lane is all zero") {
  const Encoding e = encode_scene(testsupport::scene_with(4, 1, 25.0));
  CHECK(e.pattern == RiskPattern{});
}

TEST_CASE("encode: road edges") {
  RiskPattern left_edge;
  for (int r = 0; r < kRows; ++r) left_edge.at(r, kLeftCol) = 1;
  CHECK(encode_scene(testsupport::scene_with(4, 3, 25.0)).pattern == left_edge);

  RiskPattern right_edge;
  for (int r = 0; r < kRows; ++r) right_edge.at(r, kRightCol) = 1;
  CHECK(encode_scene(testsupport::scene_with(4, 0, 25.0)).pattern == right_edge);
}

TEST_CASE("encode: hand trace of a 20 m / 5 m/s lead") {
  // centers 25 m apart -> row 3; bumper gap 20 m, closing 5 m/s -> TTC 4.0 s -> bin (2, 5] -> level 2
  Scene s = testsupport::scene_with(4, 1, 30.0);
  s.others = {car(1, 1, 25.0, 25.0, s.road)};
  RiskPattern expected;
  expected.at(3, kEgoCol) = 2;
  CHECK(encode_scene(s).pattern == expected);
}

TEST_CASE("encode: center-column proximity and TTC overrides") {
  Scene s = testsupport::scene_with(4, 1, 30.0);
  s.others = {car(1, 1, 35.0, 10.0, s.road)};  // closing fast but 35 m away
  CHECK(encode_scene(s).pattern == RiskPattern{});

  s.others = {car(1, 1, 20.0, 35.0, s.road)};  // near, pulling away
  CHECK(encode_scene(s).pattern.at(3, kEgoCol) == 1);

  s.others = {car(1, 1, 15.0, 25.0, s.road)};  // gap 10, closing 5 -> 2.0 s
  CHECK(encode_scene(s).pattern.at(3, kEgoCol) == 3);

  s.others = {car(1, 1, -20.0, 36.0, s.road)};  // follower: gap 15, closing 6 -> 2.5 s
  RiskPattern rear;
  rear.at(1, kEgoCol) = 2;
  CHECK(encode_scene(s).pattern == rear);

  s.others = {car(1, 1, 7.0, 30.0, s.road)};  // inside the ego band, 2 m gap, not closing
  CHECK(encode_scene(s).pattern.at(kEgoRow, kEgoCol) == 1);

  s.others = {car(1, 1, 5.0, 30.0, s.road)};  // bumpers touching: TTC 0
  CHECK(encode_scene(s).pattern.at(kEgoRow, kEgoCol) == 3);
}

TEST_CASE("encode: side cells take the discretized footprint overlap") {
  Scene s = testsupport::scene_with(4, 1, 20.0);
  const VehicleState left = car(1, 2, 12.0, 18.0, s.road);
  const VehicleState right = car(2, 0, -15.0, 28.0, s.road);
  s.others = {left, right};
  const auto ego_left = testsupport::oracle_footprint(s.ego, 1.2, 0.25, 4.0);
  const auto ego_right = testsupport::oracle_footprint(s.ego, 1.2, 0.25, -4.0);
  const double rv_left = rect_overlap(ego_left, testsupport::oracle_footprint(left)) / ego_left.area();
  const auto fr = testsupport::oracle_footprint(right);
  const double rv_right = rect_overlap(ego_right, fr) / fr.area();

  const Encoding e = encode_scene(s);
  RiskPattern expected;
  expected.at(3, kLeftCol) = discretize(rv_left);
  expected.at(1, kRightCol) = discretize(rv_right);
  CHECK(e.pattern == expected);
  CHECK(e.risks.left_front == doctest::Approx(rv_left));
  CHECK(e.risks.right_rear == doctest::Approx(rv_right));
  CHECK(expected.at(3, kLeftCol) >= 1);
}

TEST_CASE("encode: vehicles beyond the grid span are ignored") {
  Scene s = testsupport::scene_with(4, 1, 25.0);
  s.others = {car(1, 2, 61.0, 25.0, s.road), car(2, 0, -65.0, 40.0, s.road), car(3, 1, 70.0, 5.0, s.road)};
  CHECK(encode_scene(s).pattern == RiskPattern{});
}

TEST_CASE("encode properties over simulator scenes") {
  std::set<int> seen;
  for (std::uint64_t seed = 1; seed <= 300; ++seed) {
    const Scene s = testsupport::random_sim_scene(seed);
    const Encoding e = encode_scene(s);
    const Encoding m = encode_scene(mirror_scene(s));
    CHECK(m.pattern == mirror(e.pattern));
    CHECK(m.risks == mirror_risks(e.risks));
    if (s.road.is_leftmost(s.ego.lane_index)) {
      for (int r = 0; r < kRows; ++r) CHECK(e.pattern.at(r, kLeftCol) >= 1);
    }
    if (s.road.is_rightmost(s.ego.lane_index)) {
      for (int r = 0; r < kRows; ++r) CHECK(e.pattern.at(r, kRightCol) >= 1);
    }
    bool near_same_lane = false;
    for (const auto& o : s.others) {
      if (o.lane_index == s.ego.lane_index && std::abs(o.x - s.ego.x) <= 30.0) near_same_lane = true;
    }
    if (!near_same_lane) {
      for (int r = 0; r < kRows; ++r) CHECK(e.pattern.at(r, kEgoCol) == 0);
    }
    for (int i = 0; i < kCells; ++i) seen.insert(flatten(e.pattern).v[i]);
  }
  CHECK(seen == std::set<int>{0, 1, 2, 3});
}

TEST_CASE("flatten and unflatten") {
  CHECK(flatten(RiskPattern{}).v == std::array<CellLevel, kCells>{});
  RiskPattern p;
  p.at(4, 1) = 3;
  CHECK(flatten(p).v[13] == 3);
  std::mt19937_64 rng(5);
  for (int i = 0; i < 500; ++i) {
    RiskPattern q;
    for (int r = 0; r < kRows; ++r)
      for (int c = 0; c < kCols; ++c) q.at(r, c) = static_cast<CellLevel>(rng() % 4);
    CHECK(unflatten(flatten(q)) == q);
    CHECK(PatternVector::from_key(flatten(q).key()) == flatten(q));
    CHECK(mirror(mirror(q)) == q);
    CHECK(mirror_vector(flatten(q)) == flatten(mirror(q)));
  }
  const std::vector<int> short_v(14, 0);
  CHECK_THROWS_AS(unflatten(std::span<const int>(short_v)), ContractError);
  std::vector<int> bad(15, 0);
  bad[3] = 4;
  CHECK_THROWS_AS(unflatten(std::span<const int>(bad)), ContractError);
}

TEST_CASE("mirror fixes symmetric patterns") {
  RiskPattern p;
  p.at(0, 0) = p.at(0, 2) = 2;
  p.at(3, 1) = 1;
  CHECK(mirror(p) == p);
  CHECK(mirror_kind(SubPatternKind::Left) == SubPatternKind::Right);
  CHECK(mirror_kind(SubPatternKind::Front) == SubPatternKind::Front);
  for (auto k : {SubPatternKind::Front, SubPatternKind::Rear, SubPatternKind::Left, SubPatternKind::Right,
                 SubPatternKind::Style})
    CHECK(mirror_kind(mirror_kind(k)) == k);
}

TEST_CASE("sub-pattern slices") {
  for (const auto& s : extract_subpatterns(RiskPattern{})) {
    for (auto c : s.cells) CHECK(c == 0);
  }
  RiskPattern p = golden_pattern();
  p.at(4, 1) = 2;
  p.at(3, 1) = 1;
  const auto slices = extract_subpatterns(p);
  REQUIRE(slices.size() == 4);
  CHECK(slices[0].kind == SubPatternKind::Front);
  CHECK(slices[0].cells == std::vector<CellLevel>{1, 2});  // rows 3, 4
  CHECK(slices[1].cells == std::vector<CellLevel>{0, 1});  // rows 0, 1
  CHECK(slices[2].cells == std::vector<CellLevel>{0, 0, 0, 1, 0});
  CHECK(slices[3].cells == std::vector<CellLevel>{0, 0, 0, 0, 3});
  CHECK(slice_of(p, SubPatternKind::Left) == slice_of(mirror(p), SubPatternKind::Right));
}

TEST_CASE("renderings match the golden files") {
  const RiskPattern p = golden_pattern();
  CHECK(render_text(p) == slurp("pattern_text.txt"));
  CHECK(render_inline(p) == slurp("pattern_inline.txt"));
  CHECK(render_json(p) == slurp("pattern.json"));
  CHECK(parse_pattern_json(slurp("pattern.json")) == p);
  CHECK_THROWS_AS(parse_pattern_json(R"({"cells":[[0,0,0]]})"), ContractError);
}
