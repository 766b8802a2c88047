#include "respond/pattern.hpp"

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>
#include <sstream>

namespace respond {

std::string PatternVector::key() const {
  std::string s(kCells, '0');
  for (int i = 0; i < kCells; ++i) s[i] = static_cast<char>('0' + v[i]);
  return s;
}

PatternVector PatternVector::from_key(std::string_view key) {
  if (key.size() != static_cast<std::size_t>(kCells)) {
    throw ContractError("pattern vector key must have 15 digits");
  }
  PatternVector out;
  for (int i = 0; i < kCells; ++i) {
    char c = key[i];
    if (c < '0' || c > '3') throw ContractError("pattern vector digits must be 0-3");
    out.v[i] = static_cast<CellLevel>(c - '0');
  }
  return out;
}

CellLevel discretize(double rv) {
  if (!(rv >= 0.0 && rv <= 1.0)) throw ContractError("risk value outside [0,1]");
  if (rv < 0.34) return 0;
  if (rv < 0.66) return 1;
  if (rv < 0.99) return 2;
  return 3;
}

CellLevel ttc_level(double ttc_s) {
  if (std::isinf(ttc_s) || ttc_s > 5.0) return 1;
  if (ttc_s > 2.0) return 2;
  return 3;
}

int row_of(double dx) {
  if (dx < kRowEdges.front() || dx >= kRowEdges.back()) return -1;
  for (int r = 0; r < kRows; ++r) {
    if (dx < kRowEdges[r + 1]) return r;
  }
  return -1;
}

Encoding encode_scene(const Scene& scene, const EncoderParams& params) {
  Encoding out;
  out.risks = directional_risks(scene, params.footprint);

  std::array<std::array<double, kCols>, kRows> side_rv{};
  RiskPattern& p = out.pattern;
  const VehicleState& ego = scene.ego;

  for (const auto& other : scene.others) {
    auto zone = assign_zone(ego, other);
    if (!zone) continue;
    const double dx = other.x - ego.x;
    const int row = row_of(dx);
    if (row < 0) continue;
    const int rel = other.lane_index - ego.lane_index;
    if (rel == 0) {
      if (std::abs(dx) > params.proximity_m) continue;
      const double t = dx >= 0.0 ? ttc(ego, other) : ttc(other, ego);
      p.at(row, kEgoCol) = std::max(p.at(row, kEgoCol), ttc_level(t));
    } else {
      const int col = rel == 1 ? kLeftCol : kRightCol;
      const double rv = pairwise_risk(ego, other, *zone, scene.road.lane_width, params.footprint);
      side_rv[row][col] = std::max(side_rv[row][col], rv);
    }
  }

  for (int r = 0; r < kRows; ++r) {
    p.at(r, kLeftCol) = discretize(side_rv[r][kLeftCol]);
    p.at(r, kRightCol) = discretize(side_rv[r][kRightCol]);
  }

  // Road edge: the column beyond the outermost lane is non-drivable.
  if (scene.road.is_leftmost(ego.lane_index)) {
    for (int r = 0; r < kRows; ++r) p.at(r, kLeftCol) = std::max<CellLevel>(p.at(r, kLeftCol), 1);
  }
  if (scene.road.is_rightmost(ego.lane_index)) {
    for (int r = 0; r < kRows; ++r) p.at(r, kRightCol) = std::max<CellLevel>(p.at(r, kRightCol), 1);
  }
  return out;
}

PatternVector flatten(const RiskPattern& p) {
  PatternVector out;
  for (int r = 0; r < kRows; ++r) {
    for (int c = 0; c < kCols; ++c) out.v[r * kCols + c] = p.at(r, c);
  }
  return out;
}

RiskPattern unflatten(const PatternVector& v) {
  RiskPattern p;
  for (int i = 0; i < kCells; ++i) {
    if (v.v[i] > 3) throw ContractError("cell level outside 0-3");
    p.at(i / kCols, i % kCols) = v.v[i];
  }
  return p;
}

RiskPattern unflatten(std::span<const int> values) {
  if (values.size() != static_cast<std::size_t>(kCells)) throw ContractError("pattern vector must have 15 cells");
  PatternVector v;
  for (int i = 0; i < kCells; ++i) {
    if (values[i] < 0 || values[i] > 3) throw ContractError("cell level outside 0-3");
    v.v[i] = static_cast<CellLevel>(values[i]);
  }
  return unflatten(v);
}

RiskPattern mirror(const RiskPattern& p) {
  RiskPattern m = p;
  for (int r = 0; r < kRows; ++r) std::swap(m.at(r, kLeftCol), m.at(r, kRightCol));
  return m;
}

PatternVector mirror_vector(const PatternVector& v) { return flatten(mirror(unflatten(v))); }

double distance(const PatternVector& a, const PatternVector& b) {
  int sum = 0;
  for (int i = 0; i < kCells; ++i) {
    int d = static_cast<int>(a.v[i]) - static_cast<int>(b.v[i]);
    sum += d * d;
  }
  return std::sqrt(static_cast<double>(sum));
}

std::string_view kind_name(SubPatternKind k) {
  switch (k) {
    case SubPatternKind::Front:
      return "FRONT";
    case SubPatternKind::Rear:
      return "REAR";
    case SubPatternKind::Left:
      return "LEFT";
    case SubPatternKind::Right:
      return "RIGHT";
    case SubPatternKind::Style:
      return "STYLE";
  }
  return "STYLE";
}

std::optional<SubPatternKind> kind_from_name(std::string_view name) {
  for (auto k : {SubPatternKind::Front, SubPatternKind::Rear, SubPatternKind::Left, SubPatternKind::Right,
                 SubPatternKind::Style}) {
    if (kind_name(k) == name) return k;
  }
  return std::nullopt;
}

SubPatternKind mirror_kind(SubPatternKind k) {
  if (k == SubPatternKind::Left) return SubPatternKind::Right;
  if (k == SubPatternKind::Right) return SubPatternKind::Left;
  return k;
}

std::vector<CellLevel> slice_of(const RiskPattern& p, SubPatternKind kind) {
  switch (kind) {
    case SubPatternKind::Front:
      return {p.at(3, kEgoCol), p.at(4, kEgoCol)};
    case SubPatternKind::Rear:
      return {p.at(0, kEgoCol), p.at(1, kEgoCol)};
    case SubPatternKind::Left:
    case SubPatternKind::Right: {
      const int col = kind == SubPatternKind::Left ? kLeftCol : kRightCol;
      std::vector<CellLevel> out;
      for (int r = 0; r < kRows; ++r) out.push_back(p.at(r, col));
      return out;
    }
    case SubPatternKind::Style:
      return {};
  }
  return {};
}

std::vector<Slice> extract_subpatterns(const RiskPattern& p) {
  std::vector<Slice> out;
  for (auto k : {SubPatternKind::Front, SubPatternKind::Rear, SubPatternKind::Left, SubPatternKind::Right}) {
    out.push_back({k, slice_of(p, k)});
  }
  return out;
}

namespace {

std::string row_digits(const RiskPattern& p, int r) {
  std::string s(kCols, '0');
  for (int c = 0; c < kCols; ++c) s[c] = static_cast<char>('0' + p.at(r, c));
  return s;
}

}  // namespace

std::string render_text(const RiskPattern& p) {
  std::string out;
  for (int r = 0; r < kRows; ++r) {
    out += row_digits(p, r);
    out += '\n';
  }
  return out;
}

std::string render_inline(const RiskPattern& p) {
  std::string out;
  for (int r = 0; r < kRows; ++r) {
    if (r > 0) out += " / ";
    out += row_digits(p, r);
  }
  return out;
}

std::string render_json(const RiskPattern& p) {
  nlohmann::json rows = nlohmann::json::array();
  for (int r = 0; r < kRows; ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (int c = 0; c < kCols; ++c) row.push_back(static_cast<int>(p.at(r, c)));
    rows.push_back(row);
  }
  return nlohmann::json{{"cells", rows}}.dump();
}

RiskPattern parse_pattern_json(std::string_view json) {
  auto j = nlohmann::json::parse(json, nullptr, false);
  if (j.is_discarded() || !j.contains("cells") || !j["cells"].is_array() || j["cells"].size() != kRows) {
    throw ContractError("pattern JSON must hold 5 rows under \"cells\"");
  }
  std::vector<int> values;
  for (const auto& row : j["cells"]) {
    if (!row.is_array() || row.size() != kCols) throw ContractError("pattern JSON rows must have 3 cells");
    for (const auto& c : row) {
      if (!c.is_number_integer()) throw ContractError("pattern JSON cells must be integers");
      values.push_back(c.get<int>());
    }
  }
  return unflatten(std::span<const int>(values));
}

}  // namespace respond
