#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "respond/risk_field.hpp"
#include "respond/types.hpp"

namespace respond {

/// Cell risk level: 0 Safe, 1 Attention, 2 Danger, 3 Critical.
using CellLevel = std::uint8_t;

inline constexpr int kRows = 5;  // 0 = rearmost band, 4 = frontmost band
inline constexpr int kCols = 3;  // 0 = left lane, 1 = ego lane, 2 = right lane
inline constexpr int kCells = kRows * kCols;
inline constexpr int kEgoRow = 2;
inline constexpr int kLeftCol = 0;
inline constexpr int kEgoCol = 1;
inline constexpr int kRightCol = 2;

/// 15-dimensional row-major flattening of a risk pattern (row 0, col 0 first).
struct PatternVector {
  std::array<CellLevel, kCells> v{};

  bool operator==(const PatternVector&) const = default;
  auto operator<=>(const PatternVector&) const = default;
  /// Fifteen digits, e.g. "000010000120000"; the memory index key.
  std::string key() const;
  static PatternVector from_key(std::string_view key);
};

/// 5x3 grid of discrete risk levels centered on the ego vehicle.
struct RiskPattern {
  std::array<std::array<CellLevel, kCols>, kRows> cells{};

  CellLevel& at(int row, int col) { return cells[row][col]; }
  CellLevel at(int row, int col) const { return cells[row][col]; }
  bool operator==(const RiskPattern&) const = default;
};

/// Longitudinal bands relative to the ego center, rear to front.
inline constexpr std::array<double, kRows + 1> kRowEdges = {-60.0, -30.0, -7.5, 7.5, 30.0, 60.0};
inline constexpr double kCenterProximityM = 30.0;

/// Tunables of the encoder besides the footprint.
struct EncoderParams {
  FootprintParams footprint;
  double proximity_m = kCenterProximityM;
};

CellLevel discretize(double rv);

/// TTC bins for the center column: inf -> 1, >5 s -> 1, (2,5] -> 2, <=2 -> 3.
CellLevel ttc_level(double ttc_s);

/// Row index for a longitudinal offset from ego, or -1 outside the grid span.
int row_of(double dx);

struct Encoding {
  RiskPattern pattern;
  DirectionalRisks risks;
};

Encoding encode_scene(const Scene& scene, const EncoderParams& params = {});

PatternVector flatten(const RiskPattern& p);
RiskPattern unflatten(const PatternVector& v);
RiskPattern unflatten(std::span<const int> values);

RiskPattern mirror(const RiskPattern& p);
PatternVector mirror_vector(const PatternVector& v);

/// Euclidean distance between pattern vectors.
double distance(const PatternVector& a, const PatternVector& b);

enum class SubPatternKind : std::uint8_t { Front, Rear, Left, Right, Style };

std::string_view kind_name(SubPatternKind k);
std::optional<SubPatternKind> kind_from_name(std::string_view name);
SubPatternKind mirror_kind(SubPatternKind k);

/// Cells of the fragment a kind looks at: FRONT = center rows 3-4, REAR =
/// center rows 0-1, LEFT = column 0, RIGHT = column 2 (rows rear to front).
std::vector<CellLevel> slice_of(const RiskPattern& p, SubPatternKind kind);

struct Slice {
  SubPatternKind kind;
  std::vector<CellLevel> cells;
  bool operator==(const Slice&) const = default;
};

/// FRONT, REAR, LEFT, RIGHT slices in that order.
std::vector<Slice> extract_subpatterns(const RiskPattern& p);

/// Five lines of three digits, rear row first.
std::string render_text(const RiskPattern& p);
/// Single line form: "000 / 010 / 000 / 120 / 000".
std::string render_inline(const RiskPattern& p);
/// {"cells": [[l,c,r], ...]} rear row first.
std::string render_json(const RiskPattern& p);
RiskPattern parse_pattern_json(std::string_view json);

}  // namespace respond
