#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "respond/pattern.hpp"
#include "respond/risk_field.hpp"
#include "respond/types.hpp"

namespace respond {

enum class Provenance : std::uint8_t { Reflection, Mirror, Episode, Manual, HumanFeedback };

std::string_view provenance_name(Provenance p);
std::optional<Provenance> provenance_from_name(std::string_view name);

using EntryId = std::uint64_t;

/// Layer-1 record: an exact pattern vector paired with an action.
struct MemoryEntry {
  EntryId id = 0;
  PatternVector vector;
  Action action = Action::Idle;
  double confidence = 0.0;
  Provenance provenance = Provenance::Manual;
  std::uint64_t created_at = 0;  // logical clock of the store
  std::uint64_t hits = 0;
  bool operator==(const MemoryEntry&) const = default;
};

/// Strategic intent carried by FRONT/REAR sub-patterns.
enum class Intent : std::uint8_t { ChangeLane, Decelerate };

std::string_view intent_name(Intent i);
std::optional<Intent> intent_from_name(std::string_view name);
/// Candidate actions consistent with an intent; SLOWER is always included.
ActionSet intent_actions(Intent i);

/// STYLE payload: prefer `preferred` while risks[direction] < upper_bound.
struct StyleRule {
  Zone direction = Zone::Front;
  double upper_bound = 0.5;
  Action preferred = Action::Idle;
  bool operator==(const StyleRule&) const = default;
};

/// Layer-2 record: a sliced grid fragment with kind-specific payload.
struct SubPattern {
  EntryId id = 0;
  SubPatternKind kind = SubPatternKind::Front;
  std::vector<CellLevel> slice;
  Intent intent = Intent::Decelerate;  // FRONT/REAR
  Action target = Action::Slower;      // FRONT/REAR target action, LEFT/RIGHT forbidden action
  StyleRule style;                     // STYLE only
  std::string profile;                 // STYLE only
  double confidence = 1.0;
  Provenance provenance = Provenance::Manual;
  std::uint64_t created_at = 0;
  std::uint64_t hits = 0;
  bool operator==(const SubPattern&) const = default;
};

SubPattern make_strategy(SubPatternKind kind, std::vector<CellLevel> slice, Intent intent, Action target,
                         double confidence, Provenance provenance);
SubPattern make_constraint(SubPatternKind kind, std::vector<CellLevel> slice, Action forbidden, double confidence,
                           Provenance provenance);
SubPattern make_style(std::string profile, StyleRule rule, double confidence, Provenance provenance);

struct MemoryStats {
  std::size_t l1_count = 0;
  std::size_t l2_count = 0;
  std::size_t mirror_count = 0;
  std::size_t style_count = 0;
  std::uint64_t l1_hits = 0;
  std::uint64_t l2_hits = 0;
  bool operator==(const MemoryStats&) const = default;
};

class PersistenceError : public std::runtime_error {
 public:
  enum class Kind { Io, SchemaVersion, Parse };
  PersistenceError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

struct LoadReport {
  std::size_t loaded = 0;
  std::size_t warnings = 0;
  std::vector<std::string> messages;  // "line N: ..."
};

inline constexpr int kMemorySchemaVersion = 1;

/// Two-layer structured memory. Readers share a lock; every mutation goes
/// through the writer methods below and holds it exclusively.
class MemoryStore {
 public:
  MemoryStore() = default;
  MemoryStore(const MemoryStore& other);
  MemoryStore& operator=(const MemoryStore& other);

  /// Stores (vector, action) and its mirrored counterpart. Returns ids of
  /// entries that were created or overwritten. A lane change on a self-symmetric
  /// vector is refused (empty result).
  std::vector<EntryId> insert_l1(const PatternVector& vector, Action action, double confidence,
                                 Provenance provenance);
  std::optional<MemoryEntry> lookup_exact(const PatternVector& vector) const;
  /// Euclidean nearest neighbour by linear scan; ties go to the lowest id.
  std::optional<std::pair<MemoryEntry, double>> nearest_l1(const PatternVector& vector) const;

  /// Stores a sub-pattern; LEFT/RIGHT constraints are stored with their
  /// mirror. Re-inserting an identical record returns the existing id.
  std::vector<EntryId> insert_l2(const SubPattern& sub);
  /// Strategies first, then constraints, then styles (only with a profile).
  std::vector<SubPattern> match_l2(const RiskPattern& pattern, const DirectionalRisks& risks,
                                   const std::optional<std::string>& profile) const;

  void record_l1_hit(EntryId id);
  void record_l2_hit(EntryId id);

  std::vector<MemoryEntry> l1_entries() const;
  std::vector<SubPattern> l2_entries() const;
  std::vector<SubPattern> styles(const std::string& profile) const;
  std::vector<std::string> profiles() const;
  /// Replaces every STYLE record of `profile`.
  void replace_styles(const std::string& profile, const std::vector<StyleRule>& rules);
  MemoryStats stats() const;
  void clear();

  /// Line-delimited JSON with a schema header line.
  void persist(const std::filesystem::path& path) const;
  static MemoryStore load(const std::filesystem::path& path, bool strict = false, LoadReport* report = nullptr);
  std::string serialize() const;
  static MemoryStore deserialize(std::string_view text, bool strict = false, LoadReport* report = nullptr);

  bool operator==(const MemoryStore& other) const;

 private:
  EntryId store_l1_locked(const PatternVector& v, Action a, double confidence, Provenance p, bool* changed);
  EntryId store_l2_locked(const SubPattern& sub);

  mutable std::shared_mutex mutex_;
  std::vector<MemoryEntry> l1_;
  std::unordered_map<std::string, std::size_t> l1_index_;
  std::vector<SubPattern> l2_;
  EntryId next_id_ = 1;
  std::uint64_t clock_ = 0;
};

}  // namespace respond
