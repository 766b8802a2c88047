#include "respond/memory.hpp"

#include <algorithm>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>
#include <tuple>

namespace respond {

using nlohmann::json;

std::string_view provenance_name(Provenance p) {
  switch (p) {
    case Provenance::Reflection:
      return "reflection";
    case Provenance::Mirror:
      return "mirror";
    case Provenance::Episode:
      return "episode";
    case Provenance::Manual:
      return "manual";
    case Provenance::HumanFeedback:
      return "human_feedback";
  }
  return "manual";
}

std::optional<Provenance> provenance_from_name(std::string_view name) {
  for (auto p : {Provenance::Reflection, Provenance::Mirror, Provenance::Episode, Provenance::Manual,
                 Provenance::HumanFeedback}) {
    if (provenance_name(p) == name) return p;
  }
  return std::nullopt;
}

std::string_view intent_name(Intent i) { return i == Intent::ChangeLane ? "change_lane" : "decelerate"; }

std::optional<Intent> intent_from_name(std::string_view name) {
  if (name == "change_lane") return Intent::ChangeLane;
  if (name == "decelerate") return Intent::Decelerate;
  return std::nullopt;
}

ActionSet intent_actions(Intent i) {
  if (i == Intent::ChangeLane) return {Action::LaneLeft, Action::LaneRight, Action::Slower};
  return {Action::Slower, Action::Idle};
}

SubPattern make_strategy(SubPatternKind kind, std::vector<CellLevel> slice, Intent intent, Action target,
                         double confidence, Provenance provenance) {
  if (kind != SubPatternKind::Front && kind != SubPatternKind::Rear) {
    throw ContractError("strategies are FRONT or REAR sub-patterns");
  }
  SubPattern s;
  s.kind = kind;
  s.slice = std::move(slice);
  s.intent = intent;
  s.target = target;
  s.confidence = confidence;
  s.provenance = provenance;
  return s;
}

SubPattern make_constraint(SubPatternKind kind, std::vector<CellLevel> slice, Action forbidden, double confidence,
                           Provenance provenance) {
  if (kind != SubPatternKind::Left && kind != SubPatternKind::Right) {
    throw ContractError("constraints are LEFT or RIGHT sub-patterns");
  }
  SubPattern s;
  s.kind = kind;
  s.slice = std::move(slice);
  s.target = forbidden;
  s.confidence = confidence;
  s.provenance = provenance;
  return s;
}

SubPattern make_style(std::string profile, StyleRule rule, double confidence, Provenance provenance) {
  SubPattern s;
  s.kind = SubPatternKind::Style;
  s.profile = std::move(profile);
  s.style = rule;
  s.target = rule.preferred;
  s.confidence = confidence;
  s.provenance = provenance;
  return s;
}

namespace {

void check_sub(const SubPattern& s) {
  if (!(s.confidence >= 0.0 && s.confidence <= 1.0)) throw ContractError("confidence outside [0,1]");
  for (CellLevel c : s.slice) {
    if (c > 3) throw ContractError("slice cell level outside 0-3");
  }
  switch (s.kind) {
    case SubPatternKind::Front:
    case SubPatternKind::Rear:
      if (s.slice.size() != 2) throw ContractError("FRONT/REAR slices have 2 cells");
      break;
    case SubPatternKind::Left:
    case SubPatternKind::Right:
      if (s.slice.size() != static_cast<std::size_t>(kRows)) throw ContractError("LEFT/RIGHT slices have 5 cells");
      break;
    case SubPatternKind::Style:
      if (!s.slice.empty()) throw ContractError("STYLE records carry no slice");
      if (!(s.style.upper_bound > 0.0 && s.style.upper_bound < 1.0)) {
        throw ContractError("STYLE bound must lie in (0,1)");
      }
      if (s.profile.empty()) throw ContractError("STYLE records need a profile");
      break;
  }
}

// Same knowledge, ignoring bookkeeping fields.
bool same_content(const SubPattern& a, const SubPattern& b) {
  if (a.kind != b.kind || a.slice != b.slice) return false;
  switch (a.kind) {
    case SubPatternKind::Front:
    case SubPatternKind::Rear:
      return a.intent == b.intent && a.target == b.target;
    case SubPatternKind::Left:
    case SubPatternKind::Right:
      return a.target == b.target;
    case SubPatternKind::Style:
      return a.profile == b.profile && a.style == b.style;
  }
  return false;
}

int kind_class(SubPatternKind k) {
  switch (k) {
    case SubPatternKind::Front:
    case SubPatternKind::Rear:
      return 0;
    case SubPatternKind::Left:
    case SubPatternKind::Right:
      return 1;
    case SubPatternKind::Style:
      return 2;
  }
  return 3;
}

}  // namespace

MemoryStore::MemoryStore(const MemoryStore& other) {
  std::shared_lock lock(other.mutex_);
  l1_ = other.l1_;
  l1_index_ = other.l1_index_;
  l2_ = other.l2_;
  next_id_ = other.next_id_;
  clock_ = other.clock_;
}

MemoryStore& MemoryStore::operator=(const MemoryStore& other) {
  if (this == &other) return *this;
  MemoryStore copy(other);
  std::unique_lock lock(mutex_);
  l1_ = std::move(copy.l1_);
  l1_index_ = std::move(copy.l1_index_);
  l2_ = std::move(copy.l2_);
  next_id_ = copy.next_id_;
  clock_ = copy.clock_;
  return *this;
}

EntryId MemoryStore::store_l1_locked(const PatternVector& v, Action a, double confidence, Provenance p,
                                     bool* changed) {
  const std::string key = v.key();
  auto it = l1_index_.find(key);
  ++clock_;
  if (it != l1_index_.end()) {
    MemoryEntry& e = l1_[it->second];
    if (confidence >= e.confidence) {
      e.action = a;
      e.confidence = confidence;
      e.provenance = p;
      e.created_at = clock_;
      *changed = true;
    } else {
      *changed = false;
    }
    return e.id;
  }
  MemoryEntry e;
  e.id = next_id_++;
  e.vector = v;
  e.action = a;
  e.confidence = confidence;
  e.provenance = p;
  e.created_at = clock_;
  l1_index_.emplace(key, l1_.size());
  l1_.push_back(e);
  *changed = true;
  return e.id;
}

std::vector<EntryId> MemoryStore::insert_l1(const PatternVector& vector, Action action, double confidence,
                                            Provenance provenance) {
  if (!(confidence >= 0.0 && confidence <= 1.0)) throw ContractError("confidence outside [0,1]");
  for (CellLevel c : vector.v) {
    if (c > 3) throw ContractError("cell level outside 0-3");
  }
  const PatternVector mv = mirror_vector(vector);
  // A self-symmetric vector has one slot, so it can only hold a mirror-invariant
  // action; a left/right preference there would break mirror closure.
  if (mv == vector && mirror_action(action) != action) return {};
  std::unique_lock lock(mutex_);
  std::vector<EntryId> ids;
  bool changed = false;
  EntryId id = store_l1_locked(vector, action, confidence, provenance, &changed);
  if (changed) ids.push_back(id);
  if (mv == vector) return ids;
  id = store_l1_locked(mv, mirror_action(action), confidence, Provenance::Mirror, &changed);
  if (changed) ids.push_back(id);
  return ids;
}

std::optional<MemoryEntry> MemoryStore::lookup_exact(const PatternVector& vector) const {
  std::shared_lock lock(mutex_);
  auto it = l1_index_.find(vector.key());
  if (it == l1_index_.end()) return std::nullopt;
  return l1_[it->second];
}

std::optional<std::pair<MemoryEntry, double>> MemoryStore::nearest_l1(const PatternVector& vector) const {
  std::shared_lock lock(mutex_);
  const MemoryEntry* best = nullptr;
  double best_d = 0.0;
  for (const auto& e : l1_) {
    double d = distance(vector, e.vector);
    if (!best || d < best_d || (d == best_d && e.id < best->id)) {
      best = &e;
      best_d = d;
    }
  }
  if (!best) return std::nullopt;
  return std::make_pair(*best, best_d);
}

EntryId MemoryStore::store_l2_locked(const SubPattern& sub) {
  ++clock_;
  for (auto& existing : l2_) {
    if (same_content(existing, sub)) {
      existing.confidence = std::max(existing.confidence, sub.confidence);
      return existing.id;
    }
  }
  SubPattern s = sub;
  s.id = next_id_++;
  s.created_at = clock_;
  s.hits = 0;
  l2_.push_back(std::move(s));
  return l2_.back().id;
}

std::vector<EntryId> MemoryStore::insert_l2(const SubPattern& sub) {
  check_sub(sub);
  std::unique_lock lock(mutex_);
  std::vector<EntryId> ids{store_l2_locked(sub)};
  if (sub.kind == SubPatternKind::Left || sub.kind == SubPatternKind::Right) {
    SubPattern m = sub;
    m.kind = mirror_kind(sub.kind);
    m.target = mirror_action(sub.target);
    m.provenance = Provenance::Mirror;
    ids.push_back(store_l2_locked(m));
  }
  return ids;
}

std::vector<SubPattern> MemoryStore::match_l2(const RiskPattern& pattern, const DirectionalRisks& risks,
                                              const std::optional<std::string>& profile) const {
  std::shared_lock lock(mutex_);
  std::vector<SubPattern> out;
  for (const auto& s : l2_) {
    if (s.kind == SubPatternKind::Style) {
      if (profile && s.profile == *profile && risks[s.style.direction] < s.style.upper_bound) out.push_back(s);
    } else if (s.slice == slice_of(pattern, s.kind)) {
      out.push_back(s);
    }
  }
  std::stable_sort(out.begin(), out.end(), [](const SubPattern& a, const SubPattern& b) {
    return std::make_tuple(kind_class(a.kind), -a.confidence, -static_cast<double>(a.created_at), a.id) <
           std::make_tuple(kind_class(b.kind), -b.confidence, -static_cast<double>(b.created_at), b.id);
  });
  return out;
}

void MemoryStore::record_l1_hit(EntryId id) {
  std::unique_lock lock(mutex_);
  for (auto& e : l1_) {
    if (e.id == id) {
      ++e.hits;
      return;
    }
  }
}

void MemoryStore::record_l2_hit(EntryId id) {
  std::unique_lock lock(mutex_);
  for (auto& s : l2_) {
    if (s.id == id) {
      ++s.hits;
      return;
    }
  }
}

std::vector<MemoryEntry> MemoryStore::l1_entries() const {
  std::shared_lock lock(mutex_);
  return l1_;
}

std::vector<SubPattern> MemoryStore::l2_entries() const {
  std::shared_lock lock(mutex_);
  return l2_;
}

std::vector<SubPattern> MemoryStore::styles(const std::string& profile) const {
  std::shared_lock lock(mutex_);
  std::vector<SubPattern> out;
  for (const auto& s : l2_) {
    if (s.kind == SubPatternKind::Style && s.profile == profile) out.push_back(s);
  }
  return out;
}

std::vector<std::string> MemoryStore::profiles() const {
  std::shared_lock lock(mutex_);
  std::vector<std::string> out;
  for (const auto& s : l2_) {
    if (s.kind == SubPatternKind::Style && std::find(out.begin(), out.end(), s.profile) == out.end()) {
      out.push_back(s.profile);
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

void MemoryStore::replace_styles(const std::string& profile, const std::vector<StyleRule>& rules) {
  std::vector<SubPattern> fresh;
  for (const auto& r : rules) {
    fresh.push_back(make_style(profile, r, 1.0, Provenance::Manual));
    check_sub(fresh.back());
  }
  std::unique_lock lock(mutex_);
  std::erase_if(l2_, [&](const SubPattern& s) { return s.kind == SubPatternKind::Style && s.profile == profile; });
  for (const auto& s : fresh) store_l2_locked(s);
}

MemoryStats MemoryStore::stats() const {
  std::shared_lock lock(mutex_);
  MemoryStats st;
  st.l1_count = l1_.size();
  st.l2_count = l2_.size();
  for (const auto& e : l1_) {
    if (e.provenance == Provenance::Mirror) ++st.mirror_count;
    st.l1_hits += e.hits;
  }
  for (const auto& s : l2_) {
    if (s.provenance == Provenance::Mirror) ++st.mirror_count;
    if (s.kind == SubPatternKind::Style) ++st.style_count;
    st.l2_hits += s.hits;
  }
  return st;
}

void MemoryStore::clear() {
  std::unique_lock lock(mutex_);
  l1_.clear();
  l1_index_.clear();
  l2_.clear();
  next_id_ = 1;
  clock_ = 0;
}

bool MemoryStore::operator==(const MemoryStore& other) const {
  if (this == &other) return true;
  std::shared_lock a(mutex_);
  std::shared_lock b(other.mutex_);
  return l1_ == other.l1_ && l2_ == other.l2_ && next_id_ == other.next_id_ && clock_ == other.clock_;
}

// ---- persistence ---------------------------------------------------------

namespace {

json l1_to_json(const MemoryEntry& e) {
  return json{{"layer", 1},
              {"id", e.id},
              {"vector", e.vector.key()},
              {"action", to_token(e.action)},
              {"confidence", e.confidence},
              {"provenance", provenance_name(e.provenance)},
              {"created_at", e.created_at},
              {"hits", e.hits}};
}

json l2_to_json(const SubPattern& s) {
  json j{{"layer", 2},
         {"id", s.id},
         {"kind", kind_name(s.kind)},
         {"confidence", s.confidence},
         {"provenance", provenance_name(s.provenance)},
         {"created_at", s.created_at},
         {"hits", s.hits}};
  json slice = json::array();
  for (CellLevel c : s.slice) slice.push_back(static_cast<int>(c));
  j["slice"] = slice;
  switch (s.kind) {
    case SubPatternKind::Front:
    case SubPatternKind::Rear:
      j["intent"] = intent_name(s.intent);
      j["target"] = to_token(s.target);
      break;
    case SubPatternKind::Left:
    case SubPatternKind::Right:
      j["forbidden"] = to_token(s.target);
      break;
    case SubPatternKind::Style:
      j["profile"] = s.profile;
      j["style"] = json{{"direction", zone_name(s.style.direction)},
                        {"upper_bound", s.style.upper_bound},
                        {"preferred", to_token(s.style.preferred)}};
      break;
  }
  return j;
}

template <typename T>
T required(const json& j, const char* key) {
  if (!j.contains(key)) throw std::invalid_argument(std::string("missing field '") + key + "'");
  return j.at(key).get<T>();
}

Action parse_action_field(const json& j, const char* key) {
  auto a = action_from_token(required<std::string>(j, key));
  if (!a) throw std::invalid_argument(std::string("unknown action in '") + key + "'");
  return *a;
}

Provenance parse_provenance(const json& j) {
  auto p = provenance_from_name(required<std::string>(j, "provenance"));
  if (!p) throw std::invalid_argument("unknown provenance");
  return *p;
}

MemoryEntry l1_from_json(const json& j) {
  MemoryEntry e;
  e.id = required<EntryId>(j, "id");
  e.vector = PatternVector::from_key(required<std::string>(j, "vector"));
  e.action = parse_action_field(j, "action");
  e.confidence = required<double>(j, "confidence");
  if (!(e.confidence >= 0.0 && e.confidence <= 1.0)) throw std::invalid_argument("confidence outside [0,1]");
  e.provenance = parse_provenance(j);
  e.created_at = required<std::uint64_t>(j, "created_at");
  e.hits = required<std::uint64_t>(j, "hits");
  return e;
}

SubPattern l2_from_json(const json& j) {
  SubPattern s;
  s.id = required<EntryId>(j, "id");
  auto kind = kind_from_name(required<std::string>(j, "kind"));
  if (!kind) throw std::invalid_argument("unknown sub-pattern kind");
  s.kind = *kind;
  for (int c : required<std::vector<int>>(j, "slice")) {
    if (c < 0 || c > 3) throw std::invalid_argument("slice cell outside 0-3");
    s.slice.push_back(static_cast<CellLevel>(c));
  }
  s.confidence = required<double>(j, "confidence");
  s.provenance = parse_provenance(j);
  s.created_at = required<std::uint64_t>(j, "created_at");
  s.hits = required<std::uint64_t>(j, "hits");
  switch (s.kind) {
    case SubPatternKind::Front:
    case SubPatternKind::Rear: {
      auto intent = intent_from_name(required<std::string>(j, "intent"));
      if (!intent) throw std::invalid_argument("unknown intent");
      s.intent = *intent;
      s.target = parse_action_field(j, "target");
      break;
    }
    case SubPatternKind::Left:
    case SubPatternKind::Right:
      s.target = parse_action_field(j, "forbidden");
      break;
    case SubPatternKind::Style: {
      s.profile = required<std::string>(j, "profile");
      const json& st = j.at("style");
      auto dir = zone_from_name(required<std::string>(st, "direction"));
      if (!dir) throw std::invalid_argument("unknown style direction");
      s.style.direction = *dir;
      s.style.upper_bound = required<double>(st, "upper_bound");
      s.style.preferred = parse_action_field(st, "preferred");
      s.target = s.style.preferred;
      break;
    }
  }
  check_sub(s);
  return s;
}

}  // namespace

std::string MemoryStore::serialize() const {
  std::shared_lock lock(mutex_);
  std::ostringstream out;
  out << json{{"schema_version", kMemorySchemaVersion},
              {"format", "respond-memory"},
              {"next_id", next_id_},
              {"clock", clock_}}
             .dump()
      << '\n';
  for (const auto& e : l1_) out << l1_to_json(e).dump() << '\n';
  for (const auto& s : l2_) out << l2_to_json(s).dump() << '\n';
  return out.str();
}

MemoryStore MemoryStore::deserialize(std::string_view text, bool strict, LoadReport* report) {
  LoadReport local;
  LoadReport& rep = report ? *report : local;
  MemoryStore store;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;

  auto fail = [&](const std::string& msg) {
    std::string full = "line " + std::to_string(line_no) + ": " + msg;
    if (strict) throw PersistenceError(PersistenceError::Kind::Parse, full);
    rep.messages.push_back(full);
    ++rep.warnings;
  };

  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (!header_seen) {
      auto h = json::parse(line, nullptr, false);
      if (h.is_discarded() || !h.is_object() || !h.contains("schema_version")) {
        throw PersistenceError(PersistenceError::Kind::SchemaVersion,
                               "line " + std::to_string(line_no) + ": missing schema_version header");
      }
      if (!h["schema_version"].is_number_integer() || h["schema_version"].get<int>() != kMemorySchemaVersion) {
        throw PersistenceError(PersistenceError::Kind::SchemaVersion,
                               "unsupported schema_version " + h["schema_version"].dump() + " (expected " +
                                   std::to_string(kMemorySchemaVersion) + ")");
      }
      store.next_id_ = h.value("next_id", EntryId{1});
      store.clock_ = h.value("clock", std::uint64_t{0});
      header_seen = true;
      continue;
    }
    auto j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
      fail("malformed JSON record");
      continue;
    }
    try {
      int layer = required<int>(j, "layer");
      if (layer == 1) {
        MemoryEntry e = l1_from_json(j);
        if (store.l1_index_.count(e.vector.key())) throw std::invalid_argument("duplicate layer-1 vector");
        store.l1_index_.emplace(e.vector.key(), store.l1_.size());
        store.l1_.push_back(e);
        store.next_id_ = std::max(store.next_id_, e.id + 1);
      } else if (layer == 2) {
        SubPattern s = l2_from_json(j);
        store.next_id_ = std::max(store.next_id_, s.id + 1);
        store.l2_.push_back(std::move(s));
      } else {
        throw std::invalid_argument("unknown layer " + std::to_string(layer));
      }
      ++rep.loaded;
    } catch (const std::exception& e) {
      fail(e.what());
    }
  }
  return store;
}

void MemoryStore::persist(const std::filesystem::path& path) const {
  const std::string text = serialize();
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw PersistenceError(PersistenceError::Kind::Io, "cannot open " + tmp.string() + " for writing");
    out << text;
    if (!out) throw PersistenceError(PersistenceError::Kind::Io, "write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw PersistenceError(PersistenceError::Kind::Io, "cannot replace " + path.string() + ": " + ec.message());
}

MemoryStore MemoryStore::load(const std::filesystem::path& path, bool strict, LoadReport* report) {
  std::error_code ec;
  if (!std::filesystem::exists(path, ec)) return MemoryStore{};
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PersistenceError(PersistenceError::Kind::Io, "cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return deserialize(buf.str(), strict, report);
}

}  // namespace respond
