#include "respond/highd.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <future>
#include <random>
#include <sstream>
#include <unordered_map>

#include "respond/json_io.hpp"

namespace respond::highd {

using nlohmann::json;
namespace fs = std::filesystem;

const TrackSample* Track::at(int frame) const {
  if (samples.empty() || frame < first_frame() || frame > last_frame()) return nullptr;
  return &samples[static_cast<std::size_t>(frame - first_frame())];
}

namespace {

// ---- CSV --------------------------------------------------------------------

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r' || s[b] == '"')) ++b;
  while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r' || s[e - 1] == '"')) --e;
  return std::string(s.substr(b, e - b));
}

std::vector<std::string> split(std::string_view line, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= line.size(); ++i) {
    if (i == line.size() || line[i] == sep) {
      out.push_back(trim(line.substr(start, i - start)));
      start = i + 1;
    }
  }
  return out;
}

struct CsvTable {
  std::string file;
  std::unordered_map<std::string, std::size_t> columns;
  std::vector<std::vector<std::string>> rows;
  std::vector<int> line_numbers;

  std::size_t require(const std::string& name) const {
    auto it = columns.find(name);
    if (it == columns.end()) throw SchemaError(file + ": missing required column \"" + name + "\"");
    return it->second;
  }
};

CsvTable read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw SchemaError("cannot open " + path.string());
  CsvTable t;
  t.file = path.filename().string();
  std::string line;
  if (!std::getline(in, line)) throw SchemaError(t.file + ": empty file, no header");
  auto header = split(line, ',');
  for (std::size_t i = 0; i < header.size(); ++i) t.columns.emplace(header[i], i);
  int n = 1;
  while (std::getline(in, line)) {
    ++n;
    if (trim(line).empty()) continue;
    auto cells = split(line, ',');
    if (cells.size() < header.size()) {
      throw DataError(t.file + " line " + std::to_string(n) + ": expected " + std::to_string(header.size()) +
                      " fields, got " + std::to_string(cells.size()));
    }
    t.rows.push_back(std::move(cells));
    t.line_numbers.push_back(n);
  }
  return t;
}

double to_double(const CsvTable& t, std::size_t row, std::size_t col) {
  const std::string& s = t.rows[row][col];
  double v = 0.0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || !std::isfinite(v)) {
    throw DataError(t.file + " line " + std::to_string(t.line_numbers[row]) + ": not a number: \"" + s + "\"");
  }
  return v;
}

int to_int(const CsvTable& t, std::size_t row, std::size_t col) {
  double v = to_double(t, row, col);
  if (v != std::floor(v)) {
    throw DataError(t.file + " line " + std::to_string(t.line_numbers[row]) + ": expected an integer");
  }
  return static_cast<int>(v);
}

std::vector<double> parse_markings(const std::string& s, const std::string& where) {
  std::vector<double> out;
  for (const auto& part : split(s, ';')) {
    if (part.empty()) continue;
    double v = 0.0;
    auto [p, ec] = std::from_chars(part.data(), part.data() + part.size(), v);
    if (ec != std::errc() || p != part.data() + part.size()) throw DataError(where + ": bad lane marking \"" + part + "\"");
    out.push_back(v);
  }
  std::sort(out.begin(), out.end());
  return out;
}

// Lane ids count lanes top to bottom over upper markings, the median and the
// lower markings: the lane between the i-th and (i+1)-th marking of the
// concatenated list has id i + 2.
std::vector<double> all_markings(const RecordingMeta& m) {
  std::vector<double> all = m.upper_markings;
  all.insert(all.end(), m.lower_markings.begin(), m.lower_markings.end());
  return all;
}

int upper_lane_count(const RecordingMeta& m) { return std::max<int>(0, static_cast<int>(m.upper_markings.size()) - 1); }
int lower_lane_count(const RecordingMeta& m) { return std::max<int>(0, static_cast<int>(m.lower_markings.size()) - 1); }

/// Travel-direction lane index (0 rightmost) of a lane id, or -1 when the id
/// is not a lane of that direction.
int lane_index_of_id(const RecordingMeta& m, int direction, int lane_id) {
  const int nu = upper_lane_count(m), nl = lower_lane_count(m);
  if (direction == 1) {
    // Upper lanes travel toward -x; the top lane is the driver's rightmost.
    const int idx = lane_id - 2;
    return idx >= 0 && idx < nu ? idx : -1;
  }
  const int first = static_cast<int>(m.upper_markings.size()) + 2;  // id of the topmost lower lane
  const int offset = lane_id - first;
  if (offset < 0 || offset >= nl) return -1;
  return nl - 1 - offset;  // topmost lower lane is the driver's leftmost
}

int lane_id_at(const std::vector<double>& markings, double y_center) {
  for (std::size_t i = 0; i + 1 < markings.size(); ++i) {
    if (y_center >= markings[i] && y_center < markings[i + 1]) return static_cast<int>(i) + 2;
  }
  return y_center < markings.front() ? 1 : static_cast<int>(markings.size()) + 1;
}

}  // namespace

Recording parse_recording(const RecordingPaths& paths) {
  Recording rec;

  CsvTable rm = read_csv(paths.recording_meta);
  {
    const auto c_id = rm.require("id"), c_fr = rm.require("frameRate");
    const auto c_up = rm.require("upperLaneMarkings"), c_lo = rm.require("lowerLaneMarkings");
    if (rm.rows.empty()) throw DataError(rm.file + ": no recording row");
    rec.meta.id = to_int(rm, 0, c_id);
    rec.meta.frame_rate = to_double(rm, 0, c_fr);
    if (!(rec.meta.frame_rate > 0)) throw DataError(rm.file + ": frameRate must be positive");
    rec.meta.upper_markings = parse_markings(rm.rows[0][c_up], rm.file);
    rec.meta.lower_markings = parse_markings(rm.rows[0][c_lo], rm.file);
    if (rec.meta.upper_markings.size() < 2 && rec.meta.lower_markings.size() < 2) {
      throw DataError(rm.file + ": no lane markings");
    }
  }

  CsvTable tm = read_csv(paths.tracks_meta);
  std::unordered_map<int, int> direction;
  {
    const auto c_id = tm.require("id"), c_dir = tm.require("drivingDirection");
    for (std::size_t r = 0; r < tm.rows.size(); ++r) {
      int d = to_int(tm, r, c_dir);
      if (d != 1 && d != 2) throw DataError(tm.file + ": vehicle " + tm.rows[r][c_id] + " has drivingDirection " + std::to_string(d));
      direction[to_int(tm, r, c_id)] = d;
    }
  }

  CsvTable tr = read_csv(paths.tracks);
  const auto c_frame = tr.require("frame"), c_id = tr.require("id"), c_x = tr.require("x"), c_y = tr.require("y");
  const auto c_w = tr.require("width"), c_h = tr.require("height");
  const auto c_vx = tr.require("xVelocity"), c_vy = tr.require("yVelocity"), c_lane = tr.require("laneId");
  for (std::size_t r = 0; r < tr.rows.size(); ++r) {
    TrackSample s;
    s.frame = to_int(tr, r, c_frame);
    s.vehicle_id = to_int(tr, r, c_id);
    s.x = to_double(tr, r, c_x);
    s.y = to_double(tr, r, c_y);
    s.width = to_double(tr, r, c_w);
    s.height = to_double(tr, r, c_h);
    s.x_velocity = to_double(tr, r, c_vx);
    s.y_velocity = to_double(tr, r, c_vy);
    s.lane_id = to_int(tr, r, c_lane);

    auto dir = direction.find(s.vehicle_id);
    if (dir == direction.end()) {
      throw DataError(tr.file + ": vehicle " + std::to_string(s.vehicle_id) + " missing from tracks meta");
    }
    if (lane_index_of_id(rec.meta, dir->second, s.lane_id) < 0) {
      throw DataError(tr.file + ": vehicle " + std::to_string(s.vehicle_id) + " frame " + std::to_string(s.frame) +
                      " has lane id " + std::to_string(s.lane_id) + " outside its direction's lanes");
    }
    auto [it, inserted] = rec.tracks.try_emplace(s.vehicle_id);
    Track& t = it->second;
    if (inserted) {
      t.id = s.vehicle_id;
      t.driving_direction = dir->second;
    } else {
      const int last = t.last_frame();
      if (s.frame == last) {
        throw DataError(tr.file + ": vehicle " + std::to_string(s.vehicle_id) + " has duplicated frame " +
                        std::to_string(s.frame));
      }
      if (s.frame < last) {
        throw DataError(tr.file + ": vehicle " + std::to_string(s.vehicle_id) + " has non-monotonic frames (" +
                        std::to_string(s.frame) + " after " + std::to_string(last) + ")");
      }
      if (s.frame != last + 1) {
        throw DataError(tr.file + ": vehicle " + std::to_string(s.vehicle_id) + " has non-contiguous frames (" +
                        std::to_string(last) + " -> " + std::to_string(s.frame) + ")");
      }
    }
    t.samples.push_back(s);
  }
  return rec;
}

std::vector<RecordingPaths> discover(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw SchemaError("not a directory: " + dir.string());
  const std::string suffix = "_tracks.csv";
  std::vector<std::string> prefixes;
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (name.size() > suffix.size() && name.ends_with(suffix)) prefixes.push_back(name.substr(0, name.size() - suffix.size()));
  }
  std::sort(prefixes.begin(), prefixes.end());
  std::vector<RecordingPaths> out;
  for (const auto& p : prefixes) {
    RecordingPaths rp{dir / (p + "_tracks.csv"), dir / (p + "_tracksMeta.csv"), dir / (p + "_recordingMeta.csv")};
    for (const auto& f : {rp.tracks_meta, rp.recording_meta}) {
      if (!fs::exists(f)) throw SchemaError("missing companion file " + f.string());
    }
    out.push_back(std::move(rp));
  }
  return out;
}

// ---- coordinates --------------------------------------------------------------
//
// Worked example (direction 2, travelling toward +x): a car with x = 100,
// y = 21.0, width 5, height 2 has its center at (102.5, 22.0) in the image
// frame. With lower markings 20/24/28 the normalized frame puts y_left = -y, so
// the center maps to (102.5, -22.0) and the road spans [-28, -20]: lane 0 is
// [-28, -24] (bottom of the image), lane 1 is [-24, -20]; the car is in lane 1,
// the driver's left lane. Direction 1 negates x instead and keeps y.

RoadTopology road_for(const RecordingMeta& meta, int driving_direction) {
  const auto& m = driving_direction == 1 ? meta.upper_markings : meta.lower_markings;
  if (m.size() < 2) throw DataError("recording " + std::to_string(meta.id) + " has no lanes for direction " +
                                    std::to_string(driving_direction));
  const int lanes = static_cast<int>(m.size()) - 1;
  const double width = (m.back() - m.front()) / lanes;
  const double y_min = driving_direction == 1 ? m.front() : -m.back();
  return RoadTopology::uniform(lanes, width, y_min);
}

VehicleState normalize(const TrackSample& s, int driving_direction, const RoadTopology& road) {
  VehicleState v;
  v.id = s.vehicle_id;
  v.length = s.width;
  v.width = s.height;
  const double xc = s.x + s.width / 2.0;
  const double yc = s.y + s.height / 2.0;
  if (driving_direction == 1) {
    v.x = -xc;
    v.y = yc;
    v.vx = -s.x_velocity;
    v.vy = s.y_velocity;
  } else {
    v.x = xc;
    v.y = -yc;
    v.vx = s.x_velocity;
    v.vy = -s.y_velocity;
  }
  v.lane_index = road.lane_of(v.y);
  return v;
}

std::string_view direction_name(LaneChangeDirection d) { return d == LaneChangeDirection::Left ? "left" : "right"; }

// ---- mining -------------------------------------------------------------------

std::vector<LaneChangeEvent> find_lane_changes(const Recording& rec) {
  std::vector<LaneChangeEvent> events;
  for (const auto& [id, track] : rec.tracks) {
    const RoadTopology road = road_for(rec.meta, track.driving_direction);
    for (std::size_t i = 1; i < track.samples.size(); ++i) {
      const TrackSample& prev = track.samples[i - 1];
      const TrackSample& cur = track.samples[i];
      if (cur.lane_id == prev.lane_id) continue;
      LaneChangeEvent e;
      e.recording_id = rec.meta.id;
      e.ego_id = id;
      e.crossing_frame = cur.frame;
      e.from_lane_id = prev.lane_id;
      e.target_lane_id = cur.lane_id;
      const int from = lane_index_of_id(rec.meta, track.driving_direction, prev.lane_id);
      const int to = lane_index_of_id(rec.meta, track.driving_direction, cur.lane_id);
      e.direction = to > from ? LaneChangeDirection::Left : LaneChangeDirection::Right;

      const VehicleState ego = normalize(cur, track.driving_direction, road);
      double best = -std::numeric_limits<double>::infinity();
      for (const auto& [oid, other] : rec.tracks) {
        if (oid == id || other.driving_direction != track.driving_direction) continue;
        const TrackSample* s = other.at(cur.frame);
        if (!s || s->lane_id != cur.lane_id) continue;
        const VehicleState o = normalize(*s, other.driving_direction, road);
        if (o.x < ego.x && o.x > best) {
          best = o.x;
          e.rear_vehicle_id = oid;
        }
      }
      events.push_back(e);
    }
  }
  return events;
}

LaneChangeEvent label_high_risk(LaneChangeEvent event, const Recording& rec, double window_s) {
  event.labeled = false;
  event.high_risk = false;
  event.min_rear_ttc = kInfiniteTtc;
  event.min_pre_overlap_ttc = kInfiniteTtc;
  event.min_ttc_frame = -1;
  event.truncated = false;
  if (!event.rear_vehicle_id) return event;
  const Track& ego = rec.tracks.at(event.ego_id);
  const Track& fol = rec.tracks.at(*event.rear_vehicle_id);
  const RoadTopology road = road_for(rec.meta, ego.driving_direction);
  const int last = event.crossing_frame + static_cast<int>(std::lround(window_s * rec.meta.frame_rate));
  for (int f = event.crossing_frame; f <= last; ++f) {
    const TrackSample* se = ego.at(f);
    const TrackSample* sf = fol.at(f);
    if (!se || !sf) {
      event.truncated = true;
      break;
    }
    const VehicleState e = normalize(*se, ego.driving_direction, road);
    const VehicleState o = normalize(*sf, fol.driving_direction, road);
    const double t = ttc(o, e);
    const bool overlapping = std::abs(e.y - o.y) < (e.width + o.width) / 2.0;
    if (overlapping) {
      if (t < event.min_rear_ttc) {
        event.min_rear_ttc = t;
        event.min_ttc_frame = f;
      }
    } else {
      event.min_pre_overlap_ttc = std::min(event.min_pre_overlap_ttc, t);
    }
  }
  event.labeled = true;
  event.high_risk = event.min_rear_ttc < kHighRiskTtc;
  return event;
}

// ---- context --------------------------------------------------------------------

InterventionContext build_intervention_context(const LaneChangeEvent& event, const Recording& rec,
                                               const EncoderParams& params) {
  InterventionContext out;
  const Track& ego_track = rec.tracks.at(event.ego_id);
  const int dir = ego_track.driving_direction;
  const RoadTopology road = road_for(rec.meta, dir);

  out.frame = event.crossing_frame - 1;
  const TrackSample* se = ego_track.at(out.frame);
  if (!se) {
    out.partial = true;
    out.notes.push_back("ego track starts at the crossing frame; context taken at the crossing frame");
    out.frame = event.crossing_frame;
    se = ego_track.at(out.frame);
  }

  Scene scene;
  scene.road = road;
  scene.timestamp = out.frame / rec.meta.frame_rate;
  scene.ego = normalize(*se, dir, road);
  // The recorded lane id is authoritative for the ego's pre-maneuver lane.
  const int from_index = lane_index_of_id(rec.meta, dir, event.from_lane_id);
  if (from_index >= 0 && std::abs(scene.ego.y - road.lane_center(from_index)) < road.lane_width / 2.0) {
    scene.ego.lane_index = from_index;
  }

  out.corridor_min_x = std::numeric_limits<double>::infinity();
  out.corridor_max_x = -std::numeric_limits<double>::infinity();
  int dropped = 0;
  for (const auto& [id, track] : rec.tracks) {
    if (track.driving_direction != dir) continue;
    for (const auto& s : track.samples) {
      const double x = dir == 1 ? -(s.x + s.width / 2.0) : s.x + s.width / 2.0;
      out.corridor_min_x = std::min(out.corridor_min_x, x);
      out.corridor_max_x = std::max(out.corridor_max_x, x);
    }
    if (id == event.ego_id) continue;
    const TrackSample* s = track.at(out.frame);
    if (!s) continue;
    VehicleState v = normalize(*s, dir, road);
    if (row_of(v.x - scene.ego.x) < 0) continue;
    if (v.y < road.drivable_y_min || v.y >= road.drivable_y_max) {
      ++dropped;
      continue;
    }
    scene.others.push_back(v);
  }
  if (dropped > 0) {
    out.partial = true;
    out.notes.push_back(std::to_string(dropped) + " vehicle(s) in the grid span lie outside the marked lanes");
  }
  if (scene.others.empty()) out.notes.push_back("no surrounding vehicles within the grid span");
  out.ctx = make_context(scene, params);
  return out;
}

// ---- rollouts ---------------------------------------------------------------------

std::string_view verdict_name(Verdict v) {
  switch (v) {
    case Verdict::RespondLowerRisk:
      return "respond_lower_risk";
    case Verdict::HumanLowerRisk:
      return "human_lower_risk";
    default:
      return "comparable";
  }
}

Verdict verdict_for(double delta_risk, double dead_band) {
  if (delta_risk > dead_band) return Verdict::RespondLowerRisk;
  if (delta_risk < -dead_band) return Verdict::HumanLowerRisk;
  return Verdict::Comparable;
}

RolloutResult rollout(const Scene& start, Action action, const RolloutParams& params, double corridor_min_x,
                      double corridor_max_x) {
  RolloutResult out;
  const RoadTopology& road = start.road;
  const VehicleState& e0 = start.ego;
  const double accel = action == Action::Faster ? params.speed_step : action == Action::Slower ? -params.speed_step : 0.0;
  double target_y = e0.y;
  if (action == Action::LaneLeft && e0.lane_index + 1 < road.lane_count) target_y = road.lane_center(e0.lane_index + 1);
  if (action == Action::LaneRight && e0.lane_index > 0) target_y = road.lane_center(e0.lane_index - 1);

  const int steps = static_cast<int>(std::lround(params.horizon_s / params.dt));
  for (int k = 1; k <= steps; ++k) {
    const double t = k * params.dt;
    Scene s;
    s.road = road;
    s.timestamp = start.timestamp + t;
    VehicleState e = e0;
    const double ramp = std::min(t, 1.0);
    e.vx = std::max(0.0, e0.vx + accel * ramp);
    e.x = e0.x + e0.vx * t + accel * (ramp * ramp / 2.0 + std::max(t - 1.0, 0.0));
    const double frac = std::min(t / params.lane_change_s, 1.0);
    e.y = e0.y + (target_y - e0.y) * frac;
    e.vy = t < params.lane_change_s ? (target_y - e0.y) / params.lane_change_s : 0.0;
    e.lane_index = road.lane_of(e.y);
    s.ego = e;
    if (e.x < corridor_min_x || e.x > corridor_max_x) out.left_corridor = true;
    for (const auto& o0 : start.others) {
      VehicleState o = o0;
      o.x += o0.vx * t;
      o.y += o0.vy * t;
      if (o.y < road.drivable_y_min || o.y >= road.drivable_y_max) continue;
      o.lane_index = road.lane_of(o.y);
      s.others.push_back(o);
    }
    out.cumulative_risk += risk_level(directional_risks(s, params.footprint)) * params.dt;
  }
  return out;
}

InterventionReport evaluate_intervention(const LaneChangeEvent& event, const InterventionContext& ictx,
                                         MemoryStore& memory, CompletionBackend& llm, const RolloutParams& params,
                                         const DecisionConfig& config) {
  InterventionReport r;
  r.event = event;
  r.partial = ictx.partial;
  r.notes = ictx.notes;
  r.human_action = event.direction == LaneChangeDirection::Left ? Action::LaneLeft : Action::LaneRight;
  const Decision d = decide(ictx.ctx, memory, llm, config);
  r.respond_action = d.action;
  r.respond_source = d.source;
  r.risks_at_decision = ictx.ctx.risks;
  r.pattern_at_decision = ictx.ctx.pattern;

  const Scene& start = ictx.ctx.scene;
  const RolloutResult human = rollout(start, r.human_action, params, ictx.corridor_min_x, ictx.corridor_max_x);
  const RolloutResult respond = rollout(start, r.respond_action, params, ictx.corridor_min_x, ictx.corridor_max_x);
  r.human_risk = human.cumulative_risk;
  r.respond_risk = respond.cumulative_risk;
  r.delta_risk = r.human_risk - r.respond_risk;
  r.verdict = verdict_for(r.delta_risk, params.dead_band);
  if (human.left_corridor || respond.left_corridor) {
    r.excluded = true;
    r.notes.push_back("rollout left the observed corridor");
  }
  return r;
}

// ---- outputs ----------------------------------------------------------------------

namespace {

json ttc_json(double t) { return std::isfinite(t) ? json(t) : json(nullptr); }

std::string fmt(double v) {
  if (!std::isfinite(v)) return "inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

json event_json(const LaneChangeEvent& e) {
  return {{"recording_id", e.recording_id},
          {"ego_id", e.ego_id},
          {"crossing_frame", e.crossing_frame},
          {"direction", direction_name(e.direction)},
          {"from_lane_id", e.from_lane_id},
          {"target_lane_id", e.target_lane_id},
          {"rear_vehicle_id", e.rear_vehicle_id ? json(*e.rear_vehicle_id) : json(nullptr)},
          {"labeled", e.labeled},
          {"min_rear_ttc", ttc_json(e.min_rear_ttc)},
          {"min_ttc_frame", e.min_ttc_frame},
          {"high_risk", e.high_risk},
          {"min_pre_overlap_ttc", ttc_json(e.min_pre_overlap_ttc)},
          {"truncated", e.truncated}};
}

}  // namespace

std::string events_csv(const std::vector<LaneChangeEvent>& events) {
  std::string out =
      "recording_id,ego_id,crossing_frame,direction,from_lane_id,target_lane_id,rear_vehicle_id,min_rear_ttc,"
      "min_ttc_frame,high_risk,min_pre_overlap_ttc,truncated\n";
  for (const auto& e : events) {
    out += std::to_string(e.recording_id) + ',' + std::to_string(e.ego_id) + ',' + std::to_string(e.crossing_frame) +
           ',' + std::string(direction_name(e.direction)) + ',' + std::to_string(e.from_lane_id) + ',' +
           std::to_string(e.target_lane_id) + ',' + (e.rear_vehicle_id ? std::to_string(*e.rear_vehicle_id) : "") +
           ',' + fmt(e.min_rear_ttc) + ',' + std::to_string(e.min_ttc_frame) + ',' + (e.high_risk ? "1" : "0") + ',' +
           fmt(e.min_pre_overlap_ttc) + ',' + (e.truncated ? "1" : "0") + '\n';
  }
  return out;
}

json report_json(const InterventionReport& r) {
  const DirectionalRisks& k = r.risks_at_decision;
  return {{"event", event_json(r.event)},
          {"human_action", to_token(r.human_action)},
          {"respond_action", to_token(r.respond_action)},
          {"respond_source", source_name(r.respond_source)},
          {"risks_at_decision", k},
          {"aggregates",
           {{"front", k.front}, {"rear", k.rear}, {"left", k.left_max()}, {"right", k.right_max()}}},
          {"pattern_at_decision", pattern_to_json(r.pattern_at_decision)},
          {"human_risk", r.human_risk},
          {"respond_risk", r.respond_risk},
          {"delta_risk", r.delta_risk},
          {"verdict", verdict_name(r.verdict)},
          {"excluded", r.excluded},
          {"partial", r.partial},
          {"notes", r.notes}};
}

json summary_json(const std::vector<InterventionReport>& reports) {
  int counted = 0, excluded = 0, respond = 0, comparable = 0, human = 0;
  double delta_sum = 0.0;
  for (const auto& r : reports) {
    if (r.excluded) {
      ++excluded;
      continue;
    }
    ++counted;
    delta_sum += r.delta_risk;
    switch (r.verdict) {
      case Verdict::RespondLowerRisk:
        ++respond;
        break;
      case Verdict::HumanLowerRisk:
        ++human;
        break;
      default:
        ++comparable;
    }
  }
  return {{"reports", reports.size()},
          {"evaluated", counted},
          {"excluded", excluded},
          {"verdicts", {{"respond_lower_risk", respond}, {"comparable", comparable}, {"human_lower_risk", human}}},
          {"respond_lower_risk_share", counted ? static_cast<double>(respond) / counted : 0.0},
          {"mean_delta_risk", counted ? delta_sum / counted : 0.0}};
}

std::vector<LaneChangeEvent> mine_directory(const fs::path& dir, double window_s) {
  const auto paths = discover(dir);
  std::vector<std::future<std::vector<LaneChangeEvent>>> jobs;
  for (const auto& p : paths) {
    jobs.push_back(std::async(std::launch::async, [p, window_s] {
      const Recording rec = parse_recording(p);
      auto events = find_lane_changes(rec);
      for (auto& e : events) e = label_high_risk(e, rec, window_s);
      return events;
    }));
  }
  std::vector<LaneChangeEvent> all;
  for (auto& j : jobs) {
    auto part = j.get();
    all.insert(all.end(), part.begin(), part.end());
  }
  std::stable_sort(all.begin(), all.end(), [](const LaneChangeEvent& a, const LaneChangeEvent& b) {
    return std::tie(a.recording_id, a.ego_id, a.crossing_frame) < std::tie(b.recording_id, b.ego_id, b.crossing_frame);
  });
  return all;
}

// ---- fixtures ---------------------------------------------------------------------

namespace {

struct Row {
  int frame;
  int id;
  double x, y, w, h, vx, vy;
  int lane;
};

struct FixtureWriter {
  const FixtureSpec& spec;
  RecordingMeta meta;
  std::vector<double> markings;

  explicit FixtureWriter(const FixtureSpec& s) : spec(s) {
    const double lw = s.lane_width;
    for (int i = 0; i <= s.lanes_per_direction; ++i) meta.upper_markings.push_back(2.0 + i * lw);
    const double lower0 = meta.upper_markings.back() + 2.0;  // median strip
    for (int i = 0; i <= s.lanes_per_direction; ++i) meta.lower_markings.push_back(lower0 + i * lw);
    meta.frame_rate = s.frame_rate;
    markings = all_markings(meta);
  }

  /// Normalized state -> dataset row.
  Row row(int frame, int id, int dir, double xn, double yn, double vx, double vy) const {
    const double L = spec.vehicle_length, W = spec.vehicle_width;
    Row r{frame, id, 0, 0, L, W, 0, 0, 0};
    const double xc = dir == 1 ? -xn : xn;
    const double yc = dir == 1 ? yn : -yn;
    r.x = xc - L / 2.0;
    r.y = yc - W / 2.0;
    r.vx = dir == 1 ? -vx : vx;
    r.vy = dir == 1 ? vy : -vy;
    r.lane = lane_id_at(markings, yc);
    return r;
  }
};

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw DataError("cannot write " + p.string());
  out << s;
}

std::string markings_text(const std::vector<double>& m) {
  std::string s;
  for (std::size_t i = 0; i < m.size(); ++i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", m[i]);
    s += (i ? ";" : "") + std::string(buf);
  }
  return s;
}

/// Frames after start_frame until the lateral offset first exceeds half a lane.
int frames_to_cross(const PlantedLaneChange& p, const FixtureSpec& spec) {
  const double per_frame = p.lateral_speed / spec.frame_rate;
  return static_cast<int>(std::floor(spec.lane_width / 2.0 / per_frame)) + 1;
}

}  // namespace

std::vector<PlantedExpectation> write_fixture(const fs::path& dir, const FixtureSpec& spec) {
  fs::create_directories(dir);
  std::vector<PlantedExpectation> expectations;
  FixtureWriter w(spec);
  const double fr = spec.frame_rate;
  const double L = spec.vehicle_length;

  for (std::size_t n = 0; n < spec.events.size(); ++n) {
    const PlantedLaneChange& p = spec.events[n];
    const int rec_id = static_cast<int>(n) + 1;
    const int d = p.driving_direction;
    const RoadTopology road = road_for(w.meta, d);
    const int sign = p.direction == LaneChangeDirection::Left ? 1 : -1;
    const int changes = p.double_change ? 2 : 1;
    const int to_lane = p.from_lane + sign;
    const int last_lane = p.from_lane + sign * changes;
    if (p.from_lane < 0 || p.from_lane >= road.lane_count || last_lane < 0 || last_lane >= road.lane_count) {
      throw DataError("planted lane change " + std::to_string(n) + " leaves the road");
    }
    const double per_frame = p.lateral_speed / fr;
    const int cross = frames_to_cross(p, spec);
    const int full = static_cast<int>(std::ceil(spec.lane_width / per_frame));
    const int c1 = p.start_frame + cross;
    const int start2 = p.start_frame + full + static_cast<int>(fr);  // one second in the new lane
    const int c2 = start2 + cross;
    const int total = (p.double_change ? c2 : c1) + p.tail_frames + 1;

    // Ego x is an integer at the first crossing so gap arithmetic stays exact.
    const double x_cross = d == 1 ? -1000.0 : 200.0;
    auto ego_y = [&](int f) {
      double off = 0.0;
      if (f > p.start_frame) off = std::min((f - p.start_frame) * per_frame, spec.lane_width);
      if (p.double_change && f > start2) off += std::min((f - start2) * per_frame, spec.lane_width);
      return road.lane_center(p.from_lane) + sign * off;
    };
    auto ego_vy = [&](int f) {
      const bool first = f > p.start_frame && f <= p.start_frame + full;
      const bool second = p.double_change && f > start2 && f <= start2 + full;
      return first || second ? sign * p.lateral_speed : 0.0;
    };

    std::vector<Row> rows;
    std::string meta_csv = "id,width,height,initialFrame,finalFrame,numFrames,class,drivingDirection\n";
    auto add_meta = [&](int id, int first, int last) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "%d,%.3f,%.3f,%d,%d,%d,Car,%d\n", id, L, spec.vehicle_width, first, last,
                    last - first + 1, d);
      meta_csv += buf;
    };

    for (int f = 0; f < total; ++f) {
      rows.push_back(w.row(f, 1, d, x_cross + p.ego_speed * (f - c1) / fr, ego_y(f), p.ego_speed, ego_vy(f)));
    }
    add_meta(1, 0, total - 1);

    PlantedExpectation ex;
    ex.recording_id = rec_id;
    ex.ego_id = 1;
    ex.crossing_frame = c1;
    ex.direction = p.direction;
    int next_id = 2;
    if (p.with_follower) {
      const int fid = next_id++;
      const double xf = x_cross - p.gap_at_crossing - L;
      const double vf = p.ego_speed + p.closing_speed;
      for (int f = 0; f < total; ++f) {
        const double x = f <= c1 ? xf - vf * (c1 - f) / fr : xf + p.ego_speed * (f - c1) / fr;
        rows.push_back(w.row(f, fid, d, x, road.lane_center(to_lane), f <= c1 ? vf : p.ego_speed, 0.0));
      }
      add_meta(fid, 0, total - 1);
      ex.follower_id = fid;
      ex.min_rear_ttc = p.closing_speed > 0 ? p.gap_at_crossing / p.closing_speed : kInfiniteTtc;
      ex.high_risk = ex.min_rear_ttc < kHighRiskTtc;
    }
    // Lane keepers well ahead of the grid span; never followers.
    for (int k = 0; k < spec.lane_keepers; ++k) {
      const int id = next_id++;
      const int lane = k % road.lane_count;
      const double x0 = x_cross + 150.0 + 40.0 * k;
      for (int f = 0; f < total; ++f) {
        rows.push_back(w.row(f, id, d, x0 + p.ego_speed * (f - c1) / fr, road.lane_center(lane), p.ego_speed, 0.0));
      }
      add_meta(id, 0, total - 1);
    }
    expectations.push_back(ex);
    if (p.double_change) {
      PlantedExpectation ex2;
      ex2.recording_id = rec_id;
      ex2.ego_id = 1;
      ex2.crossing_frame = c2;
      ex2.direction = p.direction;
      expectations.push_back(ex2);
    }

    std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return std::tie(a.id, a.frame) < std::tie(b.id, b.frame); });
    std::string tracks = "frame,id,x,y,width,height,xVelocity,yVelocity,xAcceleration,yAcceleration,laneId\n";
    for (const auto& r : rows) {
      char buf[256];
      std::snprintf(buf, sizeof buf, "%d,%d,%.3f,%.3f,%.3f,%.3f,%.3f,%.3f,0.000,0.000,%d\n", r.frame, r.id, r.x, r.y,
                    r.w, r.h, r.vx, r.vy, r.lane);
      tracks += buf;
    }
    char prefix[16];
    std::snprintf(prefix, sizeof prefix, "%02d", rec_id);
    write_text(dir / (std::string(prefix) + "_tracks.csv"), tracks);
    write_text(dir / (std::string(prefix) + "_tracksMeta.csv"), meta_csv);
    char rm[512];
    std::snprintf(rm, sizeof rm, "id,frameRate,locationId,speedLimit,upperLaneMarkings,lowerLaneMarkings\n%d,%.2f,1,-1,%s,%s\n",
                  rec_id, fr, markings_text(w.meta.upper_markings).c_str(), markings_text(w.meta.lower_markings).c_str());
    write_text(dir / (std::string(prefix) + "_recordingMeta.csv"), rm);
  }
  return expectations;
}

FixtureSpec default_fixture_spec(std::uint64_t seed) {
  FixtureSpec spec;
  std::mt19937_64 rng(seed);
  auto pick = [&rng](auto const& options) { return options[std::uniform_int_distribution<std::size_t>(0, options.size() - 1)(rng)]; };
  auto dir_of = [&rng] { return std::bernoulli_distribution(0.5)(rng) ? LaneChangeDirection::Left : LaneChangeDirection::Right; };

  PlantedLaneChange boundary;  // 20 m at 5 m/s: exactly 4.0 s, not high risk
  boundary.start_frame = 25;
  PlantedLaneChange risky = boundary;  // 15 m at 5 m/s: 3.0 s
  risky.gap_at_crossing = 15.0;
  risky.driving_direction = 1;
  PlantedLaneChange opening = boundary;  // follower slower than the ego
  opening.closing_speed = -2.0;
  opening.direction = LaneChangeDirection::Right;
  PlantedLaneChange alone = boundary;
  alone.with_follower = false;
  alone.driving_direction = 1;
  PlantedLaneChange twice = boundary;
  twice.from_lane = 0;
  twice.double_change = true;
  twice.gap_at_crossing = 25.0;
  twice.closing_speed = 4.0;
  spec.events = {boundary, risky, opening, alone, twice};

  const std::array<double, 3> speeds = {20.0, 25.0, 30.0};
  const std::array<double, 2> lateral = {3.0, 3.5};
  const std::array<double, 9> gaps = {8.0, 10.0, 12.5, 15.0, 17.5, 20.0, 25.0, 30.0, 35.0};
  const std::array<double, 6> closing = {1.0, 2.0, 4.0, 5.0, 8.0, 10.0};
  while (spec.events.size() < 10) {
    PlantedLaneChange p;
    p.driving_direction = std::bernoulli_distribution(0.5)(rng) ? 1 : 2;
    p.direction = dir_of();
    p.from_lane = p.direction == LaneChangeDirection::Left ? std::uniform_int_distribution<int>(0, 1)(rng)
                                                           : std::uniform_int_distribution<int>(1, 2)(rng);
    p.ego_speed = pick(speeds);
    p.lateral_speed = pick(lateral);
    p.gap_at_crossing = pick(gaps);
    p.closing_speed = pick(closing);
    p.start_frame = std::uniform_int_distribution<int>(15, 40)(rng);
    spec.events.push_back(p);
  }
  return spec;
}

json expectations_json(const std::vector<PlantedExpectation>& ex) {
  json arr = json::array();
  for (const auto& e : ex) {
    arr.push_back({{"recording_id", e.recording_id},
                   {"ego_id", e.ego_id},
                   {"crossing_frame", e.crossing_frame},
                   {"direction", direction_name(e.direction)},
                   {"follower_id", e.follower_id ? json(*e.follower_id) : json(nullptr)},
                   {"min_rear_ttc", ttc_json(e.min_rear_ttc)},
                   {"high_risk", e.high_risk}});
  }
  return arr;
}

}  // namespace respond::highd
