#include "respond/reflection.hpp"

#include <nlohmann/json.hpp>

#include "respond/json_io.hpp"

namespace respond {

using nlohmann::json;

std::string_view failure_mode_name(FailureMode m) {
  return m == FailureMode::LateralDirect ? "LateralDirect" : "LLMCausal";
}

FailureMode classify_failure(const CrashRecord& crash) {
  if (!is_lane_change(crash.executed_action)) return FailureMode::LLMCausal;
  const VehicleState& ego = crash.pre_frame.scene.ego;
  const VehicleState* collider = &crash.collider;
  for (const auto& o : crash.pre_frame.scene.others) {
    if (o.id == crash.collider.id) {
      collider = &o;
      break;
    }
  }
  const int target_side = crash.executed_action == Action::LaneLeft ? 1 : -1;
  const bool in_column = collider->lane_index - ego.lane_index == target_side && row_of(collider->x - ego.x) >= 0;
  return in_column ? FailureMode::LateralDirect : FailureMode::LLMCausal;
}

ReflectionOutcome reflect_lateral(const CrashRecord& crash, MemoryStore& memory) {
  if (classify_failure(crash) != FailureMode::LateralDirect) {
    throw ContractError("reflect_lateral requires a lateral lane-change crash");
  }
  const Frame& pre = crash.pre_frame;
  ReflectionOutcome out;
  out.mode = FailureMode::LateralDirect;
  const SubPatternKind kind = crash.executed_action == Action::LaneLeft ? SubPatternKind::Left : SubPatternKind::Right;
  out.cause = std::string("lane change ") + std::string(to_token(crash.executed_action)) + " into vehicle " +
              std::to_string(crash.collider.id) + " occupying the " + std::string(kind_name(kind)) + " column";

  out.l2_written = memory.insert_l2(
      make_constraint(kind, slice_of(pre.pattern, kind), crash.executed_action, 1.0, Provenance::Reflection));

  const bool blocked_ahead = pre.pattern.at(3, kEgoCol) >= 1 || pre.pattern.at(4, kEgoCol) >= 1;
  out.revised_action = blocked_ahead ? Action::Slower : Action::Idle;
  out.l1_written = memory.insert_l1(pre.vector, out.revised_action, 1.0, Provenance::Reflection);
  out.mirrored = out.l2_written.size() >= 2;
  return out;
}

namespace {

enum class ActionClass { KeepLane, ChangeLane };

ActionClass action_class(Action a) { return is_lane_change(a) ? ActionClass::ChangeLane : ActionClass::KeepLane; }

}  // namespace

std::vector<EntryId> strategic_abstraction(const CrashRecord& crash, Action revised_action, MemoryStore& memory) {
  std::vector<EntryId> ids;
  if (action_class(crash.executed_action) == action_class(revised_action)) return ids;
  const Frame& pre = crash.pre_frame;
  const Intent intent = is_lane_change(revised_action) ? Intent::ChangeLane : Intent::Decelerate;
  for (auto [kind, rv] : {std::pair{SubPatternKind::Front, pre.risks.front}, std::pair{SubPatternKind::Rear, pre.risks.rear}}) {
    if (rv < 0.75) continue;
    auto written = memory.insert_l2(
        make_strategy(kind, slice_of(pre.pattern, kind), intent, revised_action, 1.0, Provenance::Reflection));
    ids.insert(ids.end(), written.begin(), written.end());
  }
  return ids;
}

ReflectionOutcome reflect_llm(const CrashRecord& crash, CompletionBackend& llm, MemoryStore& memory) {
  ReflectionOutcome out;
  out.mode = FailureMode::LLMCausal;
  const PromptBundle bundle = build_reflection_prompt(crash);
  std::string failure;
  try {
    ParsedReflection parsed = parse_reflection(llm.complete(bundle));
    if (parsed.revised) {
      out.revised_action = *parsed.revised;
      out.cause = parsed.cause;
    } else {
      failure = parsed.error;
    }
  } catch (const BackendError& e) {
    failure = e.what();
  }
  if (!failure.empty()) {
    out.fallback = true;
    out.revised_action = Action::Slower;
    out.cause = "rule correction (reflection unavailable: " + failure + ")";
    out.warnings.push_back("reflection reply unusable: " + failure);
  }
  if (out.revised_action == crash.executed_action) {
    out.warnings.push_back("revised action reaffirms the executed action " +
                           std::string(to_token(crash.executed_action)));
  }
  out.l1_written = memory.insert_l1(crash.pre_frame.vector, out.revised_action, 1.0, Provenance::Reflection);
  if (out.l1_written.empty() && is_lane_change(out.revised_action) &&
      mirror_vector(crash.pre_frame.vector) == crash.pre_frame.vector) {
    out.warnings.push_back("symmetric pattern cannot hold a lane preference; the lane change is kept as a strategy only");
  }
  out.mirrored = out.l1_written.size() >= 2;
  out.l2_written = strategic_abstraction(crash, out.revised_action, memory);
  return out;
}

ReflectionOutcome reflect(const CrashRecord& crash, CompletionBackend& llm, MemoryStore& memory) {
  if (classify_failure(crash) == FailureMode::LateralDirect) return reflect_lateral(crash, memory);
  return reflect_llm(crash, llm, memory);
}

std::string audit_json(const CrashRecord& crash, const ReflectionOutcome& outcome) {
  json j{{"episode_id", crash.episode_id},
         {"step", crash.step_index},
         {"pre_pattern", render_inline(crash.pre_frame.pattern)},
         {"post_pattern", render_inline(crash.post_frame.pattern)},
         {"pre_risks", crash.pre_frame.risks},
         {"executed_action", to_token(crash.executed_action)},
         {"collider_id", crash.collider.id},
         {"mode", failure_mode_name(outcome.mode)},
         {"cause", outcome.cause},
         {"revised_action", to_token(outcome.revised_action)},
         {"l1_written", outcome.l1_written},
         {"l2_written", outcome.l2_written},
         {"mirrored", outcome.mirrored},
         {"fallback", outcome.fallback},
         {"warnings", outcome.warnings}};
  return j.dump();
}

std::string crash_to_json(const CrashRecord& crash) {
  json j{{"episode_id", crash.episode_id},  {"step_index", crash.step_index},
         {"pre_frame", crash.pre_frame},    {"post_frame", crash.post_frame},
         {"executed_action", to_token(crash.executed_action)}, {"collider", crash.collider}};
  return j.dump();
}

CrashRecord crash_from_json(std::string_view text) {
  json j = json::parse(text);
  CrashRecord c;
  c.episode_id = j.at("episode_id").get<std::string>();
  c.step_index = j.at("step_index").get<int>();
  c.pre_frame = j.at("pre_frame").get<Frame>();
  c.post_frame = j.at("post_frame").get<Frame>();
  auto a = action_from_token(j.at("executed_action").get<std::string>());
  if (!a) throw ContractError("crash record has an unknown executed_action");
  c.executed_action = *a;
  c.collider = j.at("collider").get<VehicleState>();
  return c;
}

}  // namespace respond
