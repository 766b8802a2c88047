#include "respond/decision.hpp"

#include <algorithm>

namespace respond {

std::string_view regime_name(Regime r) { return r == Regime::HighRisk ? "HighRisk" : "LowRisk"; }

std::string_view source_name(DecisionSource s) {
  switch (s) {
    case DecisionSource::ExactReuse:
      return "ExactReuse";
    case DecisionSource::SubPatternConstrained:
      return "SubPatternConstrained";
    case DecisionSource::ZeroShotFallback:
      return "ZeroShotFallback";
    case DecisionSource::PersonalizedStyle:
      return "PersonalizedStyle";
    case DecisionSource::IdleReuse:
      return "IdleReuse";
    case DecisionSource::MaskedLLM:
      return "MaskedLLM";
    case DecisionSource::DefaultLLM:
      return "DefaultLLM";
    case DecisionSource::SafeFallback:
      return "SafeFallback";
  }
  return "SafeFallback";
}

std::optional<DecisionSource> source_from_name(std::string_view name) {
  for (auto s : kAllSources) {
    if (source_name(s) == name) return s;
  }
  return std::nullopt;
}

double risk_level(const DirectionalRisks& risks) { return std::max(risks.front, risks.rear); }

ActionSet feasible_actions(const Scene& scene) {
  ActionSet s = ActionSet::all();
  if (scene.road.is_leftmost(scene.ego.lane_index)) s.erase(Action::LaneLeft);
  if (scene.road.is_rightmost(scene.ego.lane_index)) s.erase(Action::LaneRight);
  return s;
}

ActionSet mask_lateral(ActionSet actions, const DirectionalRisks& risks, const RiskPattern& pattern,
                       const MemoryStore* memory, double tau_lat) {
  if (risks.left_max() > tau_lat) actions.erase(Action::LaneLeft);
  if (risks.right_max() > tau_lat) actions.erase(Action::LaneRight);
  if (memory) {
    for (const auto& sub : memory->match_l2(pattern, risks, std::nullopt)) {
      if (sub.kind == SubPatternKind::Left || sub.kind == SubPatternKind::Right) {
        if (is_lane_change(sub.target)) actions.erase(sub.target);
      }
    }
  }
  actions.insert(Action::Idle);
  actions.insert(Action::Slower);
  return actions;
}

namespace {

std::string digest(const std::string& raw) {
  std::string d = raw.substr(0, 160);
  std::replace(d.begin(), d.end(), '\n', ' ');
  return d;
}

std::optional<MemoryEntry> layer1_candidate(const DecisionContext& ctx, const MemoryStore& memory) {
  if (ctx.flags.disable_l1) return std::nullopt;
  if (ctx.flags.ann_l1) {
    auto nearest = memory.nearest_l1(ctx.vector);
    if (!nearest) return std::nullopt;
    return nearest->first;
  }
  return memory.lookup_exact(ctx.vector);
}

}  // namespace

Decision decide(const DecisionContext& ctx, MemoryStore& memory, CompletionBackend& llm,
                const DecisionConfig& config) {
  Decision d;
  d.risk_level = risk_level(ctx.risks);
  d.regime = d.risk_level >= config.tau ? Regime::HighRisk : Regime::LowRisk;

  const ActionSet feasible = feasible_actions(ctx.scene);
  const MemoryStore* l2 = ctx.flags.disable_l2 ? nullptr : &memory;
  const ActionSet masked = mask_lateral(feasible, ctx.risks, ctx.pattern, l2, config.tau_lat);
  const std::optional<MemoryEntry> entry = layer1_candidate(ctx, memory);
  const std::vector<SubPattern> matches =
      ctx.flags.disable_l2 ? std::vector<SubPattern>{} : memory.match_l2(ctx.pattern, ctx.risks, ctx.profile);

  auto safe_fallback = [&](const std::string& why) {
    d.source = DecisionSource::SafeFallback;
    d.action = d.regime == Regime::HighRisk ? Action::Slower : Action::Idle;
    d.rationale = "safe fallback: " + why;
  };

  auto ask = [&](ActionSet allowed, DecisionSource source, const PromptHints& hints) {
    d.allowed = allowed;
    d.source = source;
    const PromptBundle bundle = build_decision_prompt(ctx, allowed, !ctx.flags.disable_risk_values, hints);
    d.llm_calls = 1;
    std::string raw;
    try {
      raw = llm.complete(bundle);
    } catch (const BackendError& e) {
      safe_fallback(e.what());
      return;
    }
    ParsedAction parsed = parse_action(raw, allowed);
    if (!parsed) {
      safe_fallback(parsed.error + " (reply: " + digest(raw) + ")");
      return;
    }
    d.action = *parsed.action;
    d.rationale = bundle.version + " reply: " + digest(raw);
  };

  if (d.regime == Regime::HighRisk) {
    // H.1 exact reuse of a verified entry.
    if (entry && entry->confidence == 1.0 && masked.contains(entry->action)) {
      memory.record_l1_hit(entry->id);
      d.allowed = masked;
      d.action = entry->action;
      d.source = DecisionSource::ExactReuse;
      d.rationale = "layer-1 entry " + std::to_string(entry->id) + " (confidence 1)";
      d.memory_hits.push_back(entry->id);
      return d;
    }
    // H.2 strategic sub-pattern narrows the menu.
    auto strategy = std::find_if(matches.begin(), matches.end(), [](const SubPattern& s) {
      return s.kind == SubPatternKind::Front || s.kind == SubPatternKind::Rear;
    });
    if (strategy != matches.end()) {
      memory.record_l2_hit(strategy->id);
      d.memory_hits.push_back(strategy->id);
      ActionSet safe = masked & intent_actions(strategy->intent);
      if (safe.empty()) safe = ActionSet{Action::Slower};
      PromptHints hints;
      hints.intent = strategy->intent;
      hints.notes.push_back(std::string(kind_name(strategy->kind)) + " sub-pattern " + std::to_string(strategy->id) +
                            " matched");
      ask(safe, DecisionSource::SubPatternConstrained, hints);
      return d;
    }
    // H.3 zero-shot with risk values.
    ask(masked, DecisionSource::ZeroShotFallback, {});
    return d;
  }

  // L.1 personalized style.
  if (ctx.profile) {
    for (const auto& s : matches) {
      if (s.kind != SubPatternKind::Style || !masked.contains(s.style.preferred)) continue;
      memory.record_l2_hit(s.id);
      d.allowed = masked;
      d.action = s.style.preferred;
      d.source = DecisionSource::PersonalizedStyle;
      d.rationale = "style " + std::to_string(s.id) + " of profile '" + s.profile + "': " +
                    std::string(zone_name(s.style.direction)) + " < " + std::to_string(s.style.upper_bound);
      d.memory_hits.push_back(s.id);
      return d;
    }
  }
  // L.2 IDLE reuse.
  if (entry && entry->action == Action::Idle && entry->confidence >= config.idle_reuse_min_confidence &&
      masked.contains(Action::Idle)) {
    memory.record_l1_hit(entry->id);
    d.allowed = masked;
    d.action = Action::Idle;
    d.source = DecisionSource::IdleReuse;
    d.rationale = "layer-1 entry " + std::to_string(entry->id) + " suggests IDLE";
    d.memory_hits.push_back(entry->id);
    return d;
  }
  // L.3 / L.4 LLM over the (masked) menu.
  if (!(masked == feasible)) {
    ask(masked, DecisionSource::MaskedLLM, {});
  } else {
    ask(feasible, DecisionSource::DefaultLLM, {});
  }
  return d;
}

}  // namespace respond
