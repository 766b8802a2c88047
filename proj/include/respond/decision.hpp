#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "respond/context.hpp"
#include "respond/llm.hpp"
#include "respond/memory.hpp"

namespace respond {

enum class Regime : std::uint8_t { HighRisk, LowRisk };

/// Which branch of the hybrid pipeline produced a decision.
enum class DecisionSource : std::uint8_t {
  ExactReuse,
  SubPatternConstrained,
  ZeroShotFallback,
  PersonalizedStyle,
  IdleReuse,
  MaskedLLM,
  DefaultLLM,
  SafeFallback,
};

inline constexpr std::array<DecisionSource, 8> kAllSources = {
    DecisionSource::ExactReuse,        DecisionSource::SubPatternConstrained, DecisionSource::ZeroShotFallback,
    DecisionSource::PersonalizedStyle, DecisionSource::IdleReuse,             DecisionSource::MaskedLLM,
    DecisionSource::DefaultLLM,        DecisionSource::SafeFallback};

std::string_view regime_name(Regime r);
std::string_view source_name(DecisionSource s);
std::optional<DecisionSource> source_from_name(std::string_view name);

struct DecisionConfig {
  double tau = 0.75;                       // high-risk threshold on RL (inclusive)
  double tau_lat = 0.75;                   // lateral masking threshold (exclusive)
  double idle_reuse_min_confidence = 0.5;  // low-risk IDLE shortcut gate
};

struct Decision {
  Action action = Action::Idle;
  Regime regime = Regime::LowRisk;
  DecisionSource source = DecisionSource::DefaultLLM;
  ActionSet allowed;
  std::string rationale;
  int llm_calls = 0;
  double risk_level = 0.0;
  std::vector<EntryId> memory_hits;  // Layer-1 / Layer-2 ids consulted for the result
};

/// RL = max(front, rear).
double risk_level(const DirectionalRisks& risks);

/// Drops lane changes that would leave the road; IDLE and SLOWER always stay.
ActionSet feasible_actions(const Scene& scene);

/// Removes LANE_LEFT when the left side is risky (max RV > tau_lat) or a LEFT
/// constraint matches the pattern; symmetric for LANE_RIGHT.
ActionSet mask_lateral(ActionSet actions, const DirectionalRisks& risks, const RiskPattern& pattern,
                       const MemoryStore* memory, double tau_lat = 0.75);

/// Runs the hybrid pipeline for one step. Never throws on backend failure;
/// those become SafeFallback decisions.
Decision decide(const DecisionContext& ctx, MemoryStore& memory, CompletionBackend& llm,
                const DecisionConfig& config = {});

}  // namespace respond
