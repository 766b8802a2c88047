#pragma once

#include <optional>
#include <string>

#include "respond/pattern.hpp"
#include "respond/risk_field.hpp"
#include "respond/types.hpp"

namespace respond {

/// Switches for the ablation variants.
struct AblationFlags {
  bool disable_l1 = false;
  bool disable_l2 = false;
  bool disable_risk_values = false;
  bool ann_l1 = false;  // reuse the nearest Layer-1 entry even at non-zero distance
  bool operator==(const AblationFlags&) const = default;
};

/// One encoded observation: produced by a single encode_scene call.
struct Frame {
  Scene scene;
  RiskPattern pattern;
  PatternVector vector;
  DirectionalRisks risks;
};

Frame make_frame(const Scene& scene, const EncoderParams& params);

struct DecisionContext {
  Scene scene;
  RiskPattern pattern;
  PatternVector vector;
  DirectionalRisks risks;
  std::optional<std::string> profile;
  AblationFlags flags;

  Frame frame() const { return {scene, pattern, vector, risks}; }
};

DecisionContext make_context(const Scene& scene, const EncoderParams& params,
                             std::optional<std::string> profile = std::nullopt, AblationFlags flags = {});
DecisionContext make_context(const Frame& frame, std::optional<std::string> profile = std::nullopt,
                             AblationFlags flags = {});

/// Evidence bundle handed to reflection after a collision.
struct CrashRecord {
  Frame pre_frame;   // last decision step before impact
  Frame post_frame;  // physics substep of impact
  Action executed_action = Action::Idle;
  VehicleState collider;
  std::string episode_id;
  int step_index = 0;
};

/// Mean speed of the vehicles inside the grid span, or the ego speed when none are.
double mean_surrounding_speed(const Scene& scene);

}  // namespace respond
