#pragma once

#include <nlohmann/json.hpp>

#include "respond/context.hpp"
#include "respond/risk_field.hpp"
#include "respond/types.hpp"

// nlohmann/json adapters for the value types shared across logs and files.
namespace respond {

void to_json(nlohmann::json& j, const VehicleState& v);
void from_json(const nlohmann::json& j, VehicleState& v);
void to_json(nlohmann::json& j, const RoadTopology& r);
void from_json(const nlohmann::json& j, RoadTopology& r);
void to_json(nlohmann::json& j, const Scene& s);
void from_json(const nlohmann::json& j, Scene& s);
void to_json(nlohmann::json& j, const DirectionalRisks& r);
void from_json(const nlohmann::json& j, DirectionalRisks& r);
void to_json(nlohmann::json& j, const Frame& f);
void from_json(const nlohmann::json& j, Frame& f);

nlohmann::json pattern_to_json(const RiskPattern& p);
RiskPattern pattern_from_json(const nlohmann::json& j);
nlohmann::json actions_to_json(ActionSet s);

}  // namespace respond
