#pragma once

#include <nlohmann/json.hpp>

#include "derflow/aggregation.hpp"
#include "derflow/controller.hpp"
#include "derflow/regions.hpp"

namespace derflow::detail {

using nlohmann::json;

json region_to_json(const OperatingRegion& region);
OperatingRegion region_from_json(const json& j);

json cost_to_json(const QuadraticCost& c);
QuadraticCost cost_from_json(const json& j);

json vec2_to_json(const Vec2& v);
Vec2 vec2_from_json(const json& j);

json vecx_to_json(const VecX& v);
VecX vecx_from_json(const json& j);

json vec3_to_json(const Vec3& v);
Vec3 vec3_from_json(const json& j);

json vec2map_to_json(const std::map<std::string, Vec2>& m);
std::map<std::string, Vec2> vec2map_from_json(const json& j);

json device_spec_to_json(const DeviceSpec& d);
DeviceSpec device_spec_from_json(const json& j);

json aggregation_spec_to_json(const AggregationSpec& a);
AggregationSpec aggregation_spec_from_json(const json& j);

json dual_state_to_json(const DualState& d);
DualState dual_state_from_json(const json& j);

}  // namespace derflow::detail
