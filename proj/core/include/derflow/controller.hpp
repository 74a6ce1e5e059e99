#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "derflow/aggregation.hpp"
#include "derflow/regions.hpp"
#include "derflow/sensitivity.hpp"
#include "derflow/types.hpp"

namespace derflow {

struct ControllerParams {
  double alpha = 0.2;
  double r_p = 1e-3;
  double r_d = 1e-4;
  double v_min = 0.95;
  double v_max = 1.05;
  VecX i_max;          // ampacity per monitored (line, phase) entry
  double h = 1.0;      // sampling interval, seconds
  double alpha_bound = 0.0;  // stepsize guard threshold; 0 disables the warning
};

/// Per-step problem data that varies over time.
struct StepInputs {
  Vec3 p0_set = Vec3::Zero();
  double E = 0.0;  // tracking accuracy band
  int s = 0;       // head-tracking service flag
};

struct DualState {
  VecX mu, gamma;  // voltage lower/upper multipliers, size |M_v|
  VecX zeta;       // ampacity multipliers, size |M_i|
  Vec3 lambda = Vec3::Zero(), nu = Vec3::Zero();  // head-tracking multipliers

  static DualState zero(int n_v, int n_i);
  /// Stacked as d = [gamma; nu; lambda; mu; zeta].
  VecX stacked() const;
  double norm() const { return stacked().norm(); }
};

struct DeviceSpec {
  std::string id;
  OperatingRegion region;            // convex region (hull for discrete devices)
  QuadraticCost cost;
  std::optional<Discrete> discrete;  // implementable set when setpoints are discrete
};

struct AggregationSpec {
  std::string id;
  std::vector<std::string> member_ids;
  std::vector<Member> members;       // convexified member regions and costs
  std::vector<std::optional<Discrete>> member_discrete;
  OperatingRegion folded;            // inner approximation of the member Minkowski sum
  double disagg_tol = 1e-8;
  int disagg_max_iter = 5000;
};

struct MeasurementFrame {
  double t = 0.0;
  VecX v_mag;   // |M_v|
  VecX iL_mag;  // |M_i|
  Vec3 p0 = Vec3::Zero();
  std::map<std::string, Vec2> der_outputs;  // by device / aggregation id
};

struct ControllerState {
  DualState duals;
  std::map<std::string, Vec2> x;     // device setpoints (continuous iterates)
  std::map<std::string, Vec2> xbar;  // aggregate setpoints
  std::map<std::string, Vec2> xi;    // aggregation coupling duals
  std::map<std::string, std::vector<Vec2>> member_setpoints;
  std::map<std::string, ErrorAccumulator> err_acc;  // keyed by device or "agg/member"
  std::uint64_t k = 0;

  static ControllerState initial(int n_v, int n_i, std::span<const DeviceSpec> devices,
                                 std::span<const AggregationSpec> aggregations);
};

struct AggregationDiag {
  double gap = 0.0;
  int iterations = 0;
  bool converged = true;
};

struct StepResult {
  ControllerState state;
  std::map<std::string, Vec2> commands;  // implementable command per device (discrete where applicable)
  std::map<std::string, std::map<std::string, Vec2>> member_commands;
  std::map<std::string, AggregationDiag> disagg;
  bool stepsize_warning = false;
};

/// Regularized dual ascent from measurements; all five multiplier groups are
/// projected onto the nonnegative orthant. With s = 0 the head-tracking
/// multipliers decay geometrically at factor (1 - alpha r_d).
DualState dual_step(const DualState& duals, const MeasurementFrame& frame,
                    const ControllerParams& params, const StepInputs& in);

/// Projected primal update for one device, seeded by its measured output.
Vec2 device_step(const Vec2& measured, const DualState& duals_next,
                 const SensitivityModel& model, const DeviceSpec& dev,
                 const ControllerParams& params, const StepInputs& in);

/// Projected primal update for an aggregate setpoint (uses the previous
/// disaggregation dual xi as the gradient surrogate).
Vec2 aggregation_step(const Vec2& measured, const Vec2& xi_prev, const DualState& duals_next,
                      const SensitivityModel& model, const AggregationSpec& agg,
                      const ControllerParams& params, const StepInputs& in);

/// One full controller iteration: dual updates, device and aggregation primal
/// updates, disaggregation, and error diffusion for discrete setpoints. The
/// input state is untouched on error (the step is atomic).
StepResult controller_step(const ControllerState& state, const MeasurementFrame& frame,
                           const SensitivityModel& model, std::span<const DeviceSpec> devices,
                           std::span<const AggregationSpec> aggregations,
                           const ControllerParams& params, const StepInputs& in);

/// Stacks [x; xbar; d] in canonical order (device ids sorted, aggregation ids
/// sorted, then the dual stacking of DualState).
VecX stack_z(const ControllerState& state, std::span<const std::string> device_ids,
             std::span<const std::string> aggregation_ids);

}  // namespace derflow
