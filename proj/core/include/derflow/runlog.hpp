#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "derflow/controller.hpp"
#include "derflow/types.hpp"

namespace derflow {

struct RunHeader {
  std::string scenario_name;
  std::vector<std::string> device_ids;       // sorted, canonical z order
  std::vector<std::string> aggregation_ids;  // sorted
  std::string model_json;                    // embedded SensitivityModel
  ControllerParams params;
  double h = 1.0;
  std::uint64_t seed = 0;
  std::uint64_t planned_steps = 0;
};

/// Everything needed to reconstruct the saddle-point problem at one instant.
struct ProblemSnapshot {
  std::vector<DeviceSpec> devices;
  std::vector<AggregationSpec> aggregations;
  StepInputs inputs;
};

struct StepRecord {
  std::uint64_t k = 0;
  double t = 0.0;

  // Iterate entering the step (z^(k)).
  std::map<std::string, Vec2> x_pre, xbar_pre, xi_pre;
  DualState duals_pre;

  // Measurements used by the controller at this step.
  VecX v_meas, iL_meas;
  Vec3 p0_meas = Vec3::Zero();
  std::map<std::string, Vec2> der_meas;

  // Plant truth before noise.
  VecX v_true, iL_true;
  Vec3 p0_true = Vec3::Zero();

  // Model predictions evaluated at the entering iterate.
  VecX v_pred, iL_pred;
  Vec3 p0_pred = Vec3::Zero();

  // Commands issued at the step (implementable setpoints where discrete).
  std::map<std::string, Vec2> commands;
  std::map<std::string, std::map<std::string, Vec2>> member_commands;
  std::map<std::string, AggregationDiag> disagg;

  ProblemSnapshot problem;
  bool stepsize_warning = false;
};

struct RunLog {
  RunHeader header;
  std::vector<StepRecord> steps;
  std::map<std::string, Vec2> x_final, xbar_final;
  DualState duals_final;
  bool completed = false;
  std::string abort_reason;

  void write_jsonl(const std::filesystem::path& path) const;
  static RunLog read_jsonl(const std::filesystem::path& path);

  /// summary.csv: k, t, p0 per phase, p0_set per phase, tracking_err, max_v,
  /// min_v, max_iL_ratio, and the five dual-group norms.
  void write_summary_csv(const std::filesystem::path& path) const;
};

}  // namespace derflow
