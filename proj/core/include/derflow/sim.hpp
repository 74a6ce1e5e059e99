#pragma once

#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "derflow/analysis.hpp"
#include "derflow/controller.hpp"
#include "derflow/powerflow.hpp"
#include "derflow/runlog.hpp"
#include "derflow/scenario.hpp"
#include "derflow/sensitivity.hpp"

namespace derflow {

/// First-order actuation response over one sampling interval: the output
/// moves from its current value toward the command with time constant tau.
inline Vec2 actuate(const Vec2& commanded, const Vec2& current_output, double tau, double h) {
  if (tau <= 0.0) return commanded;
  const double lag = std::exp(-h / tau);
  return commanded + (current_output - commanded) * lag;
}

/// Closed-loop scenario engine: advances the power-flow plant under commanded
/// setpoints with actuation lag and link delay, synthesizes noisy
/// measurements, and drives the controller once per sampling interval.
class Engine {
 public:
  explicit Engine(Scenario sc);

  RunLog run();

  const Scenario& scenario() const { return sc_; }
  const SensitivityModel& model() const { return model_; }
  const PowerFlowSolver& solver() const { return *solver_; }
  const ControllerParams& params() const { return params_; }
  const GridModel& grid() const { return sc_.grid; }

  /// Problem snapshot (device and aggregation specs plus step inputs) at time
  /// t given the runtime device states; exposed for analysis and tests.
  ProblemSnapshot snapshot(double t) const;

 private:
  struct DeviceRuntime {
    Vec2 output = Vec2::Zero();
    Vec2 target = Vec2::Zero();
    double soc = 0.0;      // battery charge, p.u.-hours
    double charged = 0.0;  // ev energy delivered, p.u.-hours
    std::vector<std::pair<std::uint64_t, Vec2>> pending;
  };

  OperatingRegion convex_region(const DeviceConfig& d, const DeviceRuntime& rt, double t) const;
  std::optional<Discrete> discrete_set(const DeviceConfig& d, const DeviceRuntime& rt,
                                       double t) const;
  QuadraticCost cost_at(const DeviceConfig& d, double t) const;
  DeviceSpec device_spec(const DeviceConfig& d, const DeviceRuntime& rt, double t) const;
  AggregationSpec aggregation_spec(const AggregationConfig& a, double t) const;
  StepInputs step_inputs(double t) const;
  InjectionSpec assemble_injections(double t) const;
  double gauss(double std_dev);

  Scenario sc_;
  std::unique_ptr<PowerFlowSolver> solver_;
  SensitivityModel model_;
  ControllerParams params_;
  std::map<std::string, Coupling> couplings_;  // standalone devices and aggregations
  std::vector<std::string> standalone_ids_, agg_ids_;
  std::map<std::string, DeviceRuntime> runtime_;
  std::mt19937_64 rng_;
};

}  // namespace derflow
