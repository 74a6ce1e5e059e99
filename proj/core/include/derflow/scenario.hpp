#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "derflow/controller.hpp"
#include "derflow/network.hpp"
#include "derflow/regions.hpp"
#include "derflow/sensitivity.hpp"
#include "derflow/timeseries.hpp"
#include "derflow/types.hpp"

namespace derflow {

/// A scalar that is either constant or an affine function of a named trace
/// column (already scaled into per-unit at parse time).
struct TraceRef {
  double constant = 0.0;
  std::string column;  // empty: constant
  double scale = 1.0;
  double offset = 0.0;

  double at(const TraceTable& traces, double t) const {
    if (column.empty()) return constant * scale + offset;
    return traces.sample(column, t) * scale + offset;
  }
};

struct DeviceConfig {
  enum class Type { pv, battery, ev, generic };

  std::string id;
  int node = -1;           // -1 for aggregation members (coupled at the aggregation)
  std::string connection;  // "a".."ca", "3y", "3d"
  Type type = Type::generic;

  // pv
  double rating = 0.0;  // inverter capacity, p.u.
  TraceRef available;   // available active power, p.u.

  // battery (energies in p.u.-hours)
  double capacity = 0.0;
  double soc0 = 0.0;
  double p_max = 0.0;

  // ev (consumption levels, positive, p.u.; injections are their negatives)
  std::vector<double> levels;
  bool allow_zero = true;
  double target_energy = 0.0;
  double initial_energy = 0.0;
  double deadline_s = 0.0;

  // generic
  std::optional<OperatingRegion> region;
  std::optional<Discrete> discrete;
  TraceRef p_ref, q_ref;

  double c_p = 0.0, c_q = 0.0;  // cost weights
};

struct AggregationConfig {
  std::string id;
  int node = 0;
  std::string connection;
  std::vector<std::string> members;
};

struct LoadConfig {
  int node = 0;
  std::string connection;
  TraceRef p, q;  // consumption positive, p.u.
};

struct TrackingConfig {
  TraceRef s;                       // service flag (rounded to 0/1)
  std::array<TraceRef, 3> p0_set;   // per-phase head setpoints, p.u.
  TraceRef band;                    // accuracy band E, p.u.
};

struct NoiseConfig {
  double v = 0.0, i = 0.0, p0 = 0.0, x = 0.0;  // channel standard deviations
};

struct Scenario {
  std::string name;
  GridModel grid;
  MeasurementSets sets;
  VecX i_max;
  double alpha = 0.2, r_p = 1e-3, r_d = 1e-4;
  double v_min = 0.95, v_max = 1.05;
  double disagg_tol = 1e-8;
  int disagg_max_iter = 5000;
  TrackingConfig tracking;
  std::vector<DeviceConfig> devices;  // all devices, standalone and members
  std::vector<AggregationConfig> aggregations;
  std::vector<LoadConfig> loads;
  TraceTable traces;
  NoiseConfig noise;
  double tau = 0.0;
  int link_delay_steps = 0;
  double h = 1.0;
  double duration = 0.0;
  std::uint64_t seed = 1;
  bool exact_model_plant = false;
  double sensitivity_step = 1e-4;

  const DeviceConfig& device(const std::string& id) const;
  bool is_member(const std::string& id) const;
};

/// Parses a scenario JSON file; trace CSV references are resolved relative to
/// the scenario file's directory. Unknown fields are rejected.
Scenario load_scenario(const std::filesystem::path& path);

/// Same, from an in-memory JSON string (csv_dir resolves trace references).
Scenario parse_scenario(const std::string& json_text, const std::filesystem::path& csv_dir);

}  // namespace derflow
