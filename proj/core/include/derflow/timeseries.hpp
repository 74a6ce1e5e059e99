#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "derflow/types.hpp"

namespace derflow {

/// Column-oriented time series sampled on a strictly increasing time grid.
/// Empty CSV cells become NaN and mark uncovered spans.
class TraceTable {
 public:
  TraceTable() = default;
  TraceTable(std::vector<double> t, std::map<std::string, std::vector<double>> columns);

  bool has(const std::string& name) const { return columns_.count(name) != 0; }
  const std::vector<double>& times() const { return t_; }

  /// Linear interpolation at the given time; throws ScenarioError naming the
  /// series when the requested time is outside its covered span.
  double sample(const std::string& name, double time) const;

  /// Resamples onto {0, h, 2h, ...} up to duration (inclusive of the last
  /// grid point below duration), validating coverage for every column.
  TraceTable resample(double h, double duration) const;

 private:
  std::vector<double> t_;
  std::map<std::string, std::vector<double>> columns_;
};

/// Reads a CSV with a header row; the first column is the timestamp (seconds)
/// and must be strictly increasing. Remaining columns become named series.
TraceTable ingest_timeseries(const std::filesystem::path& csv_path);

}  // namespace derflow
