#include "derflow/timeseries.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace derflow {

TraceTable::TraceTable(std::vector<double> t, std::map<std::string, std::vector<double>> columns)
    : t_(std::move(t)), columns_(std::move(columns)) {
  for (std::size_t i = 1; i < t_.size(); ++i)
    if (!(t_[i] > t_[i - 1]))
      throw ScenarioError("time series: timestamps must be strictly increasing");
  for (const auto& [name, col] : columns_)
    if (col.size() != t_.size())
      throw ScenarioError("time series: column '" + name + "' length mismatch");
}

double TraceTable::sample(const std::string& name, double time) const {
  const auto it = columns_.find(name);
  if (it == columns_.end()) throw ScenarioError("time series: unknown column '" + name + "'");
  const auto& col = it->second;
  if (t_.empty()) throw ScenarioError("time series: empty table");

  const auto hi = std::upper_bound(t_.begin(), t_.end(), time);
  std::size_t i1 = static_cast<std::size_t>(hi - t_.begin());
  if (i1 == 0 || i1 == t_.size()) {
    // At or beyond an endpoint: allow exact endpoint values only.
    const std::size_t edge = (i1 == 0) ? 0 : t_.size() - 1;
    if (time == t_[edge] && !std::isnan(col[edge])) return col[edge];
    throw ScenarioError("time series: column '" + name + "' does not cover t=" +
                        std::to_string(time));
  }
  const std::size_t i0 = i1 - 1;
  const double v0 = col[i0], v1 = col[i1];
  if (std::isnan(v0) || std::isnan(v1))
    throw ScenarioError("time series: column '" + name + "' has a gap around t=" +
                        std::to_string(time));
  const double w = (time - t_[i0]) / (t_[i1] - t_[i0]);
  return v0 + w * (v1 - v0);
}

TraceTable TraceTable::resample(double h, double duration) const {
  if (!(h > 0.0)) throw ScenarioError("time series: resample step must be positive");
  std::vector<double> grid;
  for (double t = 0.0; t < duration - 1e-12; t += h) grid.push_back(t);
  std::map<std::string, std::vector<double>> cols;
  for (const auto& [name, col] : columns_) {
    std::vector<double> resampled;
    resampled.reserve(grid.size());
    for (const double t : grid) resampled.push_back(sample(name, t));
    cols[name] = std::move(resampled);
  }
  return TraceTable(std::move(grid), std::move(cols));
}

TraceTable ingest_timeseries(const std::filesystem::path& csv_path) {
  std::ifstream in(csv_path);
  if (!in) throw ScenarioError("cannot open time series file: " + csv_path.string());

  std::string line;
  if (!std::getline(in, line)) throw ScenarioError("time series: empty file");
  std::vector<std::string> names;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) names.push_back(cell);
  }
  if (names.size() < 2) throw ScenarioError("time series: need a time column and one series");

  std::vector<double> t;
  std::map<std::string, std::vector<double>> cols;
  for (std::size_t c = 1; c < names.size(); ++c) cols[names[c]] = {};

  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::size_t c = 0;
    while (std::getline(ss, cell, ',')) {
      const double v = cell.empty() ? std::numeric_limits<double>::quiet_NaN() : std::stod(cell);
      if (c == 0)
        t.push_back(v);
      else if (c < names.size())
        cols[names[c]].push_back(v);
      ++c;
    }
    // Short rows: missing trailing cells are gaps.
    for (; c < names.size(); ++c) cols[names[c]].push_back(std::numeric_limits<double>::quiet_NaN());
  }
  return TraceTable(std::move(t), std::move(cols));
}

}  // namespace derflow
