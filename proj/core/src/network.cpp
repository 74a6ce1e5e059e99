#include "derflow/network.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <queue>
#include <set>

#include <Eigen/LU>

namespace derflow {

using nlohmann::json;

PhaseConnection PhaseConnection::parse(const std::string& s) {
  if (s == "a") return wye(Phase::a);
  if (s == "b") return wye(Phase::b);
  if (s == "c") return wye(Phase::c);
  if (s == "ab") return delta_ab();
  if (s == "bc") return delta_bc();
  if (s == "ca") return delta_ca();
  throw PhaseError("unknown phase connection '" + s + "'");
}

std::string PhaseConnection::str() const {
  std::string s(1, phase_letter(first));
  if (kind == Kind::delta) s += phase_letter(second);
  return s;
}

const GridNode* GridModel::find_node(int id) const {
  for (const auto& n : nodes)
    if (n.id == id) return &n;
  return nullptr;
}

const GridLine* GridModel::find_line(const std::string& id) const {
  for (const auto& l : lines)
    if (l.id == id) return &l;
  return nullptr;
}

PhaseIndex::PhaseIndex(const GridModel& grid) {
  std::vector<const GridNode*> sorted;
  sorted.reserve(grid.nodes.size());
  for (const auto& n : grid.nodes) sorted.push_back(&n);
  std::sort(sorted.begin(), sorted.end(),
            [](const GridNode* a, const GridNode* b) { return a->id < b->id; });
  for (const auto* n : sorted) {
    for (int p = 0; p < 3; ++p) {
      if (!n->phases[p]) continue;
      lookup_[{n->id, p}] = static_cast<int>(entries_.size());
      entries_.emplace_back(n->id, static_cast<Phase>(p));
    }
  }
}

int PhaseIndex::row(int node, Phase phase) const {
  const auto it = lookup_.find({node, static_cast<int>(phase)});
  if (it == lookup_.end())
    throw PhaseError("no phase " + std::string(1, phase_letter(phase)) + " at node " +
                     std::to_string(node));
  return it->second;
}

namespace {

void check_connected(const GridModel& grid) {
  std::set<int> all;
  all.insert(0);
  for (const auto& n : grid.nodes) {
    if (n.id == 0) throw TopologyError("node id 0 is reserved for the slack");
    if (!all.insert(n.id).second)
      throw TopologyError("duplicate node id " + std::to_string(n.id));
  }
  std::map<int, std::vector<int>> adj;
  for (const auto& l : grid.lines) {
    adj[l.from].push_back(l.to);
    adj[l.to].push_back(l.from);
  }
  std::set<int> seen;
  std::queue<int> q;
  q.push(0);
  seen.insert(0);
  while (!q.empty()) {
    const int u = q.front();
    q.pop();
    for (const int v : adj[u])
      if (seen.insert(v).second) q.push(v);
  }
  if (seen.size() != all.size())
    throw TopologyError("grid graph is not connected to the slack");
}

// Row of (node, phase) within the full matrix: slack phases occupy 0..2.
int full_row(const PhaseIndex& idx, int node, Phase phase) {
  if (node == 0) return static_cast<int>(phase);
  return 3 + idx.row(node, phase);
}

bool node_has_phase(const GridModel& grid, int node, Phase p) {
  if (node == 0) return true;
  const GridNode* n = grid.find_node(node);
  if (!n) throw TopologyError("line references unknown node " + std::to_string(node));
  return n->has_phase(p);
}

}  // namespace

AdmittanceBlocks build_admittance(const GridModel& grid) {
  check_connected(grid);
  PhaseIndex idx(grid);
  const int n_phi = idx.size();
  CMatX full = CMatX::Zero(n_phi + 3, n_phi + 3);

  for (const auto& line : grid.lines) {
    const int np = static_cast<int>(line.phases.size());
    if (line.series.rows() != np || line.series.cols() != np)
      throw TopologyError("line " + line.id + ": series matrix size mismatch");
    CMatX shunt = line.shunt;
    if (shunt.size() == 0) shunt = CMatX::Zero(np, np);
    if (shunt.rows() != np || shunt.cols() != np)
      throw TopologyError("line " + line.id + ": shunt matrix size mismatch");

    std::vector<int> rows_from(np), rows_to(np);
    for (int k = 0; k < np; ++k) {
      const Phase p = line.phases[k];
      if (!node_has_phase(grid, line.from, p) || !node_has_phase(grid, line.to, p))
        throw PhaseError("line " + line.id + ": phase " + std::string(1, phase_letter(p)) +
                         " missing at an endpoint");
      rows_from[k] = full_row(idx, line.from, p);
      rows_to[k] = full_row(idx, line.to, p);
    }
    for (int r = 0; r < np; ++r) {
      for (int c = 0; c < np; ++c) {
        const Complex ys = line.series(r, c);
        const Complex ysh = 0.5 * shunt(r, c);
        full(rows_from[r], rows_from[c]) += ys + ysh;
        full(rows_to[r], rows_to[c]) += ys + ysh;
        full(rows_from[r], rows_to[c]) -= ys;
        full(rows_to[r], rows_from[c]) -= ys;
      }
    }
  }

  AdmittanceBlocks blocks;
  blocks.Y00 = full.topLeftCorner(3, 3);
  blocks.Y0L = full.topRightCorner(3, n_phi);
  blocks.YL0 = full.bottomLeftCorner(n_phi, 3);
  blocks.YLL = full.bottomRightCorner(n_phi, n_phi);
  blocks.phase_index = std::move(idx);

  Eigen::FullPivLU<CMatX> lu(blocks.YLL);
  if (!lu.isInvertible())
    throw DegenerateNetworkError("YLL is singular; check series admittances");
  return blocks;
}

DeltaIncidence build_delta_incidence(
    const GridModel& grid, const std::vector<std::pair<int, PhaseConnection>>& devices) {
  PhaseIndex idx(grid);
  DeltaIncidence d;
  d.H = MatX::Zero(idx.size(), idx.size());
  for (const auto& [node, conn] : devices) {
    if (conn.kind != PhaseConnection::Kind::delta) continue;
    const GridNode* n = grid.find_node(node);
    if (!n) throw TopologyError("delta device at unknown node " + std::to_string(node));
    if (!n->has_phase(conn.first) || !n->has_phase(conn.second))
      throw PhaseError("delta connection " + conn.str() + " at node " + std::to_string(node) +
                       " references a missing phase");
    const int row = idx.row(node, conn.first);
    d.H(row, idx.row(node, conn.first)) = 1.0;
    d.H(row, idx.row(node, conn.second)) = -1.0;
    d.delta_index[{node, conn.str()}] = row;
  }
  return d;
}

std::vector<int> DeltaIncidence::active_rows() const {
  std::vector<int> rows;
  rows.reserve(delta_index.size());
  for (const auto& [key, row] : delta_index) rows.push_back(row);
  std::sort(rows.begin(), rows.end());
  rows.erase(std::unique(rows.begin(), rows.end()), rows.end());
  return rows;
}

namespace {

void reject_unknown(const json& obj, const std::set<std::string>& allowed,
                    const std::string& where) {
  for (const auto& [key, value] : obj.items()) {
    if (!allowed.count(key))
      throw ScenarioError("unknown field '" + key + "' in " + where);
  }
}

Complex parse_complex(const json& v, const std::string& where) {
  if (!v.is_array() || v.size() != 2)
    throw ScenarioError(where + ": complex values are [re, im] pairs");
  return Complex(v[0].get<double>(), v[1].get<double>());
}

std::vector<Phase> parse_phases(const std::string& s, const std::string& where) {
  std::vector<Phase> out;
  for (const char c : s) {
    switch (c) {
      case 'a': out.push_back(Phase::a); break;
      case 'b': out.push_back(Phase::b); break;
      case 'c': out.push_back(Phase::c); break;
      default: throw ScenarioError(where + ": bad phase letter '" + std::string(1, c) + "'");
    }
  }
  if (out.empty()) throw ScenarioError(where + ": empty phase list");
  return out;
}

CMatX parse_admittance_block(const json& v, int np, double y_scale, const std::string& where) {
  CMatX out = CMatX::Zero(np, np);
  if (!v.is_array()) throw ScenarioError(where + ": expected an array");
  if (v.size() == static_cast<std::size_t>(np) && np > 0 && v[0].is_array() &&
      v[0].size() == 2 && !v[0][0].is_array()) {
    // Per-phase list of [re, im] pairs: diagonal, no mutual coupling.
    for (int k = 0; k < np; ++k) out(k, k) = y_scale * parse_complex(v[k], where);
    return out;
  }
  if (v.size() != static_cast<std::size_t>(np))
    throw ScenarioError(where + ": matrix row count mismatch");
  for (int r = 0; r < np; ++r) {
    if (!v[r].is_array() || v[r].size() != static_cast<std::size_t>(np))
      throw ScenarioError(where + ": matrix column count mismatch");
    for (int c = 0; c < np; ++c) out(r, c) = y_scale * parse_complex(v[r][c], where);
  }
  return out;
}

}  // namespace

GridModel grid_from_json_text(const std::string& json_text) {
  json g = json::parse(json_text);
  reject_unknown(g, {"units", "base", "slack_voltage", "nodes", "lines"}, "grid");

  GridModel grid;
  const std::string units = g.value("units", std::string("per_unit"));
  if (units != "per_unit" && units != "si")
    throw ScenarioError("grid.units must be 'per_unit' or 'si'");

  if (g.contains("base")) {
    reject_unknown(g["base"], {"s_va", "v_v"}, "grid.base");
    grid.s_base_va = g["base"].value("s_va", 1.0);
    grid.v_base_v = g["base"].value("v_v", 1.0);
  } else if (units == "si") {
    throw ScenarioError("grid.base is required when units are 'si'");
  }
  // Per-phase bases: Z_base = v^2 / s, admittance scale = Z_base.
  const double y_scale =
      (units == "si") ? (grid.v_base_v * grid.v_base_v / grid.s_base_va) : 1.0;
  const double v_scale = (units == "si") ? 1.0 / grid.v_base_v : 1.0;

  if (!g.contains("slack_voltage")) throw ScenarioError("grid.slack_voltage is required");
  if (!g["slack_voltage"].is_array() || g["slack_voltage"].size() != 3)
    throw ScenarioError("grid.slack_voltage must have three entries");
  for (int p = 0; p < 3; ++p)
    grid.slack_voltage(p) = v_scale * parse_complex(g["slack_voltage"][p], "grid.slack_voltage");

  if (!g.contains("nodes")) throw ScenarioError("grid.nodes is required");
  for (const auto& jn : g["nodes"]) {
    reject_unknown(jn, {"id", "phases"}, "grid.nodes[]");
    GridNode n;
    n.id = jn.at("id").get<int>();
    n.phases = {false, false, false};
    for (const Phase p : parse_phases(jn.at("phases").get<std::string>(), "grid.nodes[]"))
      n.phases[static_cast<int>(p)] = true;
    grid.nodes.push_back(n);
  }

  if (!g.contains("lines")) throw ScenarioError("grid.lines is required");
  for (const auto& jl : g["lines"]) {
    reject_unknown(jl, {"id", "from", "to", "phases", "series", "shunt"}, "grid.lines[]");
    GridLine l;
    l.id = jl.at("id").get<std::string>();
    l.from = jl.at("from").get<int>();
    l.to = jl.at("to").get<int>();
    l.phases = parse_phases(jl.at("phases").get<std::string>(), "line " + l.id);
    const int np = static_cast<int>(l.phases.size());
    l.series = parse_admittance_block(jl.at("series"), np, y_scale, "line " + l.id + ".series");
    if (jl.contains("shunt"))
      l.shunt = parse_admittance_block(jl["shunt"], np, y_scale, "line " + l.id + ".shunt");
    grid.lines.push_back(std::move(l));
  }
  return grid;
}

}  // namespace derflow
