#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "derflow/types.hpp"

namespace derflow {

enum class Phase : int { a = 0, b = 1, c = 2 };

inline char phase_letter(Phase p) { return "abc"[static_cast<int>(p)]; }

/// One member of the connection set {a, b, c, ab, bc, ca}: wye connections are
/// line-to-ground on a single phase, delta connections line-to-line.
struct PhaseConnection {
  enum class Kind { wye, delta };
  Kind kind;
  Phase first;   // wye: the phase; delta: leading phase (ab -> a, bc -> b, ca -> c)
  Phase second;  // delta only: trailing phase

  static PhaseConnection wye(Phase p) { return {Kind::wye, p, p}; }
  static PhaseConnection delta_ab() { return {Kind::delta, Phase::a, Phase::b}; }
  static PhaseConnection delta_bc() { return {Kind::delta, Phase::b, Phase::c}; }
  static PhaseConnection delta_ca() { return {Kind::delta, Phase::c, Phase::a}; }

  /// Parses "a", "b", "c", "ab", "bc", "ca".
  static PhaseConnection parse(const std::string& s);
  std::string str() const;

  bool operator==(const PhaseConnection&) const = default;
  auto operator<=>(const PhaseConnection&) const = default;
};

struct GridNode {
  int id = 0;                                  // nonzero; 0 is the slack
  std::array<bool, 3> phases = {true, true, true};
  bool has_phase(Phase p) const { return phases[static_cast<int>(p)]; }
};

/// Pi-section line. `series` and `shunt` are square complex matrices over the
/// carried phases (diagonal entries per-phase, off-diagonal mutual coupling;
/// shunt is the total line charging split evenly between the two ends).
struct GridLine {
  std::string id;
  int from = 0;
  int to = 0;
  std::vector<Phase> phases;
  CMatX series;
  CMatX shunt;
};

struct GridModel {
  std::vector<GridNode> nodes;  // non-slack nodes, any order
  std::vector<GridLine> lines;
  CVec3 slack_voltage = CVec3::Zero();
  double s_base_va = 1.0;  // power base used at ingestion
  double v_base_v = 1.0;   // line-to-ground voltage base used at ingestion

  const GridNode* find_node(int id) const;
  const GridLine* find_line(const std::string& id) const;
};

/// Canonical ordering of the N_phi single-phase connections: node id
/// ascending, phase a < b < c within a node. Row 0..N_phi-1.
class PhaseIndex {
 public:
  PhaseIndex() = default;
  explicit PhaseIndex(const GridModel& grid);

  int size() const { return static_cast<int>(entries_.size()); }
  int row(int node, Phase phase) const;
  const std::vector<std::pair<int, Phase>>& entries() const { return entries_; }

 private:
  std::vector<std::pair<int, Phase>> entries_;
  std::map<std::pair<int, int>, int> lookup_;
};

/// Admittance matrix partitioned with the three slack rows/columns first.
struct AdmittanceBlocks {
  CMatX Y00;  // 3 x 3
  CMatX Y0L;  // 3 x N_phi
  CMatX YL0;  // N_phi x 3
  CMatX YLL;  // N_phi x N_phi
  PhaseIndex phase_index;
};

/// Delta-current incidence. Row delta_index[(node, conn)] carries +1 at the
/// leading phase and -1 at the trailing phase of the connection; all other
/// rows are zero.
struct DeltaIncidence {
  MatX H;  // N_phi x N_phi, entries in {-1, 0, +1}
  std::map<std::pair<int, std::string>, int> delta_index;

  bool empty() const { return delta_index.empty(); }
  std::vector<int> active_rows() const;
};

/// Assembles the partitioned admittance matrix from the line pi-models.
/// Throws TopologyError for a disconnected graph and DegenerateNetworkError
/// when YLL is singular.
AdmittanceBlocks build_admittance(const GridModel& grid);

/// Builds the delta incidence for the given delta-connected devices/loads.
/// Throws PhaseError when a connection references a phase missing at its node.
DeltaIncidence build_delta_incidence(const GridModel& grid,
                                     const std::vector<std::pair<int, PhaseConnection>>& devices);

/// Parses a grid description from the scenario JSON text (the "grid" object
/// serialized as a string). Unknown fields are rejected.
GridModel grid_from_json_text(const std::string& json_text);

}  // namespace derflow
