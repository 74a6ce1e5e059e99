#pragma once

#include <map>
#include <string>
#include <vector>

#include "derflow/network.hpp"
#include "derflow/powerflow.hpp"
#include "derflow/types.hpp"

namespace derflow {

/// Electrical coupling of a device or aggregation: the fractions of its total
/// (P, Q) setpoint injected at each of its connections. Balanced three-phase
/// couplings split the setpoint equally across the three connections.
struct Coupling {
  int node = 0;
  std::vector<std::pair<PhaseConnection, double>> terms;

  static Coupling single(int node, PhaseConnection conn) { return {node, {{conn, 1.0}}}; }
  static Coupling balanced_wye(int node) {
    return {node,
            {{PhaseConnection::wye(Phase::a), 1.0 / 3.0},
             {PhaseConnection::wye(Phase::b), 1.0 / 3.0},
             {PhaseConnection::wye(Phase::c), 1.0 / 3.0}}};
  }
  static Coupling balanced_delta(int node) {
    return {node,
            {{PhaseConnection::delta_ab(), 1.0 / 3.0},
             {PhaseConnection::delta_bc(), 1.0 / 3.0},
             {PhaseConnection::delta_ca(), 1.0 / 3.0}}};
  }
  /// "a".."c", "ab".."ca", "3y", "3d".
  static Coupling parse(int node, const std::string& spec);

  std::vector<std::pair<int, PhaseConnection>> delta_terms() const;
};

/// Adds the device power (net injection, generation positive) to the
/// injection vectors according to the coupling.
void add_injection(InjectionSpec& inj, const PhaseIndex& idx, const DeltaIncidence& delta,
                   const Coupling& coupling, const Vec2& power);

struct MeasurementSets {
  std::vector<std::pair<int, Phase>> v_points;           // M_v: (node, phase)
  std::vector<std::pair<std::string, Phase>> i_lines;    // M_i: (line id, phase)
};

/// One column source for the linearization: an individually-controllable
/// device or an aggregation point.
struct LinearizePoint {
  std::string id;
  Coupling coupling;
  Vec2 x_base = Vec2::Zero();
  bool is_aggregation = false;
};

struct Prediction {
  VecX v_mag;
  VecX i_mag;
  Vec3 p0;
};

/// Affine response model around a base operating point:
///   |v| ~ sum_j A_j x_j + sum_j Abar_j xbar_j + a   (and B/b for currents,
///   M/m for head powers). Exact at the base point by construction.
struct SensitivityModel {
  MeasurementSets sets;
  std::map<std::string, Mat2X> A;                      // |M_v| x 2 per device
  std::map<std::string, Mat2X> B;                      // |M_i| x 2 per device
  std::map<std::string, Eigen::Matrix<double, 3, 2>> M;
  std::map<std::string, Mat2X> Abar, Bbar;
  std::map<std::string, Eigen::Matrix<double, 3, 2>> Mbar;
  VecX a, b;
  Vec3 m = Vec3::Zero();
  std::map<std::string, Vec2> x_base, xbar_base;

  Prediction predict(const std::map<std::string, Vec2>& x,
                     const std::map<std::string, Vec2>& xbar) const;

  struct Gains {
    double g_v, g_0, g_l;
    double max() const { return std::max({g_v, g_0, g_l}); }
  };
  Gains gains() const;
  /// G := max{G_v, G_0, G_L}, the spectral norms of the stacked response maps.
  double gain_bound() const { return gains().max(); }

  std::string to_json_text() const;
  static SensitivityModel from_json_text(const std::string& text);
};

/// Builds the model by central differences of the nonlinear plant: each
/// point's P and Q are perturbed by +-step (split across its connections per
/// the coupling) and the measured responses are differenced. Offsets are set
/// so the model reproduces the base measurements exactly. Throws Error naming
/// the point when a perturbed solve diverges.
SensitivityModel linearize(const PowerFlowSolver& solver, const GridModel& grid,
                           const std::vector<LinearizePoint>& points,
                           const InjectionSpec& base_uncontrollable,
                           const MeasurementSets& sets, const CVec3& v0, double step = 1e-4,
                           double pf_tol = 1e-11, int pf_max_iter = 400);

/// Stacks the measured quantities of a solution in model order.
Prediction measure_solution(const PowerFlowSolution& sol, const GridModel& grid,
                            const PhaseIndex& idx, const CVec3& v0,
                            const MeasurementSets& sets);

}  // namespace derflow
