#pragma once

#include <memory>
#include <string>
#include <vector>

#include <Eigen/LU>

#include "derflow/network.hpp"
#include "derflow/types.hpp"

namespace derflow {

/// Net complex power injections (generation positive). sDelta is indexed by
/// the delta rows of the incidence matrix and must be zero elsewhere.
struct InjectionSpec {
  CVecX sY;
  CVecX sDelta;

  static InjectionSpec zero(int n_phi) {
    return {CVecX::Zero(n_phi), CVecX::Zero(n_phi)};
  }
};

struct PowerFlowSolution {
  CVecX v;       // line-to-ground voltages at the non-slack connections
  CVecX i;       // net phase injection currents
  CVecX iDelta;  // phase-to-phase currents (nonzero on delta rows only)
  Vec3 p0;       // per-phase active power entering the slack
  Vec3 q0;
  int iterations = 0;
  double residual = 0.0;
};

inline constexpr double kDefaultPfTol = 1e-9;
inline constexpr int kDefaultPfMaxIter = 200;

/// Fixed-point (Z-bus style) solver for the multiphase power-flow equations.
/// YLL is factorized once at construction; solve() does not mutate shared
/// state, so one instance may serve concurrent read-only callers.
class PowerFlowSolver {
 public:
  PowerFlowSolver(AdmittanceBlocks blocks, DeltaIncidence delta);

  /// Iterates v <- YLL^{-1}(conj(sY ./ v) + H^T conj(sDelta ./ (H v)) - YL0 v0)
  /// from the no-load profile until the power-balance residual drops below
  /// tol (infinity norm). Throws DivergenceError / VoltageCollapseError.
  PowerFlowSolution solve(const InjectionSpec& inj, const CVec3& v0,
                          double tol = kDefaultPfTol, int max_iter = kDefaultPfMaxIter) const;

  /// Head complex power: s0 = diag(v0) conj(Y00 v0 + Y0L v).
  std::pair<Vec3, Vec3> head_power(const CVecX& v, const CVec3& v0) const;

  /// Residual of the power-flow equations at (v, inj, v0), infinity norm.
  double residual(const CVecX& v, const InjectionSpec& inj, const CVec3& v0) const;

  const AdmittanceBlocks& blocks() const { return blocks_; }
  const DeltaIncidence& delta() const { return delta_; }
  const CVecX& no_load_voltage(const CVec3& v0) const;

 private:
  CVecX injection_current_conj(const CVecX& v, const InjectionSpec& inj) const;

  AdmittanceBlocks blocks_;
  DeltaIncidence delta_;
  std::vector<int> delta_rows_;
  Eigen::PartialPivLU<CMatX> lu_;
  mutable CVecX no_load_cache_;
  mutable CVec3 no_load_v0_;
  mutable bool no_load_valid_ = false;
};

/// Per-phase complex current at the from-end of each requested (line, phase),
/// computed from the line pi-model and the endpoint voltages.
std::vector<Complex> line_currents(const GridModel& grid, const PhaseIndex& idx,
                                   const CVecX& v, const CVec3& v0,
                                   const std::vector<std::pair<std::string, Phase>>& monitored);

}  // namespace derflow
