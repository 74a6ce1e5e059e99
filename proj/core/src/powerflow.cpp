#include "derflow/powerflow.hpp"

#include <cmath>

namespace derflow {

namespace {
constexpr double kCollapseFloor = 1e-6;
}

PowerFlowSolver::PowerFlowSolver(AdmittanceBlocks blocks, DeltaIncidence delta)
    : blocks_(std::move(blocks)), delta_(std::move(delta)), lu_(blocks_.YLL) {
  if (delta_.H.rows() != blocks_.YLL.rows())
    throw TopologyError("delta incidence dimension does not match the admittance blocks");
  delta_rows_ = delta_.active_rows();
}

const CVecX& PowerFlowSolver::no_load_voltage(const CVec3& v0) const {
  if (!no_load_valid_ || no_load_v0_ != v0) {
    no_load_cache_ = lu_.solve((-blocks_.YL0 * v0).eval());
    no_load_v0_ = v0;
    no_load_valid_ = true;
  }
  return no_load_cache_;
}

// Returns i^* = sY ./ v + H^T (sDelta ./ (H v)); the conjugate of the net
// injection current implied by the injections at voltage v.
CVecX PowerFlowSolver::injection_current_conj(const CVecX& v, const InjectionSpec& inj) const {
  const int n = static_cast<int>(v.size());
  CVecX i_conj = CVecX::Zero(n);
  for (int k = 0; k < n; ++k) {
    if (inj.sY(k) != Complex(0.0, 0.0)) {
      if (std::abs(v(k)) < kCollapseFloor)
        throw VoltageCollapseError("voltage magnitude collapsed at connection row " +
                                   std::to_string(k));
      i_conj(k) += inj.sY(k) / v(k);
    }
  }
  if (!delta_rows_.empty()) {
    const CVecX hv = delta_.H * v;
    CVecX idelta_conj = CVecX::Zero(n);
    for (const int r : delta_rows_) {
      if (inj.sDelta(r) == Complex(0.0, 0.0)) continue;
      if (std::abs(hv(r)) < kCollapseFloor)
        throw VoltageCollapseError("phase-to-phase voltage collapsed at delta row " +
                                   std::to_string(r));
      idelta_conj(r) = inj.sDelta(r) / hv(r);
    }
    i_conj += delta_.H.transpose() * idelta_conj;
  }
  return i_conj;
}

double PowerFlowSolver::residual(const CVecX& v, const InjectionSpec& inj,
                                 const CVec3& v0) const {
  // diag(H^T (i^Delta)^*) v + sY - diag(v) i^*  with i = YL0 v0 + YLL v.
  const int n = static_cast<int>(v.size());
  const CVecX i = blocks_.YL0 * v0 + blocks_.YLL * v;
  CVecX res = inj.sY - v.cwiseProduct(i.conjugate());
  if (!delta_rows_.empty()) {
    const CVecX hv = delta_.H * v;
    CVecX idelta_conj = CVecX::Zero(n);
    for (const int r : delta_rows_) {
      if (inj.sDelta(r) == Complex(0.0, 0.0)) continue;
      if (std::abs(hv(r)) < kCollapseFloor)
        throw VoltageCollapseError("phase-to-phase voltage collapsed at delta row " +
                                   std::to_string(r));
      idelta_conj(r) = inj.sDelta(r) / hv(r);
    }
    res += v.cwiseProduct(delta_.H.transpose() * idelta_conj);
  }
  return res.lpNorm<Eigen::Infinity>();
}

PowerFlowSolution PowerFlowSolver::solve(const InjectionSpec& inj, const CVec3& v0,
                                         double tol, int max_iter) const {
  if (!(tol > 0.0)) throw Error("powerflow: tol must be positive");
  const int n = blocks_.YLL.rows();
  if (inj.sY.size() != n || inj.sDelta.size() != n)
    throw Error("powerflow: injection dimension mismatch");

  CVecX v = no_load_voltage(v0);
  double res = residual(v, inj, v0);
  int it = 0;
  while (res > tol) {
    if (it >= max_iter)
      throw DivergenceError("powerflow: no convergence after " + std::to_string(max_iter) +
                                " iterations",
                            res);
    const CVecX i_conj = injection_current_conj(v, inj);
    v = lu_.solve((i_conj.conjugate() - blocks_.YL0 * v0).eval());
    res = residual(v, inj, v0);
    ++it;
  }

  PowerFlowSolution sol;
  sol.v = v;
  sol.i = blocks_.YL0 * v0 + blocks_.YLL * v;
  sol.iDelta = CVecX::Zero(n);
  if (!delta_rows_.empty()) {
    const CVecX hv = delta_.H * v;
    for (const int r : delta_rows_) {
      if (inj.sDelta(r) == Complex(0.0, 0.0)) continue;
      sol.iDelta(r) = std::conj(inj.sDelta(r) / hv(r));
    }
  }
  std::tie(sol.p0, sol.q0) = head_power(v, v0);
  sol.iterations = it;
  sol.residual = res;
  return sol;
}

std::pair<Vec3, Vec3> PowerFlowSolver::head_power(const CVecX& v, const CVec3& v0) const {
  const CVec3 i0 = blocks_.Y00 * v0 + blocks_.Y0L * v;
  const CVec3 s0 = v0.cwiseProduct(i0.conjugate());
  return {s0.real(), s0.imag()};
}

std::vector<Complex> line_currents(const GridModel& grid, const PhaseIndex& idx,
                                   const CVecX& v, const CVec3& v0,
                                   const std::vector<std::pair<std::string, Phase>>& monitored) {
  auto voltage_at = [&](int node, Phase p) -> Complex {
    if (node == 0) return v0(static_cast<int>(p));
    return v(idx.row(node, p));
  };

  std::vector<Complex> out;
  out.reserve(monitored.size());
  for (const auto& [line_id, phase] : monitored) {
    const GridLine* line = grid.find_line(line_id);
    if (!line) throw Error("line_currents: unknown line id '" + line_id + "'");
    const int np = static_cast<int>(line->phases.size());
    int k = -1;
    for (int j = 0; j < np; ++j)
      if (line->phases[j] == phase) k = j;
    if (k < 0)
      throw PhaseError("line_currents: line " + line_id + " does not carry phase " +
                       std::string(1, phase_letter(phase)));
    Complex cur(0.0, 0.0);
    for (int j = 0; j < np; ++j) {
      const Complex vf = voltage_at(line->from, line->phases[j]);
      const Complex vt = voltage_at(line->to, line->phases[j]);
      cur += line->series(k, j) * (vf - vt);
      if (line->shunt.size() != 0) cur += 0.5 * line->shunt(k, j) * vf;
    }
    out.push_back(cur);
  }
  return out;
}

}  // namespace derflow
