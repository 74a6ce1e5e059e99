#include <doctest.h>

#include <cmath>

#include "derflow/powerflow.hpp"

using namespace derflow;

namespace {

GridModel two_bus_grid(double r, double x) {
  GridModel g;
  g.nodes = {GridNode{1, {true, false, false}}};
  GridLine l;
  l.id = "l01";
  l.from = 0;
  l.to = 1;
  l.phases = {Phase::a};
  l.series = CMatX::Constant(1, 1, 1.0 / Complex(r, x));
  g.lines = {l};
  g.slack_voltage = CVec3(1.0, 1.0, 1.0);
  return g;
}

GridModel balanced_feeder() {
  GridModel g;
  g.nodes = {GridNode{1, {true, true, true}}, GridNode{2, {true, true, true}}};
  auto line = [](const std::string& id, int from, int to, Complex z) {
    GridLine l;
    l.id = id;
    l.from = from;
    l.to = to;
    l.phases = {Phase::a, Phase::b, Phase::c};
    l.series = CMatX::Zero(3, 3);
    for (int k = 0; k < 3; ++k) l.series(k, k) = 1.0 / z;
    return l;
  };
  g.lines = {line("l01", 0, 1, Complex(0.02, 0.05)), line("l12", 1, 2, Complex(0.03, 0.06))};
  const Complex rot = std::polar(1.0, -2.0 * M_PI / 3.0);
  g.slack_voltage = CVec3(1.0, rot, std::conj(rot));
  return g;
}

PowerFlowSolver make_solver(const GridModel& g,
                            const std::vector<std::pair<int, PhaseConnection>>& deltas = {}) {
  return PowerFlowSolver(build_admittance(g), build_delta_incidence(g, deltas));
}

// Larger root of |v|^4 + (2(rP+xQ) - V0^2)|v|^2 + |z|^2 (P^2+Q^2) = 0 for a
// single line serving a constant-power load P + jQ.
double two_bus_voltage(double r, double x, double p_load, double q_load) {
  const double z2 = r * r + x * x;
  const double b = 2.0 * (r * p_load + x * q_load) - 1.0;
  const double c = z2 * (p_load * p_load + q_load * q_load);
  const double u = (-b + std::sqrt(b * b - 4.0 * c)) / 2.0;
  return std::sqrt(u);
}

}  // namespace

TEST_CASE("zero injections give the no-load profile") {
  const GridModel g = balanced_feeder();
  const PowerFlowSolver solver = make_solver(g);
  const auto sol = solver.solve(InjectionSpec::zero(6), g.slack_voltage);
  CHECK(sol.iterations == 0);
  CHECK(sol.residual <= 1e-13);
  const CVecX v_nl = solver.no_load_voltage(g.slack_voltage);
  CHECK((sol.v - v_nl).norm() <= 1e-15);
  for (int p = 0; p < 3; ++p) {
    CHECK(std::abs(sol.p0(p)) <= 1e-12);
    CHECK(std::abs(sol.q0(p)) <= 1e-12);
  }
}

TEST_CASE("2-bus case matches the closed-form quadratic") {
  const double r = 0.05, x = 0.1, p_load = 0.4, q_load = 0.1;
  const GridModel g = two_bus_grid(r, x);
  const PowerFlowSolver solver = make_solver(g);

  InjectionSpec inj = InjectionSpec::zero(1);
  inj.sY(0) = Complex(-p_load, -q_load);
  const auto sol = solver.solve(inj, g.slack_voltage, 1e-12, 400);

  const double v_expected = two_bus_voltage(r, x, p_load, q_load);
  CHECK(std::abs(std::abs(sol.v(0)) - v_expected) <= 1e-9);
  CHECK(sol.residual <= 1e-12);

  // Head power equals load plus I^2 R loss.
  const double i_mag = std::hypot(p_load, q_load) / v_expected;
  CHECK(sol.p0(0) == doctest::Approx(p_load + i_mag * i_mag * r).epsilon(1e-8));
  CHECK(sol.p0(0) > 0.0);  // net load imports power
  CHECK(std::abs(sol.p0(1)) < 1e-12);
}

TEST_CASE("balanced wye load keeps the 120-degree rotation") {
  const GridModel g = balanced_feeder();
  const PowerFlowSolver solver = make_solver(g);
  InjectionSpec inj = InjectionSpec::zero(6);
  const auto& idx = solver.blocks().phase_index;
  for (int ph = 0; ph < 3; ++ph) inj.sY(idx.row(2, static_cast<Phase>(ph))) = Complex(-0.1, -0.03);

  const auto sol = solver.solve(inj, g.slack_voltage);
  const Complex rot = std::polar(1.0, -2.0 * M_PI / 3.0);
  for (int node : {1, 2}) {
    const Complex va = sol.v(idx.row(node, Phase::a));
    const Complex vb = sol.v(idx.row(node, Phase::b));
    const Complex vc = sol.v(idx.row(node, Phase::c));
    CHECK(std::abs(vb - va * rot) <= 1e-9);
    CHECK(std::abs(vc - va * std::conj(rot)) <= 1e-9);
  }
  // All three phases see the same head power.
  CHECK(sol.p0(0) == doctest::Approx(sol.p0(1)).epsilon(1e-9));
  CHECK(sol.p0(1) == doctest::Approx(sol.p0(2)).epsilon(1e-9));
}

TEST_CASE("complex power balances against line losses") {
  const GridModel g = balanced_feeder();
  const PowerFlowSolver solver = make_solver(g);
  const auto& idx = solver.blocks().phase_index;
  InjectionSpec inj = InjectionSpec::zero(6);
  inj.sY(idx.row(1, Phase::a)) = Complex(-0.2, -0.05);
  inj.sY(idx.row(2, Phase::b)) = Complex(0.1, 0.02);  // generation on another phase
  const auto sol = solver.solve(inj, g.slack_voltage, 1e-11, 400);

  auto voltage_at = [&](int node, Phase p) -> Complex {
    if (node == 0) return g.slack_voltage(static_cast<int>(p));
    return sol.v(idx.row(node, p));
  };
  Complex losses(0.0, 0.0);
  for (const auto& line : g.lines) {
    for (std::size_t k = 0; k < line.phases.size(); ++k) {
      const Complex dv = voltage_at(line.from, line.phases[k]) - voltage_at(line.to, line.phases[k]);
      const Complex i_line = line.series(k, k) * dv;
      losses += dv * std::conj(i_line);
    }
  }
  const Complex s0(sol.p0.sum(), sol.q0.sum());
  const Complex injected = inj.sY.sum();
  CHECK(std::abs(injected + s0 - losses) <= 1e-10);
}

TEST_CASE("delta-connected load solves and balances") {
  const GridModel g = balanced_feeder();
  const PowerFlowSolver solver =
      make_solver(g, {{2, PhaseConnection::delta_ab()}, {2, PhaseConnection::delta_bc()},
                      {2, PhaseConnection::delta_ca()}});
  const auto& idx = solver.blocks().phase_index;
  InjectionSpec inj = InjectionSpec::zero(6);
  for (const auto& conn : {"ab", "bc", "ca"}) {
    const int row = solver.delta().delta_index.at({2, conn});
    inj.sDelta(row) = Complex(-0.1, -0.02);
  }
  const auto sol = solver.solve(inj, g.slack_voltage, 1e-11, 400);
  CHECK(sol.residual <= 1e-11);
  // Total head power covers the delta load plus losses.
  CHECK(sol.p0.sum() > 0.3);
  CHECK(sol.p0.sum() < 0.32);
  // Delta currents on the three rows are nonzero.
  int nonzero = 0;
  for (const int r : solver.delta().active_rows())
    if (std::abs(sol.iDelta(r)) > 1e-6) ++nonzero;
  CHECK(nonzero == 3);
  (void)idx;
}

TEST_CASE("line currents satisfy Kirchhoff at every node") {
  const GridModel g = balanced_feeder();
  const PowerFlowSolver solver = make_solver(g);
  const auto& idx = solver.blocks().phase_index;
  InjectionSpec inj = InjectionSpec::zero(6);
  inj.sY(idx.row(1, Phase::b)) = Complex(-0.15, -0.04);
  inj.sY(idx.row(2, Phase::b)) = Complex(-0.1, 0.0);
  const auto sol = solver.solve(inj, g.slack_voltage, 1e-11, 400);

  const auto currents = line_currents(g, idx, sol.v, g.slack_voltage,
                                      {{"l01", Phase::b}, {"l12", Phase::b}});
  // Leaf node: net injection current equals minus the incoming line current.
  const Complex i_leaf = sol.i(idx.row(2, Phase::b));
  CHECK(std::abs(i_leaf + currents[1]) <= 1e-9);
  // Middle node: injection = current onward - current inbound.
  const Complex i_mid = sol.i(idx.row(1, Phase::b));
  CHECK(std::abs(i_mid - (currents[1] - currents[0])) <= 1e-9);

  CHECK_THROWS_AS((void)line_currents(g, idx, sol.v, g.slack_voltage, {{"nope", Phase::a}}),
                  Error);
}

TEST_CASE("zero line currents without injections") {
  const GridModel g = balanced_feeder();
  const PowerFlowSolver solver = make_solver(g);
  const auto sol = solver.solve(InjectionSpec::zero(6), g.slack_voltage);
  const auto currents = line_currents(g, solver.blocks().phase_index, sol.v, g.slack_voltage,
                                      {{"l01", Phase::a}, {"l12", Phase::c}});
  for (const auto& c : currents) CHECK(std::abs(c) <= 1e-12);
}

TEST_CASE("solver is deterministic") {
  const GridModel g = balanced_feeder();
  const PowerFlowSolver solver = make_solver(g);
  const auto& idx = solver.blocks().phase_index;
  InjectionSpec inj = InjectionSpec::zero(6);
  inj.sY(idx.row(2, Phase::a)) = Complex(-0.3, -0.1);
  const auto s1 = solver.solve(inj, g.slack_voltage);
  const auto s2 = solver.solve(inj, g.slack_voltage);
  CHECK(std::memcmp(s1.v.data(), s2.v.data(), sizeof(Complex) * s1.v.size()) == 0);
  CHECK(s1.iterations == s2.iterations);
}

TEST_CASE("solutions approach the no-load profile as loads vanish") {
  const GridModel g = balanced_feeder();
  const PowerFlowSolver solver = make_solver(g);
  const auto& idx = solver.blocks().phase_index;
  const CVecX v_nl = solver.no_load_voltage(g.slack_voltage);

  auto gap_at = [&](double kappa) {
    InjectionSpec inj = InjectionSpec::zero(6);
    inj.sY(idx.row(2, Phase::a)) = kappa * Complex(-0.3, -0.1);
    return (solver.solve(inj, g.slack_voltage, 1e-13, 400).v - v_nl).norm();
  };
  const double g3 = gap_at(1e-3), g6 = gap_at(1e-6);
  CHECK(g3 < 1e-3);
  CHECK(g6 < 1e-6);
  CHECK(g6 < g3);
}

TEST_CASE("divergence raises an error carrying the last residual") {
  const GridModel g = two_bus_grid(0.05, 0.1);
  const PowerFlowSolver solver = make_solver(g);
  InjectionSpec inj = InjectionSpec::zero(1);
  inj.sY(0) = Complex(-50.0, -20.0);  // far beyond the deliverable power
  CHECK_THROWS_AS((void)solver.solve(inj, g.slack_voltage, 1e-12, 100), Error);
}
