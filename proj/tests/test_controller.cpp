#include <doctest.h>

#include <cmath>
#include <random>

#include "derflow/analysis.hpp"
#include "derflow/controller.hpp"

using namespace derflow;

namespace {

// Hand-built single-measurement model: one voltage point, one line, one
// device ("d") and one aggregation ("g") with identical columns.
SensitivityModel toy_model() {
  SensitivityModel m;
  m.sets.v_points = {{1, Phase::a}};
  m.sets.i_lines = {{"l01", Phase::a}};
  m.a = VecX::Constant(1, 1.0);
  m.b = VecX::Constant(1, 0.2);
  m.m = Vec3(0.3, 0.0, 0.0);

  Mat2X A(1, 2);
  A << 0.02, 0.05;
  Mat2X B(1, 2);
  B << -0.9, -0.1;
  Eigen::Matrix<double, 3, 2> M;
  M << -1.0, -0.05, 0.0, 0.0, 0.0, 0.0;
  m.A["d"] = A;
  m.B["d"] = B;
  m.M["d"] = M;
  m.x_base["d"] = Vec2::Zero();
  m.Abar["g"] = A;
  m.Bbar["g"] = B;
  m.Mbar["g"] = M;
  m.xbar_base["g"] = Vec2::Zero();
  return m;
}

ControllerParams toy_params() {
  ControllerParams p;
  p.alpha = 0.2;
  p.r_p = 1e-3;
  p.r_d = 1e-4;
  p.v_min = 0.95;
  p.v_max = 1.05;
  p.i_max = VecX::Constant(1, 1.0);
  return p;
}

MeasurementFrame frame_with(double v, double i, double p0a) {
  MeasurementFrame f;
  f.v_mag = VecX::Constant(1, v);
  f.iL_mag = VecX::Constant(1, i);
  f.p0 = Vec3(p0a, 0.0, 0.0);
  return f;
}

}  // namespace

TEST_CASE("duals stay at zero inside the limits") {
  const auto params = toy_params();
  const DualState d0 = DualState::zero(1, 1);
  StepInputs in;
  in.s = 1;
  in.p0_set = Vec3(0.3, 0.0, 0.0);
  in.E = 0.1;
  const DualState d1 = dual_step(d0, frame_with(1.0, 0.5, 0.3), params, in);
  CHECK(d1.mu.norm() == 0.0);
  CHECK(d1.gamma.norm() == 0.0);
  CHECK(d1.zeta.norm() == 0.0);
  CHECK(d1.lambda.norm() == 0.0);
  CHECK(d1.nu.norm() == 0.0);
}

TEST_CASE("scalar dual update matches the hand evaluation") {
  auto params = toy_params();
  params.alpha = 0.2;
  params.r_d = 1e-4;
  const DualState d0 = DualState::zero(1, 1);
  StepInputs in;  // s = 0
  const DualState d1 = dual_step(d0, frame_with(0.90, 0.0, 0.0), params, in);
  CHECK(d1.mu(0) == doctest::Approx(0.2 * 0.05).epsilon(1e-12));
  CHECK(d1.gamma(0) == 0.0);
}

TEST_CASE("constant violation drives mu to its regularized fixed point") {
  auto params = toy_params();
  const double viol = 0.95 - 0.90;
  const double mu_star = viol / params.r_d;
  DualState d = DualState::zero(1, 1);
  d.mu(0) = mu_star;
  StepInputs in;
  const DualState d1 = dual_step(d, frame_with(0.90, 0.0, 0.0), params, in);
  CHECK(d1.mu(0) == doctest::Approx(mu_star).epsilon(1e-12));

  DualState lo = DualState::zero(1, 1);
  double prev_gap = mu_star;
  for (int k = 0; k < 50; ++k) {
    lo = dual_step(lo, frame_with(0.90, 0.0, 0.0), params, in);
    const double gap = mu_star - lo.mu(0);
    CHECK(gap < prev_gap);
    prev_gap = gap;
  }
}

TEST_CASE("head-tracking duals decay geometrically when the service flag is off") {
  auto params = toy_params();
  DualState d = DualState::zero(1, 1);
  d.lambda = Vec3(2.0, 1.0, 0.5);
  d.nu = Vec3(0.25, 0.0, 1.5);
  StepInputs in;
  in.s = 0;
  in.p0_set = Vec3(5.0, 5.0, 5.0);  // would excite the duals if gated in
  const double factor = 1.0 - params.alpha * params.r_d;
  const DualState d1 = dual_step(d, frame_with(1.0, 0.0, 9.0), params, in);
  CHECK(d1.lambda.isApprox(factor * d.lambda, 1e-14));
  CHECK(d1.nu.isApprox(factor * d.nu, 1e-14));
}

TEST_CASE("device step is a no-op at an interior stationary point") {
  const auto model = toy_model();
  auto params = toy_params();
  params.r_p = 0.0;
  const DualState zeros = DualState::zero(1, 1);
  StepInputs in;
  DeviceSpec dev{"d", Disk(-1.0, 1.0, 1.0), QuadraticCost{}, std::nullopt};
  const Vec2 measured(0.2, -0.1);
  CHECK(device_step(measured, zeros, model, dev, params, in) == measured);
}

TEST_CASE("PV stays at its available power up to the r_p pull") {
  const auto model = toy_model();
  const auto params = toy_params();
  const DualState zeros = DualState::zero(1, 1);
  StepInputs in;
  const double p_av = 0.6;
  DeviceSpec dev{"d", Disk(0.0, p_av, 1.0), QuadraticCost{1.0, 1.0, p_av, 0.0}, std::nullopt};
  const Vec2 measured(p_av, 0.0);
  const Vec2 next = device_step(measured, zeros, model, dev, params, in);
  const Vec2 expected = project(dev.region, Vec2((1.0 - params.alpha * params.r_p) * measured));
  CHECK((next - expected).norm() < 1e-15);
}

TEST_CASE("device step matches the hand-computed gradient") {
  const auto model = toy_model();
  auto params = toy_params();
  params.r_p = 0.0;
  DualState d = DualState::zero(1, 1);
  d.gamma(0) = 0.5;
  StepInputs in;
  DeviceSpec dev{"d", Disk(-1.0, 1.0, 1.0), QuadraticCost{}, std::nullopt};
  const Vec2 measured(0.0, 0.0);
  // x+ = proj(x - alpha A^T gamma), A = (0.02, 0.05).
  const Vec2 expected(-0.2 * 0.02 * 0.5, -0.2 * 0.05 * 0.5);
  CHECK((device_step(measured, d, model, dev, params, in) - expected).norm() < 1e-15);
}

TEST_CASE("single-member aggregation equals the device update at its optimum") {
  const auto model = toy_model();
  const auto params = toy_params();
  DualState duals = DualState::zero(1, 1);
  duals.gamma(0) = 0.2;
  duals.zeta(0) = 0.1;
  duals.lambda = Vec3(0.05, 0.0, 0.0);
  StepInputs in;
  in.s = 1;
  in.p0_set = Vec3(0.3, 0.0, 0.0);
  in.E = 0.05;

  const QuadraticCost cost{2.0, 1.0, 0.1, 0.0};
  const OperatingRegion region = Disk(-0.8, 0.8, 1.0);
  const Vec2 point(0.2, 0.05);

  DeviceSpec dev{"d", region, cost, std::nullopt};
  const Vec2 dev_next = device_step(point, duals, model, dev, params, in);

  AggregationSpec agg;
  agg.id = "g";
  agg.member_ids = {"m"};
  agg.members = {Member{region, cost}};
  agg.member_discrete = {std::nullopt};
  agg.folded = region;
  const Vec2 xi = -cost.grad(point);  // converged disaggregation dual at the same point
  const Vec2 agg_next = aggregation_step(point, xi, duals, model, agg, params, in);
  CHECK((agg_next - dev_next).norm() < 1e-14);
}

TEST_CASE("controller step commands discrete devices through error diffusion") {
  const auto model = toy_model();
  const auto params = toy_params();
  StepInputs in;

  DeviceSpec dev{"d", Interval(0.0, 1.0), QuadraticCost{100.0, 0.0, 0.5, 0.0},
                 Discrete({Vec2(0, 0), Vec2(1, 0)})};
  std::vector<DeviceSpec> devices{dev};
  std::vector<AggregationSpec> aggs;
  ControllerState st = ControllerState::initial(1, 1, devices, aggs);

  MeasurementFrame f = frame_with(1.0, 0.0, 0.0);
  f.der_outputs["d"] = Vec2(0.5, 0.0);

  int ones = 0, zeros_count = 0;
  for (int k = 0; k < 40; ++k) {
    auto res = controller_step(st, f, model, devices, aggs, params, in);
    st = std::move(res.state);
    const Vec2 cmd = res.commands.at("d");
    CHECK((cmd == Vec2(0, 0) || cmd == Vec2(1, 0)));
    (cmd == Vec2(1, 0) ? ones : zeros_count)++;
  }
  CHECK(ones > 5);
  CHECK(zeros_count > 5);
  CHECK(st.x.at("d").x() > 0.0);
  CHECK(st.x.at("d").x() < 1.0);
}

TEST_CASE("locked members reduce the update to the free members") {
  const auto model = toy_model();
  const auto params = toy_params();
  StepInputs in;

  AggregationSpec agg;
  agg.id = "g";
  agg.member_ids = {"locked", "free"};
  agg.members = {Member{Singleton{Vec2(0.25, 0.0)}, QuadraticCost{}},
                 Member{Disk(-0.5, 0.5, 0.6), QuadraticCost{1.0, 1.0, 0.0, 0.0}}};
  agg.member_discrete = {std::nullopt, std::nullopt};
  agg.folded = fold_aggregate(
      std::vector<OperatingRegion>{Interval(0.25, 0.25), Disk(-0.5, 0.5, 0.6)});
  agg.disagg_tol = 1e-10;

  std::vector<DeviceSpec> devices;
  std::vector<AggregationSpec> aggs{agg};
  ControllerState st = ControllerState::initial(1, 1, devices, aggs);

  MeasurementFrame f = frame_with(1.0, 0.0, 0.0);
  f.der_outputs["g"] = Vec2(0.3, 0.0);
  const auto res = controller_step(st, f, model, devices, aggs, params, in);
  const Vec2 xbar = res.state.xbar.at("g");
  const auto& cmds = res.member_commands.at("g");
  CHECK(cmds.at("locked") == Vec2(0.25, 0.0));
  CHECK((cmds.at("free") - (xbar - Vec2(0.25, 0.0))).norm() < 1e-8);
}

TEST_CASE("empty device set leaves only dual decay") {
  const auto model = toy_model();
  const auto params = toy_params();
  StepInputs in;
  std::vector<DeviceSpec> devices;
  std::vector<AggregationSpec> aggs;
  ControllerState st = ControllerState::initial(1, 1, devices, aggs);
  st.duals.gamma(0) = 1.0;

  const auto res =
      controller_step(st, frame_with(1.0, 0.0, 0.0), model, devices, aggs, params, in);
  CHECK(res.state.k == 1);
  CHECK(res.state.x.empty());
  // gamma+ = gamma + alpha (|v| - v_max - r_d gamma), still positive here.
  const double expected = 1.0 + params.alpha * (1.0 - params.v_max - params.r_d * 1.0);
  CHECK(res.state.duals.gamma(0) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("a failing sub-step leaves the caller's state untouched") {
  const auto model = toy_model();
  const auto params = toy_params();
  StepInputs in;
  DeviceSpec ghost{"ghost", Disk(-1, 1, 1), QuadraticCost{}, std::nullopt};
  std::vector<DeviceSpec> devices{ghost};
  std::vector<AggregationSpec> aggs;
  ControllerState st = ControllerState::initial(1, 1, devices, aggs);
  st.duals.mu(0) = 0.7;
  MeasurementFrame f = frame_with(1.0, 0.0, 0.0);
  f.der_outputs["ghost"] = Vec2::Zero();

  CHECK_THROWS_AS((void)controller_step(st, f, model, devices, aggs, params, in), Error);
  CHECK(st.duals.mu(0) == 0.7);
  CHECK(st.k == 0);
}

TEST_CASE("duals remain nonnegative through arbitrary measurement swings") {
  const auto model = toy_model();
  const auto params = toy_params();
  StepInputs in;
  in.s = 1;
  in.E = 0.01;
  std::vector<DeviceSpec> devices{
      DeviceSpec{"d", Disk(-0.5, 0.5, 0.6), QuadraticCost{1.0, 1.0, 0.2, 0.0}, std::nullopt}};
  std::vector<AggregationSpec> aggs;
  ControllerState st = ControllerState::initial(1, 1, devices, aggs);

  std::mt19937 rng(71);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (int k = 0; k < 200; ++k) {
    MeasurementFrame f = frame_with(1.0 + 0.2 * u(rng), 0.8 + u(rng), 0.5 * u(rng));
    f.der_outputs["d"] = st.x.at("d") + Vec2(0.05 * u(rng), 0.05 * u(rng));
    in.p0_set = Vec3(0.3 * u(rng), 0.0, 0.0);
    auto res = controller_step(st, f, model, devices, aggs, params, in);
    st = std::move(res.state);
    CHECK(st.duals.mu.minCoeff() >= 0.0);
    CHECK(st.duals.gamma.minCoeff() >= 0.0);
    CHECK(st.duals.zeta.minCoeff() >= 0.0);
    CHECK(st.duals.lambda.minCoeff() >= 0.0);
    CHECK(st.duals.nu.minCoeff() >= 0.0);
    CHECK(contains(devices[0].region, st.x.at("d"), 1e-12));
  }
}

TEST_CASE("exact-model iteration settles at the closed-form regularized optimum") {
  // Wide limits keep every dual at zero, so the saddle reduces to
  // min f(x) + r_p/2 ||x||^2 per device.
  const auto model = toy_model();
  auto params = toy_params();
  params.alpha = 0.05;
  params.v_min = 0.5;
  params.v_max = 1.5;
  params.i_max = VecX::Constant(1, 10.0);
  StepInputs in;  // s = 0

  const QuadraticCost cost{1.0, 1.0, 0.3, -0.1};
  SaddleProblem prob;
  prob.model = &model;
  prob.devices = {DeviceSpec{"d", Disk(-1.0, 1.0, 1.0), cost, std::nullopt}};
  prob.params = params;
  prob.inputs = in;

  ControllerState init = ControllerState::initial(1, 1, prob.devices, {});
  const ControllerState star = solve_saddle(prob, init, 1e-12, 200000);

  const double denom = 2.0 + params.r_p;  // curvature 2c + r_p
  const Vec2 expected(2.0 * cost.p_ref / denom, 2.0 * cost.q_ref / denom);
  CHECK((star.x.at("d") - expected).norm() < 1e-9);
  CHECK(star.duals.gamma.norm() == 0.0);
}

TEST_CASE("stepsize guard flags alpha above the bound") {
  const auto model = toy_model();
  auto params = toy_params();
  params.alpha_bound = 0.01;  // alpha = 0.2 exceeds it
  StepInputs in;
  std::vector<DeviceSpec> devices;
  std::vector<AggregationSpec> aggs;
  ControllerState st = ControllerState::initial(1, 1, devices, aggs);
  const auto res =
      controller_step(st, frame_with(1.0, 0.0, 0.0), model, devices, aggs, params, in);
  CHECK(res.stepsize_warning);
}

TEST_CASE("z stacking follows the canonical order") {
  ControllerState st;
  st.duals = DualState::zero(1, 1);
  st.duals.gamma(0) = 1.0;
  st.duals.nu = Vec3(2.0, 0.0, 0.0);
  st.duals.lambda = Vec3(3.0, 0.0, 0.0);
  st.duals.mu(0) = 4.0;
  st.duals.zeta(0) = 5.0;
  st.x["a"] = Vec2(10.0, 11.0);
  st.x["b"] = Vec2(12.0, 13.0);
  st.xbar["g"] = Vec2(20.0, 21.0);

  const std::vector<std::string> dev_ids{"a", "b"}, agg_ids{"g"};
  const VecX z = stack_z(st, dev_ids, agg_ids);
  REQUIRE(z.size() == 2 * 2 + 2 + 1 + 3 + 3 + 1 + 1);
  CHECK(z(0) == 10.0);
  CHECK(z(3) == 13.0);
  CHECK(z(4) == 20.0);
  CHECK(z(6) == 1.0);   // gamma
  CHECK(z(7) == 2.0);   // nu starts
  CHECK(z(10) == 3.0);  // lambda starts
  CHECK(z(13) == 4.0);  // mu
  CHECK(z(14) == 5.0);  // zeta
}
