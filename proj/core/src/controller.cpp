#include "derflow/controller.hpp"

#include <algorithm>

namespace derflow {

DualState DualState::zero(int n_v, int n_i) {
  DualState d;
  d.mu = VecX::Zero(n_v);
  d.gamma = VecX::Zero(n_v);
  d.zeta = VecX::Zero(n_i);
  return d;
}

VecX DualState::stacked() const {
  VecX out(gamma.size() + 3 + 3 + mu.size() + zeta.size());
  Eigen::Index at = 0;
  out.segment(at, gamma.size()) = gamma;
  at += gamma.size();
  out.segment(at, 3) = nu;
  at += 3;
  out.segment(at, 3) = lambda;
  at += 3;
  out.segment(at, mu.size()) = mu;
  at += mu.size();
  out.segment(at, zeta.size()) = zeta;
  return out;
}

ControllerState ControllerState::initial(int n_v, int n_i, std::span<const DeviceSpec> devices,
                                         std::span<const AggregationSpec> aggregations) {
  ControllerState st;
  st.duals = DualState::zero(n_v, n_i);
  for (const auto& d : devices) {
    st.x[d.id] = project(d.region, Vec2::Zero());
    if (d.discrete) st.err_acc[d.id] = ErrorAccumulator{};
  }
  for (const auto& a : aggregations) {
    st.xbar[a.id] = project(a.folded, Vec2::Zero());
    st.xi[a.id] = Vec2::Zero();
    st.member_setpoints[a.id] =
        std::vector<Vec2>(a.members.size(), Vec2::Zero());
    for (std::size_t i = 0; i < a.members.size(); ++i)
      if (a.member_discrete[i]) st.err_acc[a.id + "/" + a.member_ids[i]] = ErrorAccumulator{};
  }
  return st;
}

DualState dual_step(const DualState& duals, const MeasurementFrame& frame,
                    const ControllerParams& params, const StepInputs& in) {
  if (frame.v_mag.size() != duals.mu.size() || frame.iL_mag.size() != duals.zeta.size())
    throw Error("dual_step: measurement dimensions do not match the dual state");

  const double a = params.alpha;
  DualState next = duals;
  next.mu = (duals.mu + a * (params.v_min - frame.v_mag.array() - params.r_d * duals.mu.array()).matrix())
                .cwiseMax(0.0);
  next.gamma =
      (duals.gamma + a * (frame.v_mag.array() - params.v_max - params.r_d * duals.gamma.array()).matrix())
          .cwiseMax(0.0);
  next.zeta = (duals.zeta + a * (frame.iL_mag - params.i_max - params.r_d * duals.zeta)).cwiseMax(0.0);

  // Tracking terms gated by the service flag; the regularization keeps acting
  // so idle multipliers decay instead of freezing.
  const double s = static_cast<double>(in.s);
  const Vec3 up = s * (frame.p0 - in.p0_set - Vec3::Constant(in.E));
  const Vec3 dn = s * (in.p0_set - frame.p0 - Vec3::Constant(in.E));
  next.lambda = (duals.lambda + a * (up - params.r_d * duals.lambda)).cwiseMax(0.0);
  next.nu = (duals.nu + a * (dn - params.r_d * duals.nu)).cwiseMax(0.0);
  return next;
}

namespace {

Vec2 primal_direction(const Vec2& seed, const Vec2& cost_grad, const DualState& d,
                      const Mat2X& A, const Mat2X& B, const Eigen::Matrix<double, 3, 2>& M,
                      const ControllerParams& params, const StepInputs& in) {
  Vec2 g = cost_grad;
  g += static_cast<double>(in.s) * (M.transpose() * (d.lambda - d.nu));
  g += A.transpose() * (d.gamma - d.mu);
  g += B.transpose() * d.zeta;
  g += params.r_p * seed;
  return g;
}

}  // namespace

Vec2 device_step(const Vec2& measured, const DualState& duals_next,
                 const SensitivityModel& model, const DeviceSpec& dev,
                 const ControllerParams& params, const StepInputs& in) {
  const auto a_it = model.A.find(dev.id);
  if (a_it == model.A.end())
    throw Error("device_step: no sensitivity columns for device '" + dev.id + "'");
  const Vec2 g = primal_direction(measured, dev.cost.grad(measured), duals_next, a_it->second,
                                  model.B.at(dev.id), model.M.at(dev.id), params, in);
  return project(dev.region, Vec2(measured - params.alpha * g));
}

Vec2 aggregation_step(const Vec2& measured, const Vec2& xi_prev, const DualState& duals_next,
                      const SensitivityModel& model, const AggregationSpec& agg,
                      const ControllerParams& params, const StepInputs& in) {
  const auto a_it = model.Abar.find(agg.id);
  if (a_it == model.Abar.end())
    throw Error("aggregation_step: no sensitivity columns for aggregation '" + agg.id + "'");
  const Vec2 g = primal_direction(measured, Vec2(-xi_prev), duals_next, a_it->second,
                                  model.Bbar.at(agg.id), model.Mbar.at(agg.id), params, in);
  return project(agg.folded, Vec2(measured - params.alpha * g));
}

StepResult controller_step(const ControllerState& state, const MeasurementFrame& frame,
                           const SensitivityModel& model, std::span<const DeviceSpec> devices,
                           std::span<const AggregationSpec> aggregations,
                           const ControllerParams& params, const StepInputs& in) {
  StepResult out;
  out.state = state;
  out.state.k = state.k + 1;
  out.stepsize_warning = params.alpha_bound > 0.0 && params.alpha > params.alpha_bound;

  // S1: dual ascent from fresh measurements.
  out.state.duals = dual_step(state.duals, frame, params, in);

  // S2a: individually-controllable devices, seeded by measured outputs when
  // telemetry is present (previous command otherwise).
  for (const auto& dev : devices) {
    const auto meas_it = frame.der_outputs.find(dev.id);
    const Vec2 seed = (meas_it != frame.der_outputs.end())
                          ? meas_it->second
                          : state.x.at(dev.id);
    Vec2 x_next = device_step(seed, out.state.duals, model, dev, params, in);
    out.state.x[dev.id] = x_next;
    if (dev.discrete) {
      const auto acc_it = state.err_acc.find(dev.id);
      const ErrorAccumulator acc =
          acc_it != state.err_acc.end() ? acc_it->second : ErrorAccumulator{};
      const auto ed = error_diffusion_step(*dev.discrete, x_next, acc);
      out.state.err_acc[dev.id] = ed.acc;
      out.commands[dev.id] = ed.x_impl;
    } else {
      out.commands[dev.id] = x_next;
    }
  }

  // S2b: aggregations.
  for (const auto& agg : aggregations) {
    const auto meas_it = frame.der_outputs.find(agg.id);
    const Vec2 seed = (meas_it != frame.der_outputs.end())
                          ? meas_it->second
                          : state.xbar.at(agg.id);
    const Vec2 xi_prev = state.xi.at(agg.id);
    Vec2 xbar_next = aggregation_step(seed, xi_prev, out.state.duals, model, agg, params, in);

    // Theorem-1 interiority: nudge boundary points toward the region center.
    const double margin = 1e-6 * region_diameter(agg.folded);
    xbar_next = pull_to_interior(agg.folded, xbar_next, margin);

    const auto res =
        disaggregate(agg.members, xbar_next, xi_prev, agg.disagg_tol, agg.disagg_max_iter);
    out.state.xbar[agg.id] = xbar_next;
    out.state.xi[agg.id] = res.xi;
    out.state.member_setpoints[agg.id] = res.member_setpoints;
    out.disagg[agg.id] = AggregationDiag{res.gap, res.iterations, res.converged};

    auto& cmds = out.member_commands[agg.id];
    for (std::size_t i = 0; i < agg.members.size(); ++i) {
      const auto& mid = agg.member_ids[i];
      if (agg.member_discrete[i]) {
        const std::string key = agg.id + "/" + mid;
        const auto acc_it = state.err_acc.find(key);
        const ErrorAccumulator acc =
            acc_it != state.err_acc.end() ? acc_it->second : ErrorAccumulator{};
        const auto ed = error_diffusion_step(*agg.member_discrete[i], res.member_setpoints[i], acc);
        out.state.err_acc[key] = ed.acc;
        cmds[mid] = ed.x_impl;
      } else {
        cmds[mid] = res.member_setpoints[i];
      }
    }
  }

  return out;
}

VecX stack_z(const ControllerState& state, std::span<const std::string> device_ids,
             std::span<const std::string> aggregation_ids) {
  const VecX d = state.duals.stacked();
  VecX z(2 * static_cast<Eigen::Index>(device_ids.size()) +
         2 * static_cast<Eigen::Index>(aggregation_ids.size()) + d.size());
  Eigen::Index at = 0;
  for (const auto& id : device_ids) {
    z.segment(at, 2) = state.x.at(id);
    at += 2;
  }
  for (const auto& id : aggregation_ids) {
    z.segment(at, 2) = state.xbar.at(id);
    at += 2;
  }
  z.segment(at, d.size()) = d;
  return z;
}

}  // namespace derflow
