#include "derflow/analysis.hpp"

#include <algorithm>
#include <cmath>

namespace derflow {

double contraction(double alpha, double r_p, double r_d, double L, double G) {
  if (alpha < 0.0 || r_p <= 0.0 || r_d <= 0.0 || L < 0.0 || G < 0.0)
    throw Error("contraction: parameters out of range");
  const double k1 = L + r_p + 5.0 * G;
  const double k2 = G + r_d;
  const double rad =
      1.0 - 2.0 * alpha * std::min(r_p, r_d) + alpha * alpha * k1 * k1 + 5.0 * alpha * alpha * k2 * k2;
  if (rad < 0.0) throw Error("contraction: negative radicand");
  return std::sqrt(rad);
}

double max_stepsize(double r_p, double r_d, double L, double G) {
  if (r_p <= 0.0 || r_d <= 0.0 || L < 0.0 || G < 0.0)
    throw Error("max_stepsize: parameters out of range");
  const double k1 = L + r_p + 5.0 * G;
  const double k2 = G + r_d;
  return std::min(r_p, r_d) / (k1 * k1 + 5.0 * k2 * k2);
}

std::vector<double> trajectory_bound(double c, double z0_gap, double alpha,
                                     std::span<const PerStepError> per_step) {
  if (!(c > 0.0 && c < 1.0)) throw Error("trajectory_bound: c must lie in (0, 1)");
  std::vector<double> bounds;
  bounds.reserve(per_step.size() + 1);
  double b = z0_gap;
  bounds.push_back(b);
  for (const auto& ek : per_step) {
    b = c * b + ek.e_x + alpha * ek.e + ek.sigma;
    bounds.push_back(b);
  }
  return bounds;
}

double ErrorBudget::combine(double e_x, double e_v, double e_0, double e_L, double L,
                            double r_p) {
  const double lx = (L + r_p) * e_x;
  return std::sqrt(lx * lx + 2.0 * e_v * e_v + 2.0 * e_0 * e_0 + e_L * e_L);
}

namespace {

std::vector<DeviceSpec> strip_discrete(std::vector<DeviceSpec> devices) {
  for (auto& d : devices) d.discrete.reset();
  return devices;
}

std::vector<AggregationSpec> tighten(std::vector<AggregationSpec> aggs, double tol) {
  for (auto& a : aggs) {
    for (auto& d : a.member_discrete) d.reset();
    a.disagg_tol = std::min(a.disagg_tol, tol);
    a.disagg_max_iter = std::max(a.disagg_max_iter, 100000);
  }
  return aggs;
}

MeasurementFrame exact_frame(const ControllerState& st, const SensitivityModel& model,
                             double t) {
  MeasurementFrame f;
  f.t = t;
  const Prediction p = model.predict(st.x, st.xbar);
  f.v_mag = p.v_mag;
  f.iL_mag = p.i_mag;
  f.p0 = p.p0;
  for (const auto& [id, x] : st.x) f.der_outputs[id] = x;
  for (const auto& [id, x] : st.xbar) f.der_outputs[id] = x;
  return f;
}

std::vector<std::string> sorted_ids(const std::map<std::string, Vec2>& m) {
  std::vector<std::string> ids;
  ids.reserve(m.size());
  for (const auto& [id, v] : m) ids.push_back(id);
  return ids;
}

}  // namespace

ControllerState solve_saddle(const SaddleProblem& problem, ControllerState init, double tol,
                             int max_iter) {
  const auto devices = strip_discrete(problem.devices);
  const auto aggs = tighten(problem.aggregations, 1e-12);
  const auto dev_ids = sorted_ids(init.x);
  const auto agg_ids = sorted_ids(init.xbar);

  ControllerState st = std::move(init);
  VecX z = stack_z(st, dev_ids, agg_ids);
  for (int it = 0; it < max_iter; ++it) {
    const MeasurementFrame f = exact_frame(st, *problem.model, 0.0);
    StepResult res = controller_step(st, f, *problem.model, devices, aggs, problem.params,
                                     problem.inputs);
    st = std::move(res.state);
    const VecX z_next = stack_z(st, dev_ids, agg_ids);
    const double move = (z_next - z).norm();
    z = z_next;
    if (move <= tol) return st;
  }
  throw DivergenceError("solve_saddle: no fixed point within the iteration budget", 0.0);
}

double estimate_cost_lipschitz(const RunLog& log) {
  double L = 0.0;
  for (const auto& rec : log.steps) {
    for (const auto& d : rec.problem.devices) L = std::max(L, d.cost.curvature());
    for (const auto& a : rec.problem.aggregations)
      for (const auto& m : a.members) L = std::max(L, m.cost.curvature());
  }
  return L;
}

RunReport measure_run(const RunLog& log, const MeasureOptions& opt) {
  if (log.steps.empty()) throw Error("measure_run: empty run log");
  const SensitivityModel model = SensitivityModel::from_json_text(log.header.model_json);

  RunReport report;
  report.constants.r_p = log.header.params.r_p;
  report.constants.r_d = log.header.params.r_d;
  report.constants.alpha = log.header.params.alpha;
  report.constants.G = model.gain_bound();
  report.constants.L =
      opt.lipschitz_override > 0.0 ? opt.lipschitz_override : estimate_cost_lipschitz(log);
  report.constants.c = contraction(report.constants.alpha, report.constants.r_p,
                                   report.constants.r_d, report.constants.L, report.constants.G);

  const auto& dev_ids = log.header.device_ids;
  const auto& agg_ids = log.header.aggregation_ids;
  const std::size_t K = log.steps.size();

  auto state_from_record = [&](const StepRecord& rec) {
    ControllerState st;
    st.duals = rec.duals_pre;
    st.x = rec.x_pre;
    st.xbar = rec.xbar_pre;
    st.xi = rec.xi_pre;
    for (const auto& [id, v] : rec.xbar_pre)
      st.member_setpoints[id] = {};
    return st;
  };

  // Per-step saddle references, warm-started along the trajectory.
  std::vector<VecX> stars(K);
  ControllerState star_state = state_from_record(log.steps.front());
  for (std::size_t k = 0; k < K; ++k) {
    const auto& rec = log.steps[k];
    SaddleProblem prob;
    prob.model = &model;
    prob.devices = rec.problem.devices;
    prob.aggregations = rec.problem.aggregations;
    prob.params = log.header.params;
    prob.inputs = rec.problem.inputs;
    star_state = solve_saddle(prob, std::move(star_state), opt.oracle_tol, opt.oracle_max_iter);
    stars[k] = stack_z(star_state, dev_ids, agg_ids);
  }

  report.steps.resize(K);
  std::vector<PerStepError> per_step(K);
  for (std::size_t k = 0; k < K; ++k) {
    const auto& rec = log.steps[k];
    auto& m = report.steps[k];

    // Realized error terms (model prediction and measurement at the iterate).
    double ex2 = 0.0;
    for (const auto& [id, x] : rec.x_pre) {
      const auto it = rec.der_meas.find(id);
      if (it != rec.der_meas.end()) ex2 += (x - it->second).squaredNorm();
    }
    for (const auto& [id, x] : rec.xbar_pre) {
      const auto it = rec.der_meas.find(id);
      if (it != rec.der_meas.end()) ex2 += (x - it->second).squaredNorm();
    }
    m.e_x = std::sqrt(ex2);
    m.e_v = (rec.v_pred - rec.v_meas).norm();
    m.e_L = (rec.iL_pred - rec.iL_meas).norm();
    m.e_0 = (rec.p0_pred - rec.p0_meas).norm();
    m.e = ErrorBudget::combine(m.e_x, m.e_v, m.e_0, m.e_L, report.constants.L,
                               report.constants.r_p);
    m.sigma = (k + 1 < K) ? (stars[k + 1] - stars[k]).norm() : 0.0;

    const ControllerState st = state_from_record(rec);
    m.gap = (stack_z(st, dev_ids, agg_ids) - stars[k]).norm();

    per_step[k] = PerStepError{m.e_x, m.e, m.sigma};
    report.budget.e_x = std::max(report.budget.e_x, m.e_x);
    report.budget.e_v = std::max(report.budget.e_v, m.e_v);
    report.budget.e_0 = std::max(report.budget.e_0, m.e_0);
    report.budget.e_L = std::max(report.budget.e_L, m.e_L);
    if (k + 1 < K) report.budget.sigma = std::max(report.budget.sigma, m.sigma);
  }
  report.budget.e = ErrorBudget::combine(report.budget.e_x, report.budget.e_v, report.budget.e_0,
                                         report.budget.e_L, report.constants.L,
                                         report.constants.r_p);
  report.budget.delta =
      report.budget.e_x + report.constants.alpha * report.budget.e + report.budget.sigma;

  report.z0_gap = report.steps.front().gap;
  if (report.constants.c < 1.0) {
    const auto bounds = trajectory_bound(report.constants.c, report.z0_gap,
                                         report.constants.alpha,
                                         std::span(per_step.data(), K - 1));
    for (std::size_t k = 0; k < K; ++k) {
      report.steps[k].bound = bounds[k];
      report.steps[k].within = report.steps[k].gap <= bounds[k] + 1e-12;
      report.all_within = report.all_within && report.steps[k].within;
    }
    report.asymptotic_bound = report.budget.delta / (1.0 - report.constants.c);
    const std::size_t tail =
        std::max<std::size_t>(1, static_cast<std::size_t>(opt.tail_fraction * K));
    double acc = 0.0;
    for (std::size_t k = K - tail; k < K; ++k) acc += report.steps[k].gap;
    report.tail_average_gap = acc / tail;
    report.tail_ok = report.tail_average_gap <= report.asymptotic_bound * 1.05;
  } else {
    report.all_within = false;
    report.tail_ok = false;
  }
  return report;
}

}  // namespace derflow
