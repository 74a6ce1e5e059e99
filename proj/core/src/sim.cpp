#include "derflow/sim.hpp"

#include <algorithm>
#include <cmath>

namespace derflow {

namespace {

constexpr double kSecondsPerHour = 3600.0;

std::vector<double> admissible_ev_levels(const DeviceConfig& d, double charged, double t) {
  const double remaining = d.target_energy - d.initial_energy - charged;
  if (remaining <= 0.0) return {0.0};

  const double time_left_h = std::max(d.deadline_s - t, 0.0) / kSecondsPerHour;
  const double max_level = d.levels.back();
  double floor = 0.0;
  if (time_left_h <= 0.0) {
    floor = max_level;
  } else {
    floor = std::min(remaining / time_left_h, max_level);
  }
  std::vector<double> out;
  if (d.allow_zero && floor <= 0.0) out.push_back(0.0);
  for (const double l : d.levels)
    if (l >= floor - 1e-12 && l > 0.0) out.push_back(l);
  if (out.empty()) out.push_back(max_level);
  return out;
}

}  // namespace

Engine::Engine(Scenario sc) : sc_(std::move(sc)), rng_(sc_.seed) {
  // Delta incidence needs every delta-connected device, aggregation, and load.
  std::vector<std::pair<int, PhaseConnection>> delta_points;
  auto add_coupling = [&](const std::string& id, int node, const std::string& conn_spec) {
    const Coupling c = Coupling::parse(node, conn_spec);
    for (const auto& term : c.delta_terms()) delta_points.push_back(term);
    couplings_[id] = c;
  };
  for (const auto& d : sc_.devices)
    if (!sc_.is_member(d.id)) {
      add_coupling(d.id, d.node, d.connection);
      standalone_ids_.push_back(d.id);
    }
  for (const auto& a : sc_.aggregations) {
    add_coupling(a.id, a.node, a.connection);
    agg_ids_.push_back(a.id);
  }
  std::vector<Coupling> load_couplings;
  for (const auto& l : sc_.loads) {
    const Coupling c = Coupling::parse(l.node, l.connection);
    for (const auto& term : c.delta_terms()) delta_points.push_back(term);
    load_couplings.push_back(c);
  }
  std::sort(standalone_ids_.begin(), standalone_ids_.end());
  std::sort(agg_ids_.begin(), agg_ids_.end());

  auto blocks = build_admittance(sc_.grid);
  auto delta = build_delta_incidence(sc_.grid, delta_points);
  solver_ = std::make_unique<PowerFlowSolver>(std::move(blocks), std::move(delta));

  // Initial device outputs: zero projected into the implementable set.
  for (const auto& d : sc_.devices) {
    DeviceRuntime rt;
    rt.soc = d.soc0;
    const OperatingRegion region0 = convex_region(d, rt, 0.0);
    Vec2 x0 = project(region0, Vec2::Zero());
    if (const auto disc = discrete_set(d, rt, 0.0)) x0 = project(OperatingRegion{*disc}, x0);
    rt.output = x0;
    rt.target = x0;
    runtime_[d.id] = rt;
  }

  // Linearize once around the initial operating point.
  std::vector<LinearizePoint> points;
  for (const auto& id : standalone_ids_)
    points.push_back({id, couplings_.at(id), runtime_.at(id).output, false});
  for (const auto& a : sc_.aggregations) {
    Vec2 base = Vec2::Zero();
    for (const auto& m : a.members) base += runtime_.at(m).output;
    points.push_back({a.id, couplings_.at(a.id), base, true});
  }
  model_ = linearize(*solver_, sc_.grid, points, assemble_injections(0.0), sc_.sets,
                     sc_.grid.slack_voltage, sc_.sensitivity_step);

  params_.alpha = sc_.alpha;
  params_.r_p = sc_.r_p;
  params_.r_d = sc_.r_d;
  params_.v_min = sc_.v_min;
  params_.v_max = sc_.v_max;
  params_.i_max = sc_.i_max;
  params_.h = sc_.h;
  double L0 = 0.0;
  for (const auto& d : sc_.devices) L0 = std::max(L0, cost_at(d, 0.0).curvature());
  params_.alpha_bound = max_stepsize(params_.r_p, params_.r_d, L0, model_.gain_bound());
}

OperatingRegion Engine::convex_region(const DeviceConfig& d, const DeviceRuntime& rt,
                                      double t) const {
  switch (d.type) {
    case DeviceConfig::Type::pv: {
      const double pav = std::clamp(d.available.at(sc_.traces, t), 0.0, d.rating);
      return Disk(0.0, pav, d.rating);
    }
    case DeviceConfig::Type::battery: {
      const double h_hours = sc_.h / kSecondsPerHour;
      double p_hi = std::min(d.p_max, rt.soc / h_hours);
      double p_lo = std::max(-d.p_max, -(d.capacity - rt.soc) / h_hours);
      p_hi = std::clamp(p_hi, -d.rating, d.rating);
      p_lo = std::clamp(p_lo, -d.rating, p_hi);
      return Disk(p_lo, p_hi, d.rating);
    }
    case DeviceConfig::Type::ev: {
      const auto levels = admissible_ev_levels(d, rt.charged, t);
      std::vector<Vec2> pts;
      pts.reserve(levels.size());
      for (const double l : levels) pts.emplace_back(-l, 0.0);
      return convex_hull(Discrete(std::move(pts)));
    }
    case DeviceConfig::Type::generic:
      return *d.region;
  }
  throw Error("unreachable device type");
}

std::optional<Discrete> Engine::discrete_set(const DeviceConfig& d, const DeviceRuntime& rt,
                                             double t) const {
  if (d.type == DeviceConfig::Type::ev) {
    const auto levels = admissible_ev_levels(d, rt.charged, t);
    std::vector<Vec2> pts;
    pts.reserve(levels.size());
    for (const double l : levels) pts.emplace_back(-l, 0.0);
    return Discrete(std::move(pts));
  }
  if (d.type == DeviceConfig::Type::generic && d.discrete) return d.discrete;
  return std::nullopt;
}

QuadraticCost Engine::cost_at(const DeviceConfig& d, double t) const {
  QuadraticCost c;
  c.c_p = d.c_p;
  c.c_q = d.c_q;
  switch (d.type) {
    case DeviceConfig::Type::pv:
      c.p_ref = std::clamp(d.available.at(sc_.traces, t), 0.0, d.rating);
      break;
    case DeviceConfig::Type::battery:
      break;  // references at zero: idle battery preferred
    case DeviceConfig::Type::ev:
      c.p_ref = -d.levels.back();  // pull toward the maximum charging rate
      break;
    case DeviceConfig::Type::generic:
      c.p_ref = d.p_ref.at(sc_.traces, t);
      c.q_ref = d.q_ref.at(sc_.traces, t);
      break;
  }
  return c;
}

DeviceSpec Engine::device_spec(const DeviceConfig& d, const DeviceRuntime& rt, double t) const {
  return DeviceSpec{d.id, convex_region(d, rt, t), cost_at(d, t), discrete_set(d, rt, t)};
}

AggregationSpec Engine::aggregation_spec(const AggregationConfig& a, double t) const {
  AggregationSpec spec;
  spec.id = a.id;
  spec.disagg_tol = sc_.disagg_tol;
  spec.disagg_max_iter = sc_.disagg_max_iter;

  std::vector<OperatingRegion> foldable;
  for (const auto& mid : a.members) {
    const auto& d = sc_.device(mid);
    const auto& rt = runtime_.at(mid);
    const OperatingRegion region = convex_region(d, rt, t);
    spec.member_ids.push_back(mid);
    spec.members.push_back(Member{region, cost_at(d, t)});
    spec.member_discrete.push_back(discrete_set(d, rt, t));

    if (const auto* s = std::get_if<Singleton>(&region)) {
      if (s->point.y() != 0.0)
        throw ScenarioError("aggregation " + a.id + ": cannot fold a locked member with Q != 0");
      foldable.push_back(Interval(s->point.x(), s->point.x()));
    } else {
      foldable.push_back(region);
    }
  }
  spec.folded = fold_aggregate(foldable);
  return spec;
}

StepInputs Engine::step_inputs(double t) const {
  StepInputs in;
  in.s = sc_.tracking.s.at(sc_.traces, t) >= 0.5 ? 1 : 0;
  for (int p = 0; p < 3; ++p) in.p0_set(p) = sc_.tracking.p0_set[p].at(sc_.traces, t);
  in.E = sc_.tracking.band.at(sc_.traces, t);
  return in;
}

ProblemSnapshot Engine::snapshot(double t) const {
  ProblemSnapshot snap;
  for (const auto& id : standalone_ids_)
    snap.devices.push_back(device_spec(sc_.device(id), runtime_.at(id), t));
  for (const auto& a : sc_.aggregations) snap.aggregations.push_back(aggregation_spec(a, t));
  snap.inputs = step_inputs(t);
  return snap;
}

InjectionSpec Engine::assemble_injections(double t) const {
  const auto& idx = solver_->blocks().phase_index;
  const auto& delta = solver_->delta();
  InjectionSpec inj = InjectionSpec::zero(idx.size());

  for (const auto& l : sc_.loads) {
    const Vec2 consumption(l.p.at(sc_.traces, t), l.q.at(sc_.traces, t));
    add_injection(inj, idx, delta, Coupling::parse(l.node, l.connection), Vec2(-consumption));
  }
  for (const auto& id : standalone_ids_)
    add_injection(inj, idx, delta, couplings_.at(id), runtime_.at(id).output);
  for (const auto& a : sc_.aggregations) {
    Vec2 total = Vec2::Zero();
    for (const auto& m : a.members) total += runtime_.at(m).output;
    add_injection(inj, idx, delta, couplings_.at(a.id), total);
  }
  return inj;
}

double Engine::gauss(double std_dev) {
  if (std_dev <= 0.0) return 0.0;
  // Box-Muller on the raw engine keeps the stream reproducible across
  // standard libraries; samples are clamped to +-4 sigma (bounded noise).
  const double u1 = std::max(std::uniform_real_distribution<double>(0.0, 1.0)(rng_), 1e-300);
  const double u2 = std::uniform_real_distribution<double>(0.0, 1.0)(rng_);
  const double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  return std_dev * std::clamp(z, -4.0, 4.0);
}

RunLog Engine::run() {
  const auto& idx = solver_->blocks().phase_index;
  const std::uint64_t K = static_cast<std::uint64_t>(std::llround(sc_.duration / sc_.h));

  RunLog log;
  log.header.scenario_name = sc_.name;
  log.header.device_ids = standalone_ids_;
  log.header.aggregation_ids = agg_ids_;
  log.header.model_json = model_.to_json_text();
  log.header.params = params_;
  log.header.h = sc_.h;
  log.header.seed = sc_.seed;
  log.header.planned_steps = K;

  ProblemSnapshot snap0 = snapshot(0.0);
  ControllerState state = ControllerState::initial(
      static_cast<int>(sc_.sets.v_points.size()), static_cast<int>(sc_.sets.i_lines.size()),
      snap0.devices, snap0.aggregations);

  for (std::uint64_t k = 0; k < K; ++k) {
    const double t = k * sc_.h;

    // Plant phase: deliver pending commands (latest wins), actuate, integrate
    // device internal states.
    if (!sc_.exact_model_plant) {
      for (auto& [id, rt] : runtime_) {
        std::uint64_t best_step = 0;
        bool found = false;
        for (const auto& [step, cmd] : rt.pending) {
          if (step <= k && (!found || step >= best_step)) {
            best_step = step;
            rt.target = cmd;
            found = true;
          }
        }
        std::erase_if(rt.pending, [&](const auto& p) { return p.first <= k; });
        if (k > 0) {
          rt.output = actuate(rt.target, rt.output, sc_.tau, sc_.h);
          const auto& cfg = sc_.device(id);
          if (cfg.type == DeviceConfig::Type::battery) {
            rt.soc = std::clamp(rt.soc - rt.output.x() * sc_.h / kSecondsPerHour, 0.0,
                                cfg.capacity);
          } else if (cfg.type == DeviceConfig::Type::ev) {
            rt.charged += std::max(0.0, -rt.output.x()) * sc_.h / kSecondsPerHour;
          }
        }
      }
    } else {
      for (const auto& id : standalone_ids_) runtime_.at(id).output = state.x.at(id);
    }

    StepRecord rec;
    rec.k = k;
    rec.t = t;
    rec.x_pre = state.x;
    rec.xbar_pre = state.xbar;
    rec.xi_pre = state.xi;
    rec.duals_pre = state.duals;
    rec.problem = snapshot(t);

    // Plant solve and measurement synthesis.
    MeasurementFrame frame;
    frame.t = t;
    if (sc_.exact_model_plant) {
      const Prediction p = model_.predict(state.x, state.xbar);
      rec.v_true = p.v_mag;
      rec.iL_true = p.i_mag;
      rec.p0_true = p.p0;
      frame.v_mag = p.v_mag;
      frame.iL_mag = p.i_mag;
      frame.p0 = p.p0;
      for (const auto& [id, x] : state.x) frame.der_outputs[id] = x;
      for (const auto& [id, x] : state.xbar) frame.der_outputs[id] = x;
    } else {
      PowerFlowSolution sol;
      try {
        sol = solver_->solve(assemble_injections(t), sc_.grid.slack_voltage);
      } catch (const Error& e) {
        log.completed = false;
        log.abort_reason = std::string("plant solve failed at k=") + std::to_string(k) + ": " +
                           e.what();
        log.x_final = state.x;
        log.xbar_final = state.xbar;
        log.duals_final = state.duals;
        return log;
      }
      const Prediction truth = measure_solution(sol, sc_.grid, idx, sc_.grid.slack_voltage,
                                                sc_.sets);
      rec.v_true = truth.v_mag;
      rec.iL_true = truth.i_mag;
      rec.p0_true = truth.p0;

      frame.v_mag = truth.v_mag;
      for (Eigen::Index i = 0; i < frame.v_mag.size(); ++i) frame.v_mag(i) += gauss(sc_.noise.v);
      frame.iL_mag = truth.i_mag;
      for (Eigen::Index i = 0; i < frame.iL_mag.size(); ++i) frame.iL_mag(i) += gauss(sc_.noise.i);
      frame.p0 = truth.p0;
      for (int p = 0; p < 3; ++p) frame.p0(p) += gauss(sc_.noise.p0);

      for (const auto& id : standalone_ids_) {
        Vec2 out = runtime_.at(id).output;
        out.x() += gauss(sc_.noise.x);
        out.y() += gauss(sc_.noise.x);
        frame.der_outputs[id] = out;
      }
      for (const auto& a : sc_.aggregations) {
        Vec2 total = Vec2::Zero();
        for (const auto& m : a.members) total += runtime_.at(m).output;
        total.x() += gauss(sc_.noise.x);
        total.y() += gauss(sc_.noise.x);
        frame.der_outputs[a.id] = total;
      }
    }
    rec.v_meas = frame.v_mag;
    rec.iL_meas = frame.iL_mag;
    rec.p0_meas = frame.p0;
    rec.der_meas = frame.der_outputs;

    const Prediction pred = model_.predict(state.x, state.xbar);
    rec.v_pred = pred.v_mag;
    rec.iL_pred = pred.i_mag;
    rec.p0_pred = pred.p0;

    // Controller step (atomic: state replaced only on success).
    StepResult res = controller_step(state, frame, model_, rec.problem.devices,
                                     rec.problem.aggregations, params_, rec.problem.inputs);
    state = std::move(res.state);
    rec.commands = res.commands;
    rec.member_commands = res.member_commands;
    rec.disagg = res.disagg;
    rec.stepsize_warning = res.stepsize_warning;

    // Dispatch commands over the communication links.
    const std::uint64_t delivery = k + 1 + static_cast<std::uint64_t>(sc_.link_delay_steps);
    for (const auto& [id, cmd] : res.commands) runtime_.at(id).pending.emplace_back(delivery, cmd);
    for (const auto& [agg, cmds] : res.member_commands)
      for (const auto& [mid, cmd] : cmds) runtime_.at(mid).pending.emplace_back(delivery, cmd);

    log.steps.push_back(std::move(rec));
  }

  log.completed = true;
  log.x_final = state.x;
  log.xbar_final = state.xbar;
  log.duals_final = state.duals;
  return log;
}

}  // namespace derflow
