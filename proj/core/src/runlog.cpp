#include "derflow/runlog.hpp"

#include <fstream>
#include <iomanip>

#include "json_util.hpp"

namespace derflow {

using nlohmann::json;
using namespace detail;

namespace detail {

json vec2_to_json(const Vec2& v) { return json::array({v.x(), v.y()}); }

Vec2 vec2_from_json(const json& j) { return Vec2(j[0].get<double>(), j[1].get<double>()); }

json vecx_to_json(const VecX& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

VecX vecx_from_json(const json& j) {
  VecX v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  return v;
}

json vec3_to_json(const Vec3& v) { return json::array({v(0), v(1), v(2)}); }

Vec3 vec3_from_json(const json& j) {
  return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

json vec2map_to_json(const std::map<std::string, Vec2>& m) {
  json out = json::object();
  for (const auto& [id, v] : m) out[id] = vec2_to_json(v);
  return out;
}

std::map<std::string, Vec2> vec2map_from_json(const json& j) {
  std::map<std::string, Vec2> out;
  for (const auto& [id, v] : j.items()) out[id] = vec2_from_json(v);
  return out;
}

json region_to_json(const OperatingRegion& region) {
  return std::visit(
      [](const auto& r) -> json {
        using T = std::decay_t<decltype(r)>;
        if constexpr (std::is_same_v<T, Disk>) {
          return {{"disk", {r.p_lo, r.p_hi, r.r}}};
        } else if constexpr (std::is_same_v<T, Interval>) {
          return {{"interval", {r.p_lo, r.p_hi}}};
        } else if constexpr (std::is_same_v<T, Discrete>) {
          json pts = json::array();
          for (const auto& p : r.points) pts.push_back(vec2_to_json(p));
          return {{"discrete", pts}};
        } else if constexpr (std::is_same_v<T, DiskIntervalSum>) {
          return {{"disk_interval_sum", {r.p_lo, r.p_hi, r.r, r.a, r.b}}};
        } else if constexpr (std::is_same_v<T, Singleton>) {
          return {{"singleton", vec2_to_json(r.point)}};
        } else {
          json pts = json::array();
          for (const auto& p : r.vertices) pts.push_back(vec2_to_json(p));
          return {{"polygon", pts}};
        }
      },
      region);
}

OperatingRegion region_from_json(const json& j) {
  if (j.contains("disk")) {
    const auto& a = j["disk"];
    return Disk(a[0].get<double>(), a[1].get<double>(), a[2].get<double>());
  }
  if (j.contains("interval")) {
    const auto& a = j["interval"];
    return Interval(a[0].get<double>(), a[1].get<double>());
  }
  if (j.contains("discrete")) {
    std::vector<Vec2> pts;
    for (const auto& p : j["discrete"]) pts.push_back(vec2_from_json(p));
    return Discrete(std::move(pts));
  }
  if (j.contains("disk_interval_sum")) {
    const auto& a = j["disk_interval_sum"];
    return DiskIntervalSum(a[0].get<double>(), a[1].get<double>(), a[2].get<double>(),
                           a[3].get<double>(), a[4].get<double>());
  }
  if (j.contains("singleton")) return Singleton{vec2_from_json(j["singleton"])};
  if (j.contains("polygon")) {
    std::vector<Vec2> pts;
    for (const auto& p : j["polygon"]) pts.push_back(vec2_from_json(p));
    return ConvexPolygon{std::move(pts)};
  }
  throw ScenarioError("unknown region spec: " + j.dump());
}

json cost_to_json(const QuadraticCost& c) {
  return {{"c_p", c.c_p}, {"c_q", c.c_q}, {"p_ref", c.p_ref}, {"q_ref", c.q_ref}};
}

QuadraticCost cost_from_json(const json& j) {
  QuadraticCost c;
  c.c_p = j.value("c_p", 0.0);
  c.c_q = j.value("c_q", 0.0);
  c.p_ref = j.value("p_ref", 0.0);
  c.q_ref = j.value("q_ref", 0.0);
  return c;
}

json device_spec_to_json(const DeviceSpec& d) {
  json j{{"id", d.id}, {"region", region_to_json(d.region)}, {"cost", cost_to_json(d.cost)}};
  if (d.discrete) j["discrete"] = region_to_json(OperatingRegion{*d.discrete})["discrete"];
  return j;
}

DeviceSpec device_spec_from_json(const json& j) {
  DeviceSpec d{j.at("id").get<std::string>(), region_from_json(j.at("region")),
               cost_from_json(j.at("cost")), std::nullopt};
  if (j.contains("discrete")) {
    std::vector<Vec2> pts;
    for (const auto& p : j["discrete"]) pts.push_back(vec2_from_json(p));
    d.discrete = Discrete(std::move(pts));
  }
  return d;
}

json aggregation_spec_to_json(const AggregationSpec& a) {
  json members = json::array();
  for (std::size_t i = 0; i < a.members.size(); ++i) {
    json m{{"id", a.member_ids[i]},
           {"region", region_to_json(a.members[i].region)},
           {"cost", cost_to_json(a.members[i].cost)}};
    if (a.member_discrete[i])
      m["discrete"] = region_to_json(OperatingRegion{*a.member_discrete[i]})["discrete"];
    members.push_back(std::move(m));
  }
  return {{"id", a.id},
          {"members", members},
          {"folded", region_to_json(a.folded)},
          {"disagg_tol", a.disagg_tol},
          {"disagg_max_iter", a.disagg_max_iter}};
}

AggregationSpec aggregation_spec_from_json(const json& j) {
  AggregationSpec a;
  a.id = j.at("id").get<std::string>();
  for (const auto& m : j.at("members")) {
    a.member_ids.push_back(m.at("id").get<std::string>());
    a.members.push_back(Member{region_from_json(m.at("region")), cost_from_json(m.at("cost"))});
    if (m.contains("discrete")) {
      std::vector<Vec2> pts;
      for (const auto& p : m["discrete"]) pts.push_back(vec2_from_json(p));
      a.member_discrete.emplace_back(Discrete(std::move(pts)));
    } else {
      a.member_discrete.emplace_back(std::nullopt);
    }
  }
  a.folded = region_from_json(j.at("folded"));
  a.disagg_tol = j.value("disagg_tol", 1e-8);
  a.disagg_max_iter = j.value("disagg_max_iter", 5000);
  return a;
}

json dual_state_to_json(const DualState& d) {
  return {{"mu", vecx_to_json(d.mu)},   {"gamma", vecx_to_json(d.gamma)},
          {"zeta", vecx_to_json(d.zeta)}, {"lambda", vec3_to_json(d.lambda)},
          {"nu", vec3_to_json(d.nu)}};
}

DualState dual_state_from_json(const json& j) {
  DualState d;
  d.mu = vecx_from_json(j.at("mu"));
  d.gamma = vecx_from_json(j.at("gamma"));
  d.zeta = vecx_from_json(j.at("zeta"));
  d.lambda = vec3_from_json(j.at("lambda"));
  d.nu = vec3_from_json(j.at("nu"));
  return d;
}

}  // namespace detail

namespace {

json step_inputs_to_json(const StepInputs& in) {
  return {{"p0_set", vec3_to_json(in.p0_set)}, {"E", in.E}, {"s", in.s}};
}

StepInputs step_inputs_from_json(const json& j) {
  StepInputs in;
  in.p0_set = vec3_from_json(j.at("p0_set"));
  in.E = j.at("E").get<double>();
  in.s = j.at("s").get<int>();
  return in;
}

json params_to_json(const ControllerParams& p) {
  return {{"alpha", p.alpha},   {"r_p", p.r_p},     {"r_d", p.r_d},
          {"v_min", p.v_min},   {"v_max", p.v_max}, {"i_max", vecx_to_json(p.i_max)},
          {"h", p.h},           {"alpha_bound", p.alpha_bound}};
}

ControllerParams params_from_json(const json& j) {
  ControllerParams p;
  p.alpha = j.at("alpha").get<double>();
  p.r_p = j.at("r_p").get<double>();
  p.r_d = j.at("r_d").get<double>();
  p.v_min = j.at("v_min").get<double>();
  p.v_max = j.at("v_max").get<double>();
  p.i_max = vecx_from_json(j.at("i_max"));
  p.h = j.at("h").get<double>();
  p.alpha_bound = j.value("alpha_bound", 0.0);
  return p;
}

}  // namespace

void RunLog::write_jsonl(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot open run log for writing: " + path.string());
  out << std::setprecision(17);

  json h{{"type", "header"},
         {"scenario", header.scenario_name},
         {"device_ids", header.device_ids},
         {"aggregation_ids", header.aggregation_ids},
         {"model", header.model_json},
         {"params", params_to_json(header.params)},
         {"h", header.h},
         {"seed", header.seed},
         {"planned_steps", header.planned_steps}};
  out << h.dump() << '\n';

  for (const auto& rec : steps) {
    json members = json::object();
    for (const auto& [agg, cmds] : rec.member_commands) members[agg] = vec2map_to_json(cmds);
    json disagg = json::object();
    for (const auto& [agg, d] : rec.disagg)
      disagg[agg] = {{"gap", d.gap}, {"iterations", d.iterations}, {"converged", d.converged}};
    json devices = json::array();
    for (const auto& d : rec.problem.devices) devices.push_back(device_spec_to_json(d));
    json aggs = json::array();
    for (const auto& a : rec.problem.aggregations) aggs.push_back(aggregation_spec_to_json(a));

    json s{{"type", "step"},
           {"k", rec.k},
           {"t", rec.t},
           {"x_pre", vec2map_to_json(rec.x_pre)},
           {"xbar_pre", vec2map_to_json(rec.xbar_pre)},
           {"xi_pre", vec2map_to_json(rec.xi_pre)},
           {"duals_pre", dual_state_to_json(rec.duals_pre)},
           {"v_meas", vecx_to_json(rec.v_meas)},
           {"iL_meas", vecx_to_json(rec.iL_meas)},
           {"p0_meas", vec3_to_json(rec.p0_meas)},
           {"der_meas", vec2map_to_json(rec.der_meas)},
           {"v_true", vecx_to_json(rec.v_true)},
           {"iL_true", vecx_to_json(rec.iL_true)},
           {"p0_true", vec3_to_json(rec.p0_true)},
           {"v_pred", vecx_to_json(rec.v_pred)},
           {"iL_pred", vecx_to_json(rec.iL_pred)},
           {"p0_pred", vec3_to_json(rec.p0_pred)},
           {"commands", vec2map_to_json(rec.commands)},
           {"member_commands", members},
           {"disagg", disagg},
           {"devices", devices},
           {"aggregations", aggs},
           {"inputs", step_inputs_to_json(rec.problem.inputs)},
           {"stepsize_warning", rec.stepsize_warning}};
    out << s.dump() << '\n';
  }

  json f{{"type", "footer"},
         {"completed", completed},
         {"abort_reason", abort_reason},
         {"x_final", vec2map_to_json(x_final)},
         {"xbar_final", vec2map_to_json(xbar_final)},
         {"duals_final", dual_state_to_json(duals_final)}};
  out << f.dump() << '\n';
}

RunLog RunLog::read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open run log: " + path.string());
  RunLog log;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line);
    const std::string type = j.at("type").get<std::string>();
    if (type == "header") {
      log.header.scenario_name = j.at("scenario").get<std::string>();
      log.header.device_ids = j.at("device_ids").get<std::vector<std::string>>();
      log.header.aggregation_ids = j.at("aggregation_ids").get<std::vector<std::string>>();
      log.header.model_json = j.at("model").get<std::string>();
      log.header.params = params_from_json(j.at("params"));
      log.header.h = j.at("h").get<double>();
      log.header.seed = j.at("seed").get<std::uint64_t>();
      log.header.planned_steps = j.at("planned_steps").get<std::uint64_t>();
    } else if (type == "step") {
      StepRecord rec;
      rec.k = j.at("k").get<std::uint64_t>();
      rec.t = j.at("t").get<double>();
      rec.x_pre = vec2map_from_json(j.at("x_pre"));
      rec.xbar_pre = vec2map_from_json(j.at("xbar_pre"));
      rec.xi_pre = vec2map_from_json(j.at("xi_pre"));
      rec.duals_pre = dual_state_from_json(j.at("duals_pre"));
      rec.v_meas = vecx_from_json(j.at("v_meas"));
      rec.iL_meas = vecx_from_json(j.at("iL_meas"));
      rec.p0_meas = vec3_from_json(j.at("p0_meas"));
      rec.der_meas = vec2map_from_json(j.at("der_meas"));
      rec.v_true = vecx_from_json(j.at("v_true"));
      rec.iL_true = vecx_from_json(j.at("iL_true"));
      rec.p0_true = vec3_from_json(j.at("p0_true"));
      rec.v_pred = vecx_from_json(j.at("v_pred"));
      rec.iL_pred = vecx_from_json(j.at("iL_pred"));
      rec.p0_pred = vec3_from_json(j.at("p0_pred"));
      rec.commands = vec2map_from_json(j.at("commands"));
      for (const auto& [agg, cmds] : j.at("member_commands").items())
        rec.member_commands[agg] = vec2map_from_json(cmds);
      for (const auto& [agg, d] : j.at("disagg").items())
        rec.disagg[agg] = AggregationDiag{d.at("gap").get<double>(),
                                          d.at("iterations").get<int>(),
                                          d.at("converged").get<bool>()};
      for (const auto& d : j.at("devices")) rec.problem.devices.push_back(device_spec_from_json(d));
      for (const auto& a : j.at("aggregations"))
        rec.problem.aggregations.push_back(aggregation_spec_from_json(a));
      rec.problem.inputs = step_inputs_from_json(j.at("inputs"));
      rec.stepsize_warning = j.at("stepsize_warning").get<bool>();
      log.steps.push_back(std::move(rec));
    } else if (type == "footer") {
      log.completed = j.at("completed").get<bool>();
      log.abort_reason = j.at("abort_reason").get<std::string>();
      log.x_final = vec2map_from_json(j.at("x_final"));
      log.xbar_final = vec2map_from_json(j.at("xbar_final"));
      log.duals_final = dual_state_from_json(j.at("duals_final"));
    }
  }
  return log;
}

void RunLog::write_summary_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot open summary for writing: " + path.string());
  out << std::setprecision(10);
  out << "k,t,p0_a,p0_b,p0_c,p0_set_a,p0_set_b,p0_set_c,tracking_err,max_v,min_v,"
         "max_iL_ratio,mu_norm,gamma_norm,zeta_norm,lambda_norm,nu_norm\n";
  for (const auto& rec : steps) {
    const auto& in = rec.problem.inputs;
    const double track =
        in.s ? (rec.p0_true - in.p0_set).lpNorm<Eigen::Infinity>() : 0.0;
    double ratio = 0.0;
    for (Eigen::Index i = 0; i < rec.iL_true.size(); ++i) {
      const double cap = header.params.i_max(i);
      if (cap > 0.0) ratio = std::max(ratio, rec.iL_true(i) / cap);
    }
    out << rec.k << ',' << rec.t << ',' << rec.p0_true(0) << ',' << rec.p0_true(1) << ','
        << rec.p0_true(2) << ',' << in.p0_set(0) << ',' << in.p0_set(1) << ',' << in.p0_set(2)
        << ',' << track << ',' << (rec.v_true.size() ? rec.v_true.maxCoeff() : 0.0) << ','
        << (rec.v_true.size() ? rec.v_true.minCoeff() : 0.0) << ',' << ratio << ','
        << rec.duals_pre.mu.norm() << ',' << rec.duals_pre.gamma.norm() << ','
        << rec.duals_pre.zeta.norm() << ',' << rec.duals_pre.lambda.norm() << ','
        << rec.duals_pre.nu.norm() << '\n';
  }
}

}  // namespace derflow
