#include "derflow/scenario.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json_util.hpp"

namespace derflow {

using nlohmann::json;
using namespace detail;

namespace {

void reject_unknown(const json& obj, const std::set<std::string>& allowed,
                    const std::string& where) {
  for (const auto& [key, value] : obj.items())
    if (!allowed.count(key)) throw ScenarioError("unknown field '" + key + "' in " + where);
}

TraceRef parse_traceref(const json& j, double unit_scale, const std::string& where) {
  TraceRef tr;
  if (j.is_number()) {
    tr.constant = j.get<double>();
    tr.scale = unit_scale;
    return tr;
  }
  if (j.is_object()) {
    reject_unknown(j, {"constant", "column", "scale", "offset"}, where);
    tr.scale = j.value("scale", 1.0) * unit_scale;
    tr.offset = j.value("offset", 0.0) * unit_scale;
    if (j.contains("column"))
      tr.column = j["column"].get<std::string>();
    else
      tr.constant = j.value("constant", 0.0);
    return tr;
  }
  throw ScenarioError(where + ": expected a number or {column|constant, scale, offset}");
}

Phase parse_phase_letter(const std::string& s, const std::string& where) {
  if (s.size() != 1) throw ScenarioError(where + ": bad phase '" + s + "'");
  switch (s[0]) {
    case 'a': return Phase::a;
    case 'b': return Phase::b;
    case 'c': return Phase::c;
  }
  throw ScenarioError(where + ": bad phase '" + s + "'");
}

}  // namespace

const DeviceConfig& Scenario::device(const std::string& id) const {
  for (const auto& d : devices)
    if (d.id == id) return d;
  throw ScenarioError("unknown device id '" + id + "'");
}

bool Scenario::is_member(const std::string& id) const {
  for (const auto& a : aggregations)
    for (const auto& m : a.members)
      if (m == id) return true;
  return false;
}

Scenario parse_scenario(const std::string& json_text, const std::filesystem::path& csv_dir) {
  const json j = json::parse(json_text);
  reject_unknown(j,
                 {"name", "units", "grid", "traces", "measurements", "limits", "controller",
                  "tracking", "devices", "aggregations", "loads", "noise", "actuation_tau_s",
                  "link_delay_steps", "h_s", "duration_s", "seed", "plant", "sensitivity_step"},
                 "scenario");

  Scenario sc;
  sc.name = j.value("name", std::string("unnamed"));
  sc.grid = grid_from_json_text(j.at("grid").dump());

  const std::string units = j.value("units", std::string("per_unit"));
  if (units != "per_unit" && units != "si")
    throw ScenarioError("scenario.units must be 'per_unit' or 'si'");
  const double s_scale = (units == "si") ? 1.0 / sc.grid.s_base_va : 1.0;
  const double i_scale =
      (units == "si") ? sc.grid.v_base_v / sc.grid.s_base_va : 1.0;  // amps -> p.u.
  const double e_scale = s_scale;  // watt-hours -> p.u.-hours

  if (j.contains("traces")) {
    reject_unknown(j["traces"], {"csv"}, "scenario.traces");
    sc.traces = ingest_timeseries(csv_dir / j["traces"].at("csv").get<std::string>());
  }

  const auto& meas = j.at("measurements");
  reject_unknown(meas, {"voltages", "lines"}, "scenario.measurements");
  for (const auto& p : meas.at("voltages"))
    sc.sets.v_points.emplace_back(p[0].get<int>(),
                                  parse_phase_letter(p[1].get<std::string>(), "measurements"));
  if (meas.contains("lines"))
    for (const auto& p : meas["lines"])
      sc.sets.i_lines.emplace_back(p[0].get<std::string>(),
                                   parse_phase_letter(p[1].get<std::string>(), "measurements"));

  const auto& lim = j.at("limits");
  reject_unknown(lim, {"v_min", "v_max", "i_max"}, "scenario.limits");
  sc.v_min = lim.value("v_min", 0.95);
  sc.v_max = lim.value("v_max", 1.05);
  sc.i_max = VecX::Constant(static_cast<Eigen::Index>(sc.sets.i_lines.size()), 1e30);
  if (lim.contains("i_max")) {
    const auto& arr = lim["i_max"];
    if (arr.size() != sc.sets.i_lines.size())
      throw ScenarioError("limits.i_max length must match measurements.lines");
    for (std::size_t i = 0; i < arr.size(); ++i)
      sc.i_max(static_cast<Eigen::Index>(i)) = arr[i].get<double>() * i_scale;
  }

  const auto& ctl = j.at("controller");
  reject_unknown(ctl, {"alpha", "r_p", "r_d", "disagg_tol", "disagg_max_iter"},
                 "scenario.controller");
  sc.alpha = ctl.value("alpha", 0.2);
  sc.r_p = ctl.value("r_p", 1e-3);
  sc.r_d = ctl.value("r_d", 1e-4);
  sc.disagg_tol = ctl.value("disagg_tol", 1e-8);
  sc.disagg_max_iter = ctl.value("disagg_max_iter", 5000);

  if (j.contains("tracking")) {
    const auto& tr = j["tracking"];
    reject_unknown(tr, {"s", "p0_set", "band"}, "scenario.tracking");
    sc.tracking.s = parse_traceref(tr.value("s", json(0.0)), 1.0, "tracking.s");
    if (tr.contains("p0_set")) {
      const auto& arr = tr["p0_set"];
      if (arr.size() != 3) throw ScenarioError("tracking.p0_set needs three entries");
      for (int p = 0; p < 3; ++p)
        sc.tracking.p0_set[p] = parse_traceref(arr[p], s_scale, "tracking.p0_set");
    }
    sc.tracking.band = parse_traceref(tr.value("band", json(0.0)), s_scale, "tracking.band");
  }

  if (j.contains("devices")) {
    for (const auto& jd : j["devices"]) {
      reject_unknown(jd,
                     {"id", "node", "connection", "type", "rating", "available", "capacity_wh",
                      "soc0_wh", "p_max", "levels", "allow_zero", "battery_wh", "initial_wh",
                      "target_wh", "deadline_s", "region", "discrete", "cost"},
                     "scenario.devices[]");
      DeviceConfig d;
      d.id = jd.at("id").get<std::string>();
      d.node = jd.value("node", -1);
      d.connection = jd.value("connection", std::string());
      const std::string type = jd.value("type", std::string("generic"));

      if (type == "pv") {
        d.type = DeviceConfig::Type::pv;
        d.rating = jd.at("rating").get<double>() * s_scale;
        d.available = parse_traceref(jd.at("available"), s_scale, d.id + ".available");
        const auto& c = jd.at("cost");
        d.c_p = c[0].get<double>();
        d.c_q = c[1].get<double>();
      } else if (type == "battery") {
        d.type = DeviceConfig::Type::battery;
        d.rating = jd.at("rating").get<double>() * s_scale;
        d.capacity = jd.at("capacity_wh").get<double>() * e_scale;
        d.soc0 = jd.at("soc0_wh").get<double>() * e_scale;
        d.p_max = jd.value("p_max", 0.0) * s_scale;
        if (d.p_max <= 0.0) d.p_max = d.rating;
        const auto& c = jd.at("cost");
        d.c_p = c[0].get<double>();
        d.c_q = c[1].get<double>();
      } else if (type == "ev") {
        d.type = DeviceConfig::Type::ev;
        for (const auto& l : jd.at("levels")) d.levels.push_back(l.get<double>() * s_scale);
        std::sort(d.levels.begin(), d.levels.end());
        d.allow_zero = jd.value("allow_zero", true);
        d.initial_energy = jd.value("initial_wh", 0.0) * e_scale;
        d.target_energy = jd.at("target_wh").get<double>() * e_scale;
        d.deadline_s = jd.at("deadline_s").get<double>();
        const auto& c = jd.at("cost");
        d.c_p = c[0].get<double>();
        d.c_q = c.size() > 1 ? c[1].get<double>() : 0.0;
      } else if (type == "generic") {
        d.type = DeviceConfig::Type::generic;
        if (jd.contains("region")) d.region = region_from_json(jd.at("region"));
        if (jd.contains("discrete")) {
          std::vector<Vec2> pts;
          for (const auto& p : jd["discrete"])
            pts.push_back(Vec2(p[0].get<double>() * s_scale, p[1].get<double>() * s_scale));
          d.discrete = Discrete(std::move(pts));
        }
        if (!d.region && !d.discrete)
          throw ScenarioError("device " + d.id + ": generic devices need a region or discrete set");
        const auto& c = jd.at("cost");
        reject_unknown(c, {"c_p", "c_q", "p_ref", "q_ref"}, d.id + ".cost");
        d.c_p = c.value("c_p", 0.0);
        d.c_q = c.value("c_q", 0.0);
        d.p_ref = parse_traceref(c.value("p_ref", json(0.0)), s_scale, d.id + ".cost.p_ref");
        d.q_ref = parse_traceref(c.value("q_ref", json(0.0)), s_scale, d.id + ".cost.q_ref");
      } else {
        throw ScenarioError("device " + d.id + ": unknown type '" + type + "'");
      }
      sc.devices.push_back(std::move(d));
    }
  }

  if (j.contains("aggregations")) {
    for (const auto& ja : j["aggregations"]) {
      reject_unknown(ja, {"id", "node", "connection", "members"}, "scenario.aggregations[]");
      AggregationConfig a;
      a.id = ja.at("id").get<std::string>();
      a.node = ja.at("node").get<int>();
      a.connection = ja.at("connection").get<std::string>();
      for (const auto& m : ja.at("members")) a.members.push_back(m.get<std::string>());
      if (a.members.empty()) throw ScenarioError("aggregation " + a.id + " has no members");
      sc.aggregations.push_back(std::move(a));
    }
  }

  if (j.contains("loads")) {
    for (const auto& jl : j["loads"]) {
      reject_unknown(jl, {"node", "connection", "p", "q"}, "scenario.loads[]");
      LoadConfig l;
      l.node = jl.at("node").get<int>();
      l.connection = jl.at("connection").get<std::string>();
      l.p = parse_traceref(jl.at("p"), s_scale, "load.p");
      if (jl.contains("q")) l.q = parse_traceref(jl["q"], s_scale, "load.q");
      sc.loads.push_back(std::move(l));
    }
  }

  if (j.contains("noise")) {
    reject_unknown(j["noise"], {"v", "i", "p0", "x"}, "scenario.noise");
    sc.noise.v = j["noise"].value("v", 0.0);
    sc.noise.i = j["noise"].value("i", 0.0) * i_scale;
    sc.noise.p0 = j["noise"].value("p0", 0.0) * s_scale;
    sc.noise.x = j["noise"].value("x", 0.0) * s_scale;
  }

  sc.tau = j.value("actuation_tau_s", 0.0);
  sc.link_delay_steps = j.value("link_delay_steps", 0);
  sc.h = j.value("h_s", 1.0);
  sc.duration = j.at("duration_s").get<double>();
  sc.seed = j.value("seed", std::uint64_t{1});
  const std::string plant = j.value("plant", std::string("nonlinear"));
  if (plant != "nonlinear" && plant != "exact_model")
    throw ScenarioError("scenario.plant must be 'nonlinear' or 'exact_model'");
  sc.exact_model_plant = (plant == "exact_model");
  sc.sensitivity_step = j.value("sensitivity_step", 1e-4);

  // Referential integrity.
  std::set<std::string> ids;
  for (const auto& d : sc.devices)
    if (!ids.insert(d.id).second) throw ScenarioError("duplicate device id '" + d.id + "'");
  for (const auto& a : sc.aggregations) {
    if (!ids.insert(a.id).second) throw ScenarioError("duplicate id '" + a.id + "'");
    for (const auto& m : a.members) sc.device(m);  // throws on unknown ids
  }
  for (const auto& d : sc.devices) {
    if (!sc.is_member(d.id)) {
      if (d.node < 0 || d.connection.empty())
        throw ScenarioError("device " + d.id + ": standalone devices need node and connection");
    }
  }
  return sc;
}

Scenario load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ScenarioError("cannot open scenario file: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_scenario(ss.str(), path.parent_path());
}

}  // namespace derflow
