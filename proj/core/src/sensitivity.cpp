#include "derflow/sensitivity.hpp"

#include <nlohmann/json.hpp>

#include <Eigen/SVD>

namespace derflow {

using nlohmann::json;

Coupling Coupling::parse(int node, const std::string& spec) {
  if (spec == "3y") return balanced_wye(node);
  if (spec == "3d") return balanced_delta(node);
  return single(node, PhaseConnection::parse(spec));
}

std::vector<std::pair<int, PhaseConnection>> Coupling::delta_terms() const {
  std::vector<std::pair<int, PhaseConnection>> out;
  for (const auto& [conn, w] : terms)
    if (conn.kind == PhaseConnection::Kind::delta) out.emplace_back(node, conn);
  return out;
}

void add_injection(InjectionSpec& inj, const PhaseIndex& idx, const DeltaIncidence& delta,
                   const Coupling& coupling, const Vec2& power) {
  const Complex s(power.x(), power.y());
  for (const auto& [conn, w] : coupling.terms) {
    if (conn.kind == PhaseConnection::Kind::wye) {
      inj.sY(idx.row(coupling.node, conn.first)) += w * s;
    } else {
      const auto it = delta.delta_index.find({coupling.node, conn.str()});
      if (it == delta.delta_index.end())
        throw PhaseError("delta connection " + conn.str() + " at node " +
                         std::to_string(coupling.node) + " missing from the incidence matrix");
      inj.sDelta(it->second) += w * s;
    }
  }
}

Prediction measure_solution(const PowerFlowSolution& sol, const GridModel& grid,
                            const PhaseIndex& idx, const CVec3& v0,
                            const MeasurementSets& sets) {
  Prediction out;
  out.v_mag.resize(static_cast<Eigen::Index>(sets.v_points.size()));
  for (std::size_t i = 0; i < sets.v_points.size(); ++i) {
    const auto& [node, phase] = sets.v_points[i];
    out.v_mag(static_cast<Eigen::Index>(i)) = std::abs(sol.v(idx.row(node, phase)));
  }
  const auto currents = line_currents(grid, idx, sol.v, v0, sets.i_lines);
  out.i_mag.resize(static_cast<Eigen::Index>(currents.size()));
  for (std::size_t i = 0; i < currents.size(); ++i)
    out.i_mag(static_cast<Eigen::Index>(i)) = std::abs(currents[i]);
  out.p0 = sol.p0;
  return out;
}

SensitivityModel linearize(const PowerFlowSolver& solver, const GridModel& grid,
                           const std::vector<LinearizePoint>& points,
                           const InjectionSpec& base_uncontrollable,
                           const MeasurementSets& sets, const CVec3& v0, double step,
                           double pf_tol, int pf_max_iter) {
  if (!(step > 0.0)) throw Error("linearize: step must be positive");
  const auto& idx = solver.blocks().phase_index;
  const auto& delta = solver.delta();

  auto injections_at = [&](const std::vector<Vec2>& xs) {
    InjectionSpec inj = base_uncontrollable;
    for (std::size_t j = 0; j < points.size(); ++j)
      add_injection(inj, idx, delta, points[j].coupling, xs[j]);
    return inj;
  };
  auto measure_at = [&](const std::vector<Vec2>& xs, const std::string& who) {
    try {
      const auto sol = solver.solve(injections_at(xs), v0, pf_tol, pf_max_iter);
      return measure_solution(sol, grid, idx, v0, sets);
    } catch (const DivergenceError& e) {
      throw Error("linearize: plant diverged while perturbing " + who + ": " + e.what());
    }
  };

  std::vector<Vec2> base_x(points.size());
  for (std::size_t j = 0; j < points.size(); ++j) base_x[j] = points[j].x_base;
  const Prediction base = measure_at(base_x, "the base point");

  SensitivityModel model;
  model.sets = sets;
  const int n_v = static_cast<int>(sets.v_points.size());
  const int n_i = static_cast<int>(sets.i_lines.size());

  for (std::size_t j = 0; j < points.size(); ++j) {
    Mat2X Aj = Mat2X::Zero(n_v, 2);
    Mat2X Bj = Mat2X::Zero(n_i, 2);
    Eigen::Matrix<double, 3, 2> Mj = Eigen::Matrix<double, 3, 2>::Zero();
    for (int axis = 0; axis < 2; ++axis) {
      std::vector<Vec2> xs = base_x;
      xs[j](axis) += step;
      const Prediction plus = measure_at(xs, points[j].id);
      xs[j](axis) -= 2.0 * step;
      const Prediction minus = measure_at(xs, points[j].id);
      const double inv = 1.0 / (2.0 * step);
      Aj.col(axis) = (plus.v_mag - minus.v_mag) * inv;
      Bj.col(axis) = (plus.i_mag - minus.i_mag) * inv;
      Mj.col(axis) = (plus.p0 - minus.p0) * inv;
    }
    if (points[j].is_aggregation) {
      model.Abar[points[j].id] = Aj;
      model.Bbar[points[j].id] = Bj;
      model.Mbar[points[j].id] = Mj;
      model.xbar_base[points[j].id] = points[j].x_base;
    } else {
      model.A[points[j].id] = Aj;
      model.B[points[j].id] = Bj;
      model.M[points[j].id] = Mj;
      model.x_base[points[j].id] = points[j].x_base;
    }
  }

  // Offsets make the model exact at the base point.
  model.a = base.v_mag;
  model.b = base.i_mag;
  model.m = base.p0;
  for (const auto& [id, x] : model.x_base) {
    model.a -= model.A.at(id) * x;
    model.b -= model.B.at(id) * x;
    model.m -= model.M.at(id) * x;
  }
  for (const auto& [id, x] : model.xbar_base) {
    model.a -= model.Abar.at(id) * x;
    model.b -= model.Bbar.at(id) * x;
    model.m -= model.Mbar.at(id) * x;
  }
  return model;
}

Prediction SensitivityModel::predict(const std::map<std::string, Vec2>& x,
                                     const std::map<std::string, Vec2>& xbar) const {
  Prediction out;
  out.v_mag = a;
  out.i_mag = b;
  out.p0 = m;
  for (const auto& [id, xj] : x) {
    const auto it = A.find(id);
    if (it == A.end()) throw Error("predict: unknown device id '" + id + "'");
    out.v_mag += it->second * xj;
    out.i_mag += B.at(id) * xj;
    out.p0 += M.at(id) * xj;
  }
  for (const auto& [id, xj] : xbar) {
    const auto it = Abar.find(id);
    if (it == Abar.end()) throw Error("predict: unknown aggregation id '" + id + "'");
    out.v_mag += it->second * xj;
    out.i_mag += Bbar.at(id) * xj;
    out.p0 += Mbar.at(id) * xj;
  }
  return out;
}

namespace {

double stacked_norm(const std::vector<const Mat2X*>& mats, Eigen::Index rows) {
  if (mats.empty() || rows == 0) return 0.0;
  MatX stacked(rows, 2 * static_cast<Eigen::Index>(mats.size()));
  for (std::size_t j = 0; j < mats.size(); ++j) stacked.middleCols(2 * j, 2) = *mats[j];
  return stacked.jacobiSvd().singularValues()(0);
}

}  // namespace

SensitivityModel::Gains SensitivityModel::gains() const {
  std::vector<const Mat2X*> av, bv;
  std::vector<Mat2X> mv;
  for (const auto& [id, mat] : A) av.push_back(&mat);
  for (const auto& [id, mat] : Abar) av.push_back(&mat);
  for (const auto& [id, mat] : B) bv.push_back(&mat);
  for (const auto& [id, mat] : Bbar) bv.push_back(&mat);
  for (const auto& [id, mat] : M) mv.push_back(mat);
  for (const auto& [id, mat] : Mbar) mv.push_back(mat);

  Gains g{0.0, 0.0, 0.0};
  g.g_v = stacked_norm(av, a.size());
  g.g_l = stacked_norm(bv, b.size());
  if (!mv.empty()) {
    MatX stacked(3, 2 * static_cast<Eigen::Index>(mv.size()));
    for (std::size_t j = 0; j < mv.size(); ++j) stacked.middleCols(2 * j, 2) = mv[j];
    g.g_0 = stacked.jacobiSvd().singularValues()(0);
  }
  return g;
}

namespace {

json matrix_to_json(const MatX& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

MatX matrix_from_json(const json& j) {
  const auto rows = j.size();
  if (rows == 0) return MatX(0, 0);
  MatX m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(j[0].size()));
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < j[r].size(); ++c)
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = j[r][c].get<double>();
  return m;
}

json vector_to_json(const VecX& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

VecX vector_from_json(const json& j) {
  VecX v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  return v;
}

}  // namespace

std::string SensitivityModel::to_json_text() const {
  json j;
  json vpts = json::array();
  for (const auto& [node, phase] : sets.v_points)
    vpts.push_back({node, std::string(1, phase_letter(phase))});
  json ilns = json::array();
  for (const auto& [line, phase] : sets.i_lines)
    ilns.push_back({line, std::string(1, phase_letter(phase))});
  j["measurement_sets"] = {{"voltages", vpts}, {"lines", ilns}};

  auto dump_group = [&](const char* key, const auto& mats, const auto& bases) {
    json group = json::object();
    for (const auto& [id, mat] : mats) {
      group[id] = {{"matrix", matrix_to_json(mat)}};
      if (bases.count(id))
        group[id]["base"] = {bases.at(id).x(), bases.at(id).y()};
    }
    j[key] = std::move(group);
  };
  dump_group("A", A, x_base);
  dump_group("B", B, x_base);
  dump_group("M", M, x_base);
  dump_group("Abar", Abar, xbar_base);
  dump_group("Bbar", Bbar, xbar_base);
  dump_group("Mbar", Mbar, xbar_base);
  j["a"] = vector_to_json(a);
  j["b"] = vector_to_json(b);
  j["m"] = {m(0), m(1), m(2)};
  return j.dump(2);
}

SensitivityModel SensitivityModel::from_json_text(const std::string& text) {
  const json j = json::parse(text);
  SensitivityModel model;
  for (const auto& p : j.at("measurement_sets").at("voltages"))
    model.sets.v_points.emplace_back(p[0].get<int>(),
                                     PhaseConnection::parse(p[1].get<std::string>()).first);
  for (const auto& p : j.at("measurement_sets").at("lines"))
    model.sets.i_lines.emplace_back(p[0].get<std::string>(),
                                    PhaseConnection::parse(p[1].get<std::string>()).first);

  auto load_2col = [&](const char* key, auto& mats, auto& bases) {
    for (const auto& [id, entry] : j.at(key).items()) {
      mats[id] = matrix_from_json(entry.at("matrix"));
      if (entry.contains("base"))
        bases[id] = Vec2(entry["base"][0].template get<double>(),
                         entry["base"][1].template get<double>());
    }
  };
  load_2col("A", model.A, model.x_base);
  load_2col("B", model.B, model.x_base);
  load_2col("Abar", model.Abar, model.xbar_base);
  load_2col("Bbar", model.Bbar, model.xbar_base);
  for (const auto& [id, entry] : j.at("M").items())
    model.M[id] = matrix_from_json(entry.at("matrix"));
  for (const auto& [id, entry] : j.at("Mbar").items())
    model.Mbar[id] = matrix_from_json(entry.at("matrix"));
  model.a = vector_from_json(j.at("a"));
  model.b = vector_from_json(j.at("b"));
  model.m = Vec3(j.at("m")[0].get<double>(), j.at("m")[1].get<double>(), j.at("m")[2].get<double>());
  return model;
}

}  // namespace derflow
