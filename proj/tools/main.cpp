#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "derflow/analysis.hpp"
#include "derflow/sim.hpp"

namespace fs = std::filesystem;
using namespace derflow;

namespace {

int cmd_run(const std::string& scenario_path, const std::string& out_dir) {
  Engine engine(load_scenario(scenario_path));
  if (engine.params().alpha > engine.params().alpha_bound)
    std::cerr << "warning: alpha=" << engine.params().alpha
              << " exceeds the contraction stepsize bound " << engine.params().alpha_bound
              << "\n";

  RunLog log = engine.run();
  fs::create_directories(out_dir);
  log.write_jsonl(fs::path(out_dir) / "runlog.jsonl");
  log.write_summary_csv(fs::path(out_dir) / "summary.csv");

  if (!log.completed) {
    std::cerr << "run aborted: " << log.abort_reason << "\n";
    return 1;
  }
  std::cout << "run complete: " << log.steps.size() << " steps -> " << out_dir << "\n";
  return 0;
}

int cmd_certify(const std::string& log_path, const std::string& out_csv) {
  const RunLog log = RunLog::read_jsonl(log_path);
  const RunReport report = measure_run(log);

  std::ostream* out = &std::cout;
  std::ofstream file;
  if (!out_csv.empty()) {
    file.open(out_csv);
    out = &file;
  }
  *out << "k,realized_gap,theoretical_bound,margin\n";
  for (std::size_t k = 0; k < report.steps.size(); ++k) {
    const auto& s = report.steps[k];
    *out << k << ',' << s.gap << ',' << s.bound << ',' << (s.bound - s.gap) << '\n';
  }

  std::cout << "c(alpha) = " << report.constants.c << "  L = " << report.constants.L
            << "  G = " << report.constants.G << "\n";
  std::cout << "error budget: e_x=" << report.budget.e_x << " e_v=" << report.budget.e_v
            << " e_0=" << report.budget.e_0 << " e_L=" << report.budget.e_L
            << " sigma=" << report.budget.sigma << "\n";
  std::cout << "asymptotic bound Delta/(1-c) = " << report.asymptotic_bound
            << ", tail average gap = " << report.tail_average_gap << "\n";
  std::cout << (report.all_within ? "PASS" : "FAIL")
            << ": realized gap within the tracking bound at every step\n";
  std::cout << (report.tail_ok ? "PASS" : "FAIL") << ": tail average within the asymptotic bound\n";
  return (report.all_within && report.tail_ok) ? 0 : 1;
}

int cmd_powerflow(const std::string& scenario_path, const std::string& injections_csv) {
  const Scenario sc = load_scenario(scenario_path);
  std::vector<std::pair<int, PhaseConnection>> delta_points;
  // Injection rows are (node, connection, P, Q) in the scenario's units.
  struct Row {
    int node;
    std::string conn;
    double p, q;
  };
  std::vector<Row> rows;
  std::ifstream in(injections_csv);
  if (!in) {
    std::cerr << "cannot open " << injections_csv << "\n";
    return 1;
  }
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    Row r;
    char conn_buf[8] = {0};
    if (std::sscanf(line.c_str(), "%d,%7[^,],%lf,%lf", &r.node, conn_buf, &r.p, &r.q) != 4) {
      std::cerr << "bad injection row: " << line << "\n";
      return 1;
    }
    r.conn = conn_buf;
    rows.push_back(r);
    const Coupling c = Coupling::parse(r.node, r.conn);
    for (const auto& term : c.delta_terms()) delta_points.push_back(term);
  }

  auto blocks = build_admittance(sc.grid);
  auto delta = build_delta_incidence(sc.grid, delta_points);
  const auto& idx = blocks.phase_index;
  PowerFlowSolver solver(std::move(blocks), std::move(delta));

  InjectionSpec inj = InjectionSpec::zero(idx.size());
  for (const auto& r : rows)
    add_injection(inj, idx, solver.delta(), Coupling::parse(r.node, r.conn), Vec2(r.p, r.q));

  const auto sol = solver.solve(inj, sc.grid.slack_voltage);
  std::cout << "node,phase,v_re,v_im,v_mag\n";
  for (const auto& [node, phase] : idx.entries()) {
    const Complex v = sol.v(idx.row(node, phase));
    std::cout << node << ',' << phase_letter(phase) << ',' << v.real() << ',' << v.imag() << ','
              << std::abs(v) << '\n';
  }
  std::cout << "p0," << sol.p0(0) << ',' << sol.p0(1) << ',' << sol.p0(2) << '\n';
  std::cout << "q0," << sol.q0(0) << ',' << sol.q0(1) << ',' << sol.q0(2) << '\n';
  std::cout << "iterations," << sol.iterations << ",residual," << sol.residual << '\n';
  return 0;
}

int cmd_linearize(const std::string& scenario_path, const std::string& out_path) {
  Engine engine(load_scenario(scenario_path));
  const std::string text = engine.model().to_json_text();
  if (out_path.empty()) {
    std::cout << text << "\n";
  } else {
    std::ofstream out(out_path);
    out << text << "\n";
    std::cout << "model written to " << out_path << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Real-time feedback optimization of distribution-grid DERs"};
  app.require_subcommand(1);

  std::string scenario_path, out_dir = "out", log_path, out_csv, injections_csv, model_out;

  auto* run = app.add_subcommand("run", "Run a closed-loop scenario");
  run->add_option("--scenario", scenario_path, "Scenario JSON")->required();
  run->add_option("--out", out_dir, "Output directory");

  auto* certify = app.add_subcommand("certify", "Check a run log against the tracking bounds");
  certify->add_option("--log", log_path, "runlog.jsonl from a run")->required();
  certify->add_option("--out", out_csv, "Per-step CSV output (stdout otherwise)");

  auto* pf = app.add_subcommand("powerflow", "Solve one power flow from a scenario grid");
  pf->add_option("--scenario", scenario_path, "Scenario JSON")->required();
  pf->add_option("--injections", injections_csv, "CSV: node,connection,P,Q")->required();

  auto* lin = app.add_subcommand("linearize", "Dump the sensitivity model as JSON");
  lin->add_option("--scenario", scenario_path, "Scenario JSON")->required();
  lin->add_option("--out", model_out, "Output path (stdout otherwise)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return cmd_run(scenario_path, out_dir);
    if (certify->parsed()) return cmd_certify(log_path, out_csv);
    if (pf->parsed()) return cmd_powerflow(scenario_path, injections_csv);
    if (lin->parsed()) return cmd_linearize(scenario_path, model_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
