#pragma once

#include <span>
#include <vector>

#include "derflow/controller.hpp"
#include "derflow/runlog.hpp"
#include "derflow/types.hpp"

namespace derflow {

struct ConvergenceConstants {
  double L = 0.0;  // cost-gradient Lipschitz constant
  double G = 0.0;  // sensitivity gain bound
  double r_p = 0.0, r_d = 0.0, alpha = 0.0;
  double c = 1.0;  // contraction coefficient c(alpha)
};

/// c(alpha) = [1 - 2 alpha min{r_p, r_d} + alpha^2 (L + r_p + 5G)^2
///             + 5 alpha^2 (G + r_d)^2]^(1/2).
double contraction(double alpha, double r_p, double r_d, double L, double G);

/// Largest stepsize with a contraction guarantee:
/// min{r_p, r_d} / ((L + r_p + 5G)^2 + 5 (G + r_d)^2).
double max_stepsize(double r_p, double r_d, double L, double G);

struct PerStepError {
  double e_x = 0.0;
  double e = 0.0;
  double sigma = 0.0;
};

/// Geometric-sum tracking bound:
/// bound_k = c^k z0_gap + sum_{l=0}^{k-1} c^l (e_x^(k-l-1) + alpha e^(k-l-1)
///           + sigma^(k-l-1)). Returns bounds for k = 0..N.
std::vector<double> trajectory_bound(double c, double z0_gap, double alpha,
                                     std::span<const PerStepError> per_step);

struct ErrorBudget {
  double e_x = 0.0, e_0 = 0.0, e_v = 0.0, e_L = 0.0;  // sup norms over the run
  double e = 0.0;      // sqrt((L+r_p)^2 e_x^2 + 2 e_v^2 + 2 e_0^2 + e_L^2)
  double sigma = 0.0;  // sup_k ||z^(k+1,*) - z^(k,*)||
  double delta = 0.0;  // e_x + alpha e + sigma

  static double combine(double e_x, double e_v, double e_0, double e_L, double L, double r_p);
};

/// The saddle-point problem behind one controller step: the linear model with
/// the instant's constraint data and convexified regions.
struct SaddleProblem {
  const SensitivityModel* model = nullptr;
  std::vector<DeviceSpec> devices;        // discrete fields ignored
  std::vector<AggregationSpec> aggregations;
  ControllerParams params;
  StepInputs inputs;
};

/// High-accuracy saddle-point reference: iterates the exact-model controller
/// map (measurements replaced by model predictions, outputs equal to
/// commands) until the iterate moves less than tol.
ControllerState solve_saddle(const SaddleProblem& problem, ControllerState init,
                             double tol = 1e-10, int max_iter = 2000000);

struct StepMeasure {
  double e_x = 0.0, e_0 = 0.0, e_v = 0.0, e_L = 0.0, e = 0.0;
  double sigma = 0.0;
  double gap = 0.0;
  double bound = 0.0;
  bool within = true;
};

struct RunReport {
  ConvergenceConstants constants;
  ErrorBudget budget;
  std::vector<StepMeasure> steps;
  double z0_gap = 0.0;
  double tail_average_gap = 0.0;
  double asymptotic_bound = 0.0;  // Delta / (1 - c)
  bool all_within = true;         // Thm. 3 validity over the run
  bool tail_ok = true;            // Cor. 1 with 5% slack
};

struct MeasureOptions {
  double oracle_tol = 1e-10;
  int oracle_max_iter = 2000000;
  double tail_fraction = 0.2;  // last fraction of steps averaged for Cor. 1
  double lipschitz_override = 0.0;  // use instead of the estimated L when > 0
};

/// Replays a run log against per-step saddle-point references: realized error
/// terms, sigma, gaps, and the Theorem-3 bound at every step.
RunReport measure_run(const RunLog& log, const MeasureOptions& opt = {});

/// Gradient Lipschitz constant implied by the logged cost snapshots: max
/// quadratic curvature over devices and aggregation members.
double estimate_cost_lipschitz(const RunLog& log);

}  // namespace derflow
