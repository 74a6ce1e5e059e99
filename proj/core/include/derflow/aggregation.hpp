#pragma once

#include <span>
#include <vector>

#include "derflow/regions.hpp"
#include "derflow/types.hpp"

namespace derflow {

/// Weighted quadratic cost c_p (P - p_ref)^2 + c_q (Q - q_ref)^2 with
/// nonnegative weights. Weights and references may vary over time; costs are
/// value objects rebuilt by the scenario layer.
struct QuadraticCost {
  double c_p = 0.0;
  double c_q = 0.0;
  double p_ref = 0.0;
  double q_ref = 0.0;

  double eval(const Vec2& x) const {
    const double dp = x.x() - p_ref;
    const double dq = x.y() - q_ref;
    return c_p * dp * dp + c_q * dq * dq;
  }
  Vec2 grad(const Vec2& x) const {
    return Vec2(2.0 * c_p * (x.x() - p_ref), 2.0 * c_q * (x.y() - q_ref));
  }
  /// Lipschitz constant of the gradient.
  double curvature() const { return 2.0 * std::max(c_p, c_q); }
};

struct Member {
  OperatingRegion region;
  QuadraticCost cost;
};

struct DisaggregationResult {
  std::vector<Vec2> member_setpoints;  // one per input member, same order
  Vec2 xi = Vec2::Zero();              // optimal dual of the coupling constraint
  double gap = 0.0;                    // || sum(setpoints) - xbar ||
  double value_primal = 0.0;           // sum of member costs at the setpoints
  double value_dual = 0.0;             // dual value; tight proxy for the aggregate cost
  int iterations = 0;
  bool converged = false;
};

/// Minimizes cost(x) + xi^T x over the region. Exact for quadratic costs on
/// Disk / Interval / Singleton / ConvexPolygon / DiskIntervalSum regions;
/// equals the Euclidean projection of the shifted reference when the weights
/// are isotropic.
Vec2 cost_linear_argmin(const OperatingRegion& region, const QuadraticCost& cost,
                        const Vec2& xi);

/// Splits an aggregate setpoint across members by solving the saddle point of
/// the inner problem: exact per-member minimizations against the coupling
/// multiplier xi, with xi driven to the optimum by a damped Newton iteration
/// on the coupling residual (safe gradient-ascent fallback). Singleton
/// members are locked: their setpoints are subtracted from xbar and the dual
/// problem is solved over the remaining members. Returns the best iterate
/// flagged non-converged when max_iter is exhausted; throws InfeasibleError
/// when xbar lies outside the folded member region.
DisaggregationResult disaggregate(std::span<const Member> members, const Vec2& xbar,
                                  const Vec2& xi_warm, double tol = 1e-8,
                                  int max_iter = 5000);

/// Gradient of the aggregate cost at the disaggregation point: -xi. The
/// converged flag travels on the result; callers decide how to treat
/// non-converged solves.
inline Vec2 aggregate_gradient(const DisaggregationResult& result) { return -result.xi; }

/// Empirical Lipschitz constant of xbar -> xi along the segment [from, to],
/// refined by doubling the sampling resolution until the estimate is stable
/// within 10% (or the cap is reached). Both endpoints must be interior.
double estimate_dual_lipschitz(std::span<const Member> members, const Vec2& from,
                               const Vec2& to, int initial_segments = 8,
                               int max_segments = 256);

}  // namespace derflow
