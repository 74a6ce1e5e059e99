#include "derflow/aggregation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>

namespace derflow {

namespace {

// Objective phi(x) = cost(x) + xi^T x. For axes with positive weight this is
// a shifted parabola; zero-weight axes stay linear with slope xi.
struct Objective {
  double w_p, w_q;      // quadratic weights
  double t_p, t_q;      // parabola vertices (valid where w > 0)
  double l_p, l_q;      // linear slopes (nonzero only where w == 0)
  double q_ref_p, q_ref_q;  // cost references, used only for tie-breaking

  Objective(const QuadraticCost& c, const Vec2& xi)
      : w_p(c.c_p),
        w_q(c.c_q),
        t_p(c.c_p > 0.0 ? c.p_ref - xi.x() / (2.0 * c.c_p) : 0.0),
        t_q(c.c_q > 0.0 ? c.q_ref - xi.y() / (2.0 * c.c_q) : 0.0),
        l_p(c.c_p > 0.0 ? 0.0 : xi.x()),
        l_q(c.c_q > 0.0 ? 0.0 : xi.y()),
        q_ref_p(c.p_ref),
        q_ref_q(c.q_ref) {}

  double eval(const Vec2& x) const {
    double v = 0.0;
    v += (w_p > 0.0) ? w_p * (x.x() - t_p) * (x.x() - t_p) : l_p * x.x();
    v += (w_q > 0.0) ? w_q * (x.y() - t_q) * (x.y() - t_q) : l_q * x.y();
    return v;
  }
  bool strictly_convex() const { return w_p > 0.0 && w_q > 0.0; }
  Vec2 vertex() const { return Vec2(t_p, t_q); }
};

struct Candidates {
  Vec2 best = Vec2::Zero();
  double best_val = std::numeric_limits<double>::infinity();
  void consider(const Vec2& x, const Objective& obj) {
    const double v = obj.eval(x);
    if (v < best_val) {
      best_val = v;
      best = x;
    }
  }
};

// Minimizes obj restricted to the P-axis interval [lo, hi] at fixed Q.
double interval_argmin_p(const Objective& obj, double lo, double hi) {
  if (obj.w_p > 0.0) return std::clamp(obj.t_p, lo, hi);
  if (obj.l_p > 0.0) return lo;
  if (obj.l_p < 0.0) return hi;
  return std::clamp(obj.q_ref_p, lo, hi);
}

double interval_argmin_q(const Objective& obj, double lo, double hi) {
  if (obj.w_q > 0.0) return std::clamp(obj.t_q, lo, hi);
  if (obj.l_q > 0.0) return lo;
  if (obj.l_q < 0.0) return hi;
  return std::clamp(obj.q_ref_q, lo, hi);
}

// Golden-section minimization of a unimodal 1-D function on [lo, hi].
template <typename F>
double golden_min(F&& f, double lo, double hi, int iters = 120) {
  constexpr double inv_phi = 0.6180339887498949;
  double a = lo, b = hi;
  double x1 = b - inv_phi * (b - a);
  double x2 = a + inv_phi * (b - a);
  double f1 = f(x1), f2 = f(x2);
  for (int i = 0; i < iters; ++i) {
    if (f1 < f2) {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - inv_phi * (b - a);
      f1 = f(x1);
    } else {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + inv_phi * (b - a);
      f2 = f(x2);
    }
  }
  return 0.5 * (a + b);
}

// Minimizes obj over the circle of given center/radius: coarse angular scan
// to isolate the global basin (the objective has at most two local minima on
// the circle), golden-section narrowing, then Newton polish on the
// stationarity condition for machine accuracy.
Vec2 circle_argmin(const Objective& obj, const Vec2& center, double r) {
  constexpr int kGrid = 256;
  auto point = [&](double th) {
    return Vec2(center.x() + r * std::cos(th), center.y() + r * std::sin(th));
  };
  double best_th = 0.0;
  double best_v = std::numeric_limits<double>::infinity();
  for (int i = 0; i < kGrid; ++i) {
    const double th = 2.0 * M_PI * i / kGrid;
    const double v = obj.eval(point(th));
    if (v < best_v) {
      best_v = v;
      best_th = th;
    }
  }
  const double w = 2.0 * M_PI / kGrid;
  double th = golden_min([&](double t) { return obj.eval(point(t)); }, best_th - w,
                         best_th + w, 40);

  auto grad_at = [&](const Vec2& x) {
    return Vec2(obj.w_p > 0.0 ? 2.0 * obj.w_p * (x.x() - obj.t_p) : obj.l_p,
                obj.w_q > 0.0 ? 2.0 * obj.w_q * (x.y() - obj.t_q) : obj.l_q);
  };
  for (int it = 0; it < 8; ++it) {
    const double c = std::cos(th), s = std::sin(th);
    const Vec2 x = point(th);
    const Vec2 g = grad_at(x);
    const double h1 = -g.x() * r * s + g.y() * r * c;
    const double h2 = 2.0 * obj.w_p * r * r * s * s + 2.0 * obj.w_q * r * r * c * c -
                      g.x() * r * c - g.y() * r * s;
    if (h2 <= 0.0 || !std::isfinite(h1)) break;
    const double step = h1 / h2;
    if (std::abs(step) > w) break;
    th -= step;
    if (std::abs(step) < 1e-16) break;
  }
  const Vec2 cand = point(th);
  return obj.eval(cand) <= best_v ? cand : point(best_th);
}

// Closed-form minimization of obj over the segment [v0, v1].
Vec2 segment_argmin(const Objective& obj, const Vec2& v0, const Vec2& v1) {
  const Vec2 e = v1 - v0;
  // phi(v0 + s e) = A s^2 + B s + C
  double A = 0.0, B = 0.0;
  if (obj.w_p > 0.0) {
    A += obj.w_p * e.x() * e.x();
    B += 2.0 * obj.w_p * (v0.x() - obj.t_p) * e.x();
  } else {
    B += obj.l_p * e.x();
  }
  if (obj.w_q > 0.0) {
    A += obj.w_q * e.y() * e.y();
    B += 2.0 * obj.w_q * (v0.y() - obj.t_q) * e.y();
  } else {
    B += obj.l_q * e.y();
  }
  double s;
  if (A > 0.0)
    s = std::clamp(-B / (2.0 * A), 0.0, 1.0);
  else
    s = (B > 0.0) ? 0.0 : 1.0;
  return v0 + s * e;
}

Vec2 argmin_disk(const Objective& obj, const Disk& d) {
  Candidates c;
  if (obj.strictly_convex()) {
    const Vec2 t = obj.vertex();
    if (t.x() >= d.p_lo && t.x() <= d.p_hi && t.norm() <= d.r) return t;
  }
  const double q_lo = std::sqrt(std::max(0.0, d.r * d.r - d.p_lo * d.p_lo));
  const double q_hi = std::sqrt(std::max(0.0, d.r * d.r - d.p_hi * d.p_hi));
  c.consider(Vec2(d.p_lo, interval_argmin_q(obj, -q_lo, q_lo)), obj);
  c.consider(Vec2(d.p_hi, interval_argmin_q(obj, -q_hi, q_hi)), obj);
  const Vec2 arc = circle_argmin(obj, Vec2::Zero(), d.r);
  if (arc.x() >= d.p_lo && arc.x() <= d.p_hi) c.consider(arc, obj);
  return c.best;
}

Vec2 argmin_dis(const Objective& obj, const DiskIntervalSum& s) {
  const OperatingRegion region{s};
  Candidates c;
  if (obj.strictly_convex()) {
    const Vec2 t = obj.vertex();
    if (contains(region, t)) return t;
  }
  // Vertical edges.
  const double g_lo = cap_profile(s, s.p_lo);
  const double g_hi = cap_profile(s, s.p_hi);
  c.consider(Vec2(s.p_lo, interval_argmin_q(obj, -g_lo, g_lo)), obj);
  c.consider(Vec2(s.p_hi, interval_argmin_q(obj, -g_hi, g_hi)), obj);
  // Flat caps.
  const double flo = std::max(s.a, s.p_lo);
  const double fhi = std::min(s.b, s.p_hi);
  if (flo <= fhi) {
    c.consider(segment_argmin(obj, Vec2(flo, s.r), Vec2(fhi, s.r)), obj);
    c.consider(segment_argmin(obj, Vec2(flo, -s.r), Vec2(fhi, -s.r)), obj);
  }
  // Arc faces around both interval endpoints.
  for (const double ctr : {s.a, s.b}) {
    const Vec2 arc = circle_argmin(obj, Vec2(ctr, 0.0), s.r);
    if (arc.x() >= s.p_lo && arc.x() <= s.p_hi && contains(region, arc, 1e-12))
      c.consider(arc, obj);
  }
  return c.best;
}

Vec2 argmin_polygon(const Objective& obj, const ConvexPolygon& poly) {
  const auto& v = poly.vertices;
  if (v.empty()) throw Error("cost_linear_argmin: empty polygon");
  if (v.size() == 1) return v[0];
  if (obj.strictly_convex()) {
    const Vec2 t = obj.vertex();
    if (contains(OperatingRegion{poly}, t)) return t;
  }
  Candidates c;
  const std::size_t n_edges = (v.size() == 2) ? 1 : v.size();
  for (std::size_t i = 0; i < n_edges; ++i)
    c.consider(segment_argmin(obj, v[i], v[(i + 1) % v.size()]), obj);
  return c.best;
}

}  // namespace

Vec2 cost_linear_argmin(const OperatingRegion& region, const QuadraticCost& cost,
                        const Vec2& xi) {
  const Objective obj(cost, xi);
  return std::visit(
      [&](const auto& r) -> Vec2 {
        using T = std::decay_t<decltype(r)>;
        if constexpr (std::is_same_v<T, Disk>) {
          return argmin_disk(obj, r);
        } else if constexpr (std::is_same_v<T, Interval>) {
          return Vec2(interval_argmin_p(obj, r.p_lo, r.p_hi), 0.0);
        } else if constexpr (std::is_same_v<T, Singleton>) {
          return r.point;
        } else if constexpr (std::is_same_v<T, DiskIntervalSum>) {
          return argmin_dis(obj, r);
        } else if constexpr (std::is_same_v<T, ConvexPolygon>) {
          return argmin_polygon(obj, r);
        } else {
          throw Error("cost_linear_argmin: discrete member regions must be hulled first");
        }
      },
      region);
}

namespace {

struct FreeProblem {
  std::vector<std::size_t> free_idx;
  std::vector<std::size_t> locked_idx;
  Vec2 locked_sum = Vec2::Zero();
};

FreeProblem split_locked(std::span<const Member> members) {
  FreeProblem p;
  for (std::size_t i = 0; i < members.size(); ++i) {
    if (const auto* s = std::get_if<Singleton>(&members[i].region)) {
      p.locked_idx.push_back(i);
      p.locked_sum += s->point;
    } else {
      p.free_idx.push_back(i);
    }
  }
  return p;
}

// Feasibility pre-check via the folded inner region; only possible when every
// free member is a Disk or an Interval.
void check_feasible(std::span<const Member> members, const FreeProblem& p,
                    const Vec2& xbar_free) {
  std::vector<OperatingRegion> regs;
  regs.reserve(p.free_idx.size());
  for (const auto i : p.free_idx) {
    const auto& r = members[i].region;
    if (!std::holds_alternative<Disk>(r) && !std::holds_alternative<Interval>(r)) return;
    regs.push_back(r);
  }
  const OperatingRegion folded = fold_aggregate(regs);
  if (!contains(folded, xbar_free, 1e-7))
    throw InfeasibleError("disaggregate: aggregate setpoint outside the folded member region");
}

}  // namespace

DisaggregationResult disaggregate(std::span<const Member> members, const Vec2& xbar,
                                  const Vec2& xi_warm, double tol, int max_iter) {
  if (members.empty()) throw Error("disaggregate: empty member list");

  const FreeProblem p = split_locked(members);
  DisaggregationResult out;
  out.member_setpoints.resize(members.size(), Vec2::Zero());
  for (const auto i : p.locked_idx)
    out.member_setpoints[i] = std::get<Singleton>(members[i].region).point;

  const Vec2 xbar_free = xbar - p.locked_sum;

  if (p.free_idx.empty()) {
    out.gap = xbar_free.norm();
    out.converged = out.gap <= tol;
    if (!out.converged)
      throw InfeasibleError("disaggregate: locked members cannot realize the aggregate setpoint");
    for (const auto i : p.locked_idx) out.value_primal += members[i].cost.eval(out.member_setpoints[i]);
    out.value_dual = out.value_primal;
    return out;
  }

  if (p.free_idx.size() == 1) {
    // The coupling constraint pins the single free member directly.
    const auto i = p.free_idx[0];
    const Vec2 x = project(members[i].region, xbar_free);
    out.member_setpoints[i] = x;
    out.xi = -members[i].cost.grad(x);
    out.gap = (x - xbar_free).norm();
    out.iterations = 0;
    out.converged = out.gap <= tol;
    if (!out.converged && !contains(members[i].region, xbar_free, 1e-7))
      throw InfeasibleError("disaggregate: aggregate setpoint outside the single member region");
    for (std::size_t j = 0; j < members.size(); ++j)
      out.value_primal += members[j].cost.eval(out.member_setpoints[j]);
    out.value_dual = out.value_primal;
    return out;
  }

  check_feasible(members, p, xbar_free);

  const auto inner = [&](const Vec2& xi, std::vector<Vec2>& xs) -> Vec2 {
    Vec2 sum = Vec2::Zero();
    for (std::size_t n = 0; n < p.free_idx.size(); ++n) {
      const auto i = p.free_idx[n];
      xs[n] = cost_linear_argmin(members[i].region, members[i].cost, xi);
      sum += xs[n];
    }
    return sum;
  };
  const auto dual_value = [&](const Vec2& xi, const std::vector<Vec2>& xs, const Vec2& sum) {
    double v = 0.0;
    for (std::size_t n = 0; n < p.free_idx.size(); ++n)
      v += members[p.free_idx[n]].cost.eval(xs[n]);
    return v + xi.dot(sum - xbar_free);
  };

  // Fixed ascent step below 1/L of the dual gradient (sum of the member
  // curvature inverses over the axes each region leaves free); zero-weight
  // free axes contribute a capped term.
  double dual_lip = 0.0;
  for (const auto i : p.free_idx) {
    const auto& c = members[i].cost;
    const bool q_free = !std::holds_alternative<Interval>(members[i].region);
    double cmin = c.c_p > 0.0 ? c.c_p : 5e-4;
    if (q_free) cmin = std::min(cmin, c.c_q > 0.0 ? c.c_q : 5e-4);
    dual_lip += 1.0 / (2.0 * cmin);
  }
  const double step = 1.0 / dual_lip;

  std::vector<Vec2> xs(p.free_idx.size()), xs_try(p.free_idx.size());
  Vec2 xi = xi_warm;
  Vec2 sum = inner(xi, xs);
  Vec2 grad = sum - xbar_free;
  double gap = grad.norm();

  Vec2 best_xi = xi;
  double best_gap = gap;

  int it = 0;
  for (; it < max_iter && gap > tol; ++it) {
    // Newton step on grad(xi) = 0 with a finite-difference Jacobian; the
    // gradient is piecewise linear in xi so this is exact once the member
    // active sets settle. Fall back to the safe gradient step otherwise.
    bool accepted = false;
    const double fd = std::max(1e-7, 1e-7 * xi.norm());
    Eigen::Matrix2d J;
    for (int axis = 0; axis < 2; ++axis) {
      Vec2 e = Vec2::Zero();
      e(axis) = fd;
      const Vec2 gp = inner(Vec2(xi + e), xs_try) - xbar_free;
      const Vec2 gm = inner(Vec2(xi - e), xs_try) - xbar_free;
      J.col(axis) = (gp - gm) / (2.0 * fd);
    }
    if (std::abs(J.determinant()) > 1e-300) {
      const Vec2 dxi = J.partialPivLu().solve(Vec2(-grad));
      if (dxi.allFinite()) {
        const Vec2 xi_try = xi + dxi;
        const Vec2 sum_try = inner(xi_try, xs_try);
        const Vec2 grad_try = sum_try - xbar_free;
        if (grad_try.norm() <= 0.5 * gap) {
          xi = xi_try;
          sum = sum_try;
          grad = grad_try;
          std::swap(xs, xs_try);
          accepted = true;
        }
      }
    }
    if (!accepted) {
      xi += step * grad;
      sum = inner(xi, xs);
      grad = sum - xbar_free;
    }
    gap = grad.norm();
    if (gap < best_gap) {
      best_gap = gap;
      best_xi = xi;
    }
  }

  if (gap > best_gap) {
    xi = best_xi;
    sum = inner(xi, xs);
    grad = sum - xbar_free;
    gap = grad.norm();
  }

  for (std::size_t n = 0; n < p.free_idx.size(); ++n) out.member_setpoints[p.free_idx[n]] = xs[n];
  out.xi = xi;
  out.gap = gap;
  out.iterations = it;
  out.converged = gap <= tol;
  for (std::size_t j = 0; j < members.size(); ++j)
    out.value_primal += members[j].cost.eval(out.member_setpoints[j]);
  out.value_dual = dual_value(xi, xs, sum) +
                   [&] {
                     double locked_cost = 0.0;
                     for (const auto i : p.locked_idx)
                       locked_cost += members[i].cost.eval(out.member_setpoints[i]);
                     return locked_cost;
                   }();
  return out;
}

double estimate_dual_lipschitz(std::span<const Member> members, const Vec2& from,
                               const Vec2& to, int initial_segments, int max_segments) {
  const double seg_len = (to - from).norm();
  if (seg_len == 0.0) return 0.0;

  auto fit = [&](int m) {
    double lip = 0.0;
    Vec2 xi_prev = Vec2::Zero();
    Vec2 xi = Vec2::Zero();
    for (int i = 0; i <= m; ++i) {
      const Vec2 x = from + (static_cast<double>(i) / m) * (to - from);
      const auto res = disaggregate(members, x, xi, 1e-10, 20000);
      xi_prev = xi;
      xi = res.xi;
      if (i > 0) lip = std::max(lip, (xi - xi_prev).norm() / (seg_len / m));
    }
    return lip;
  };

  double prev = fit(initial_segments);
  for (int m = 2 * initial_segments; m <= max_segments; m *= 2) {
    const double cur = fit(m);
    if (std::abs(cur - prev) <= 0.1 * std::max(cur, 1e-12)) return cur;
    prev = cur;
  }
  return prev;
}

}  // namespace derflow
