#include "derflow/regions.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace derflow {

namespace {

double sq(double x) { return x * x; }

double chord_height(double r, double p) { return std::sqrt(std::max(0.0, r * r - p * p)); }

Vec2 project_segment(const Vec2& v0, const Vec2& v1, const Vec2& y) {
  const Vec2 e = v1 - v0;
  const double len2 = e.squaredNorm();
  if (len2 == 0.0) return v0;
  const double s = std::clamp((y - v0).dot(e) / len2, 0.0, 1.0);
  return v0 + s * e;
}

}  // namespace

Disk::Disk(double p_lo_, double p_hi_, double r_) : p_lo(p_lo_), p_hi(p_hi_), r(r_) {
  if (!(r > 0.0)) throw Error("Disk: radius must be positive");
  if (!(p_lo <= p_hi)) throw Error("Disk: p_lo must not exceed p_hi");
  // P-bounds beyond the radius are inactive; tightening them keeps the set
  // identical and the stored interval within [-r, r].
  p_lo = std::max(p_lo, -r);
  p_hi = std::min(p_hi, r);
  if (!(p_lo <= p_hi)) throw Error("Disk: empty set (P-interval outside the radius)");
}

Interval::Interval(double p_lo_, double p_hi_) : p_lo(p_lo_), p_hi(p_hi_) {
  if (!(p_lo <= p_hi)) throw Error("Interval: p_lo must not exceed p_hi");
}

Discrete::Discrete(std::vector<Vec2> pts) : points(std::move(pts)) {
  if (points.empty()) throw Error("Discrete: point set must be nonempty");
}

DiskIntervalSum::DiskIntervalSum(double p_lo_, double p_hi_, double r_, double a_, double b_)
    : p_lo(p_lo_), p_hi(p_hi_), r(r_), a(a_), b(b_) {
  if (!(r > 0.0)) throw Error("DiskIntervalSum: radius must be positive");
  if (!(a <= b)) throw Error("DiskIntervalSum: interval endpoints out of order");
  if (!(p_lo <= p_hi)) throw Error("DiskIntervalSum: p_lo must not exceed p_hi");
  if (p_lo < a - r || p_hi > b + r)
    throw Error("DiskIntervalSum: P-interval exceeds the capsule extent");
}

double cap_profile(const DiskIntervalSum& s, double p) {
  if (p < s.a) return chord_height(s.r, p - s.a);
  if (p > s.b) return chord_height(s.r, p - s.b);
  return s.r;
}

namespace {

Vec2 project_disk(const Disk& d, const Vec2& y) {
  const double n = y.norm();
  if (y.x() >= d.p_lo && y.x() <= d.p_hi && n <= d.r) return y;

  Vec2 best = Vec2::Zero();
  double best_d2 = std::numeric_limits<double>::infinity();
  auto consider = [&](const Vec2& c) {
    const double d2 = (c - y).squaredNorm();
    if (d2 < best_d2) {
      best_d2 = d2;
      best = c;
    }
  };

  // Arc face: radial projection, valid when it lands inside the slab.
  if (n > 0.0) {
    const Vec2 c = y * (d.r / n);
    if (c.x() >= d.p_lo && c.x() <= d.p_hi) consider(c);
  }
  // Vertical edges at p_lo and p_hi (corners included via the clamp).
  const double q_lo = chord_height(d.r, d.p_lo);
  consider(Vec2(d.p_lo, std::clamp(y.y(), -q_lo, q_lo)));
  const double q_hi = chord_height(d.r, d.p_hi);
  consider(Vec2(d.p_hi, std::clamp(y.y(), -q_hi, q_hi)));
  return best;
}

Vec2 project_dis(const DiskIntervalSum& s, const Vec2& y) {
  const Vec2 c(std::clamp(y.x(), s.a, s.b), 0.0);
  const Vec2 dvec = y - c;
  const double dist = dvec.norm();
  if (y.x() >= s.p_lo && y.x() <= s.p_hi && dist <= s.r) return y;

  Vec2 best = Vec2::Zero();
  double best_d2 = std::numeric_limits<double>::infinity();
  auto consider = [&](const Vec2& cand) {
    const double d2 = (cand - y).squaredNorm();
    if (d2 < best_d2) {
      best_d2 = d2;
      best = cand;
    }
  };

  // Capsule surface (flat caps and both arcs), valid inside the slab.
  if (dist > 0.0) {
    const Vec2 surf = c + dvec * (s.r / dist);
    if (surf.x() >= s.p_lo && surf.x() <= s.p_hi) consider(surf);
  }
  const double g_lo = cap_profile(s, s.p_lo);
  consider(Vec2(s.p_lo, std::clamp(y.y(), -g_lo, g_lo)));
  const double g_hi = cap_profile(s, s.p_hi);
  consider(Vec2(s.p_hi, std::clamp(y.y(), -g_hi, g_hi)));
  return best;
}

bool polygon_contains(const std::vector<Vec2>& v, const Vec2& y, double tol) {
  if (v.size() == 1) return (y - v[0]).norm() <= tol;
  if (v.size() == 2) return (y - project_segment(v[0], v[1], y)).norm() <= tol;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const Vec2& p0 = v[i];
    const Vec2& p1 = v[(i + 1) % v.size()];
    const Vec2 e = p1 - p0;
    const double cross = e.x() * (y.y() - p0.y()) - e.y() * (y.x() - p0.x());
    if (cross < -tol * std::max(1.0, e.norm())) return false;
  }
  return true;
}

Vec2 project_polygon(const ConvexPolygon& poly, const Vec2& y) {
  const auto& v = poly.vertices;
  if (v.empty()) throw Error("ConvexPolygon: empty vertex list");
  if (v.size() == 1) return v[0];
  if (v.size() > 2 && polygon_contains(v, y, 0.0)) return y;

  Vec2 best = v[0];
  double best_d2 = std::numeric_limits<double>::infinity();
  const std::size_t n_edges = (v.size() == 2) ? 1 : v.size();
  for (std::size_t i = 0; i < n_edges; ++i) {
    const Vec2 c = project_segment(v[i], v[(i + 1) % v.size()], y);
    const double d2 = (c - y).squaredNorm();
    if (d2 < best_d2) {
      best_d2 = d2;
      best = c;
    }
  }
  return best;
}

}  // namespace

Vec2 project(const OperatingRegion& region, const Vec2& y) {
  return std::visit(
      [&](const auto& r) -> Vec2 {
        using T = std::decay_t<decltype(r)>;
        if constexpr (std::is_same_v<T, Disk>) {
          return project_disk(r, y);
        } else if constexpr (std::is_same_v<T, Interval>) {
          return Vec2(std::clamp(y.x(), r.p_lo, r.p_hi), 0.0);
        } else if constexpr (std::is_same_v<T, Discrete>) {
          std::size_t best = 0;
          double best_d2 = (r.points[0] - y).squaredNorm();
          for (std::size_t i = 1; i < r.points.size(); ++i) {
            const double d2 = (r.points[i] - y).squaredNorm();
            if (d2 < best_d2) {
              best_d2 = d2;
              best = i;
            }
          }
          return r.points[best];
        } else if constexpr (std::is_same_v<T, DiskIntervalSum>) {
          return project_dis(r, y);
        } else if constexpr (std::is_same_v<T, Singleton>) {
          return r.point;
        } else {
          return project_polygon(r, y);
        }
      },
      region);
}

bool contains(const OperatingRegion& region, const Vec2& y, double tol) {
  return std::visit(
      [&](const auto& r) -> bool {
        using T = std::decay_t<decltype(r)>;
        if constexpr (std::is_same_v<T, Disk>) {
          return y.x() >= r.p_lo - tol && y.x() <= r.p_hi + tol && y.norm() <= r.r + tol;
        } else if constexpr (std::is_same_v<T, Interval>) {
          return y.x() >= r.p_lo - tol && y.x() <= r.p_hi + tol && std::abs(y.y()) <= tol;
        } else if constexpr (std::is_same_v<T, Discrete>) {
          for (const auto& p : r.points)
            if ((p - y).norm() <= tol) return true;
          return false;
        } else if constexpr (std::is_same_v<T, DiskIntervalSum>) {
          const Vec2 c(std::clamp(y.x(), r.a, r.b), 0.0);
          return y.x() >= r.p_lo - tol && y.x() <= r.p_hi + tol && (y - c).norm() <= r.r + tol;
        } else if constexpr (std::is_same_v<T, Singleton>) {
          return (y - r.point).norm() <= tol;
        } else {
          return polygon_contains(r.vertices, y, tol);
        }
      },
      region);
}

Interval minkowski_interval(const Interval& i1, const Interval& i2) {
  return Interval(i1.p_lo + i2.p_lo, i1.p_hi + i2.p_hi);
}

DiskIntervalSum minkowski_disk_interval(const Disk& d, const Interval& i) {
  if (d.p_lo > 0.0 || d.p_hi < 0.0)
    throw Error("minkowski_disk_interval: disk must satisfy p_lo <= 0 <= p_hi");
  return DiskIntervalSum(d.p_lo + i.p_lo, d.p_hi + i.p_hi, d.r, i.p_lo, i.p_hi);
}

Disk minkowski_disk_disk_inner(const Disk& d1, const Disk& d2) {
  const double alpha = sq(std::max(d1.p_lo + d2.p_lo, std::min(0.0, d1.p_hi + d2.p_hi)));
  const double beta1 = std::min(std::max(sq(d1.p_lo), sq(d1.p_hi)), sq(d1.r));
  const double beta2 = std::min(std::max(sq(d2.p_lo), sq(d2.p_hi)), sq(d2.r));
  const double rho2 = sq(d1.r) + sq(d2.r) + alpha - beta1 - beta2 +
                      2.0 * std::sqrt((sq(d1.r) - beta1) * (sq(d2.r) - beta2));
  const double rho = std::sqrt(std::max(0.0, rho2));
  if (!(rho > 0.0))
    throw Error("minkowski_disk_disk_inner: degenerate inner approximation (rho = 0)");
  // Clamping the P-interval into [-rho, rho] does not change the set.
  const double lo = std::max(d1.p_lo + d2.p_lo, -rho);
  const double hi = std::min(d1.p_hi + d2.p_hi, rho);
  return Disk(lo, hi, rho);
}

OperatingRegion fold_aggregate(std::span<const OperatingRegion> regions) {
  if (regions.empty()) throw Error("fold_aggregate: empty region list");

  std::vector<Disk> disks;
  std::vector<Interval> intervals;
  for (const auto& region : regions) {
    if (const auto* d = std::get_if<Disk>(&region)) {
      disks.push_back(*d);
    } else if (const auto* i = std::get_if<Interval>(&region)) {
      intervals.push_back(*i);
    } else {
      throw Error("fold_aggregate: only Disk and Interval regions can be folded");
    }
  }

  if (regions.size() == 1) return regions[0];

  if (!disks.empty()) {
    Disk acc = disks.front();
    for (std::size_t i = 1; i < disks.size(); ++i) acc = minkowski_disk_disk_inner(acc, disks[i]);
    if (intervals.empty()) return acc;
    Interval isum = intervals.front();
    for (std::size_t i = 1; i < intervals.size(); ++i) isum = minkowski_interval(isum, intervals[i]);
    return minkowski_disk_interval(acc, isum);
  }

  Interval isum = intervals.front();
  for (std::size_t i = 1; i < intervals.size(); ++i) isum = minkowski_interval(isum, intervals[i]);
  return isum;
}

OperatingRegion convex_hull(const Discrete& d) {
  std::vector<Vec2> pts = d.points;
  std::sort(pts.begin(), pts.end(), [](const Vec2& a, const Vec2& b) {
    return a.x() < b.x() || (a.x() == b.x() && a.y() < b.y());
  });
  pts.erase(std::unique(pts.begin(), pts.end(),
                        [](const Vec2& a, const Vec2& b) { return a == b; }),
            pts.end());

  if (pts.size() == 1) return Singleton{pts[0]};

  const bool all_q_zero =
      std::all_of(pts.begin(), pts.end(), [](const Vec2& p) { return p.y() == 0.0; });
  if (all_q_zero) return Interval(pts.front().x(), pts.back().x());

  // Andrew monotone chain, counter-clockwise output.
  auto cross = [](const Vec2& o, const Vec2& a, const Vec2& b) {
    return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
  };
  std::vector<Vec2> hull(2 * pts.size());
  std::size_t k = 0;
  for (const auto& p : pts) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= 0.0) --k;
    hull[k++] = p;
  }
  const std::size_t lower = k + 1;
  for (auto it = pts.rbegin(); it != pts.rend(); ++it) {
    while (k >= lower && cross(hull[k - 2], hull[k - 1], *it) <= 0.0) --k;
    hull[k++] = *it;
  }
  hull.resize(k - 1);
  return ConvexPolygon{std::move(hull)};
}

ErrorDiffusionResult error_diffusion_step(const Discrete& region, const Vec2& x_cont,
                                          const ErrorAccumulator& acc) {
  ErrorDiffusionResult out;
  out.x_impl = project(OperatingRegion{region}, Vec2(x_cont + acc.eps));
  out.acc.eps = acc.eps + (x_cont - out.x_impl);
  out.acc.history_len = acc.history_len + 1;
  return out;
}

Vec2 region_center(const OperatingRegion& region) {
  return std::visit(
      [&](const auto& r) -> Vec2 {
        using T = std::decay_t<decltype(r)>;
        if constexpr (std::is_same_v<T, Disk>) {
          return Vec2(0.5 * (r.p_lo + r.p_hi), 0.0);
        } else if constexpr (std::is_same_v<T, Interval>) {
          return Vec2(0.5 * (r.p_lo + r.p_hi), 0.0);
        } else if constexpr (std::is_same_v<T, DiskIntervalSum>) {
          return Vec2(0.5 * (r.p_lo + r.p_hi), 0.0);
        } else if constexpr (std::is_same_v<T, Singleton>) {
          return r.point;
        } else if constexpr (std::is_same_v<T, ConvexPolygon>) {
          Vec2 c = Vec2::Zero();
          for (const auto& v : r.vertices) c += v;
          return c / static_cast<double>(r.vertices.size());
        } else {
          Vec2 c = Vec2::Zero();
          for (const auto& v : r.points) c += v;
          return c / static_cast<double>(r.points.size());
        }
      },
      region);
}

double region_diameter(const OperatingRegion& region) {
  return std::visit(
      [&](const auto& r) -> double {
        using T = std::decay_t<decltype(r)>;
        if constexpr (std::is_same_v<T, Disk>) {
          return std::max(r.p_hi - r.p_lo, 2.0 * r.r);
        } else if constexpr (std::is_same_v<T, Interval>) {
          return r.p_hi - r.p_lo;
        } else if constexpr (std::is_same_v<T, DiskIntervalSum>) {
          return std::max(r.p_hi - r.p_lo, 2.0 * r.r);
        } else if constexpr (std::is_same_v<T, Singleton>) {
          return 0.0;
        } else if constexpr (std::is_same_v<T, ConvexPolygon>) {
          double d = 0.0;
          for (std::size_t i = 0; i < r.vertices.size(); ++i)
            for (std::size_t j = i + 1; j < r.vertices.size(); ++j)
              d = std::max(d, (r.vertices[i] - r.vertices[j]).norm());
          return d;
        } else {
          double d = 0.0;
          for (std::size_t i = 0; i < r.points.size(); ++i)
            for (std::size_t j = i + 1; j < r.points.size(); ++j)
              d = std::max(d, (r.points[i] - r.points[j]).norm());
          return d;
        }
      },
      region);
}

double boundary_distance(const OperatingRegion& region, const Vec2& y) {
  return std::visit(
      [&](const auto& r) -> double {
        using T = std::decay_t<decltype(r)>;
        if constexpr (std::is_same_v<T, Disk>) {
          return std::min({y.x() - r.p_lo, r.p_hi - y.x(), r.r - y.norm()});
        } else if constexpr (std::is_same_v<T, Interval>) {
          // Relative interior distance along the Q = 0 line.
          return std::min(y.x() - r.p_lo, r.p_hi - y.x());
        } else if constexpr (std::is_same_v<T, DiskIntervalSum>) {
          const Vec2 c(std::clamp(y.x(), r.a, r.b), 0.0);
          return std::min({y.x() - r.p_lo, r.p_hi - y.x(), r.r - (y - c).norm()});
        } else if constexpr (std::is_same_v<T, Singleton>) {
          return 0.0;
        } else if constexpr (std::is_same_v<T, ConvexPolygon>) {
          const auto& v = r.vertices;
          if (v.size() < 3) return 0.0;
          double d = std::numeric_limits<double>::infinity();
          for (std::size_t i = 0; i < v.size(); ++i) {
            const Vec2& p0 = v[i];
            const Vec2& p1 = v[(i + 1) % v.size()];
            const Vec2 e = p1 - p0;
            const double len = e.norm();
            if (len == 0.0) continue;
            const double cross = e.x() * (y.y() - p0.y()) - e.y() * (y.x() - p0.x());
            d = std::min(d, cross / len);
          }
          return d;
        } else {
          return 0.0;
        }
      },
      region);
}

Vec2 pull_to_interior(const OperatingRegion& region, const Vec2& y, double margin) {
  Vec2 p = project(region, y);
  if (margin <= 0.0 || boundary_distance(region, p) >= margin) return p;
  const Vec2 c = region_center(region);
  // Binary search for the smallest pull that reaches the margin band; the
  // center may itself sit closer than margin, in which case it wins.
  if (boundary_distance(region, c) <= margin) return c;
  double lo = 0.0, hi = 1.0;
  for (int it = 0; it < 60; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (boundary_distance(region, Vec2(p + mid * (c - p))) >= margin)
      hi = mid;
    else
      lo = mid;
  }
  return p + hi * (c - p);
}

}  // namespace derflow
