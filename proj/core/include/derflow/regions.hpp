#pragma once

#include <cstdint>
#include <span>
#include <variant>
#include <vector>

#include "derflow/types.hpp"

namespace derflow {

// Feasible-setpoint sets for DERs in the (P, Q) plane. All variants are value
// types; time-varying behaviour is obtained by constructing new regions.

/// {(P,Q) : p_lo <= P <= p_hi, P^2 + Q^2 <= r^2}. Construction requires
/// p_lo <= p_hi and r > 0; P-bounds are tightened into [-r, r] (the set is
/// unchanged) and an empty intersection is rejected.
struct Disk {
  double p_lo, p_hi, r;
  Disk(double p_lo_, double p_hi_, double r_);
};

/// {(P,0) : p_lo <= P <= p_hi}, for devices with controllable active power only.
struct Interval {
  double p_lo, p_hi;
  Interval(double p_lo_, double p_hi_);
};

/// Finite set of implementable setpoints (nonempty).
struct Discrete {
  std::vector<Vec2> points;
  explicit Discrete(std::vector<Vec2> pts);
};

/// Minkowski sum of a Disk and an Interval: the P-slab [p_lo, p_hi] cut out of
/// the set {z : dist(z, segment[(a,0),(b,0)]) <= r}. The cap profile
/// g(P) equals r on [a,b] and follows circular arcs centred at (a,0)/(b,0)
/// outside.
struct DiskIntervalSum {
  double p_lo, p_hi, r, a, b;
  DiskIntervalSum(double p_lo_, double p_hi_, double r_, double a_, double b_);
};

/// Single locked-in setpoint (e.g. an HVAC unit in its minimum off-time).
struct Singleton {
  Vec2 point = Vec2::Zero();
};

/// Convex polygon, vertices counter-clockwise. Degenerate sizes (1 or 2
/// vertices) are allowed and behave as a point / segment.
struct ConvexPolygon {
  std::vector<Vec2> vertices;
};

using OperatingRegion =
    std::variant<Singleton, Disk, Interval, Discrete, DiskIntervalSum, ConvexPolygon>;

/// Cap profile of a DiskIntervalSum at active power P (clamped to the valid
/// band [a - r, b + r]).
double cap_profile(const DiskIntervalSum& s, double p);

/// Euclidean projection onto the region. Exact and closed-form for every
/// variant; ties on Discrete regions are broken by lowest index.
Vec2 project(const OperatingRegion& region, const Vec2& y);

/// Membership test with absolute tolerance on the defining inequalities.
bool contains(const OperatingRegion& region, const Vec2& y, double tol = 1e-12);

/// Exact Minkowski sum of two intervals.
Interval minkowski_interval(const Interval& i1, const Interval& i2);

/// Exact Minkowski sum of a disk-segment and an interval. Requires the disk to
/// satisfy p_lo in [-r, 0] and p_hi in [0, r].
DiskIntervalSum minkowski_disk_interval(const Disk& d, const Interval& i);

/// Inner approximation of the Minkowski sum of two disk-segments, using the
/// largest admissible radius
///   rho = sqrt(r1^2 + r2^2 + alpha - beta1 - beta2
///              + 2 sqrt((r1^2 - beta1)(r2^2 - beta2)))
/// with alpha = [max{p_lo1+p_lo2, min{0, p_hi1+p_hi2}}]^2 and
/// beta_i = min(max{p_lo_i^2, p_hi_i^2}, r_i^2).
Disk minkowski_disk_disk_inner(const Disk& d1, const Disk& d2);

/// Folds a list of Disk / Interval regions into an inner approximation of
/// their Minkowski sum: disks are combined pairwise first, intervals summed
/// exactly, then the two are cross-summed. A single region is returned as-is.
OperatingRegion fold_aggregate(std::span<const OperatingRegion> regions);

/// Convex hull of a discrete set. Returns Singleton for one distinct point,
/// Interval when all points have Q = 0, and a ConvexPolygon otherwise.
OperatingRegion convex_hull(const Discrete& d);

/// Accumulated continuous-minus-implemented setpoint error for a device with
/// discrete commands.
struct ErrorAccumulator {
  Vec2 eps = Vec2::Zero();
  std::uint64_t history_len = 0;
};

struct ErrorDiffusionResult {
  Vec2 x_impl;
  ErrorAccumulator acc;
};

/// One error-diffusion update: the implementable setpoint is the projection of
/// x_cont + eps onto the discrete set, and the residual is folded back into
/// the accumulator.
ErrorDiffusionResult error_diffusion_step(const Discrete& region, const Vec2& x_cont,
                                          const ErrorAccumulator& acc);

/// Interior representative used for Theorem-1 margin pulls: midpoint of the
/// P-extent on the Q = 0 axis (centroid for polygons).
Vec2 region_center(const OperatingRegion& region);

/// Coarse upper bound on the region's extent; used to scale interior margins.
double region_diameter(const OperatingRegion& region);

/// Distance from an interior point to the region boundary (relative to the
/// region's affine hull for flat variants). Negative when y is outside.
double boundary_distance(const OperatingRegion& region, const Vec2& y);

/// Moves y toward region_center until boundary_distance >= margin (or the
/// center is reached). y is projected into the region first.
Vec2 pull_to_interior(const OperatingRegion& region, const Vec2& y, double margin);

}  // namespace derflow
