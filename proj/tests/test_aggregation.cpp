#include <doctest.h>

#include <Eigen/SVD>
#include <cmath>
#include <random>

#include "derflow/aggregation.hpp"

using namespace derflow;

namespace {

std::vector<Member> appendix_pair() {
  return {Member{Interval(0.0, 1.0), QuadraticCost{1.0, 1.0, 0.0, 0.0}},
          Member{Interval(0.0, 1.0), QuadraticCost{1.0, 1.0, 0.0, 0.0}}};
}

double total_cost(std::span<const Member> members, std::span<const Vec2> xs) {
  double v = 0.0;
  for (std::size_t i = 0; i < members.size(); ++i) v += members[i].cost.eval(xs[i]);
  return v;
}

}  // namespace

TEST_CASE("two unit-quadratic members split an aggregate command evenly") {
  const auto members = appendix_pair();
  const auto res = disaggregate(members, Vec2(1.0, 0.0), Vec2::Zero(), 1e-10, 20000);
  REQUIRE(res.converged);
  CHECK(res.xi.x() == doctest::Approx(-1.0).epsilon(1e-8));
  CHECK(res.xi.y() == doctest::Approx(0.0).epsilon(1e-8));
  CHECK(res.member_setpoints[0].x() == doctest::Approx(0.5).epsilon(1e-8));
  CHECK(res.member_setpoints[1].x() == doctest::Approx(0.5).epsilon(1e-8));
  CHECK(aggregate_gradient(res).x() == doctest::Approx(1.0).epsilon(1e-8));

  const auto half = disaggregate(members, Vec2(0.5, 0.0), Vec2::Zero(), 1e-10, 20000);
  CHECK(aggregate_gradient(half).x() == doctest::Approx(0.5).epsilon(1e-7));
}

TEST_CASE("single member with zero cost passes the command through") {
  const std::vector<Member> members{Member{Disk(-1.0, 1.0, 1.0), QuadraticCost{}}};
  const auto res = disaggregate(members, Vec2(0.3, 0.4), Vec2::Zero());
  REQUIRE(res.converged);
  CHECK(res.member_setpoints[0] == Vec2(0.3, 0.4));
  CHECK(res.xi == Vec2(0.0, 0.0));
  CHECK(aggregate_gradient(res) == Vec2(0.0, 0.0));
}

TEST_CASE("three asymmetric interval members match a brute-force grid") {
  const std::vector<Member> members{
      Member{Interval(0.0, 1.0), QuadraticCost{2.0, 0.0, 0.2, 0.0}},
      Member{Interval(-0.5, 0.5), QuadraticCost{1.0, 0.0, -0.1, 0.0}},
      Member{Interval(0.0, 2.0), QuadraticCost{5.0, 0.0, 1.0, 0.0}}};
  const Vec2 xbar(1.2, 0.0);
  const auto res = disaggregate(members, xbar, Vec2::Zero(), 1e-10, 50000);
  REQUIRE(res.converged);

  const double pitch = 1e-3;
  double best = std::numeric_limits<double>::infinity();
  Vec2 best_x1, best_x2;
  for (double p1 = 0.0; p1 <= 1.0 + pitch / 2; p1 += pitch) {
    for (double p2 = -0.5; p2 <= 0.5 + pitch / 2; p2 += pitch) {
      const double p3 = xbar.x() - p1 - p2;
      if (p3 < 0.0 || p3 > 2.0) continue;
      const std::vector<Vec2> xs{Vec2(p1, 0), Vec2(p2, 0), Vec2(p3, 0)};
      const double v = total_cost(members, xs);
      if (v < best) best = v;
    }
  }
  CHECK(res.value_primal <= best + 1e-6);
  CHECK(std::abs(res.value_primal - best) <= 1e-4);
}

TEST_CASE("inner argmin equals a dense grid for anisotropic costs on a disk") {
  std::mt19937 rng(41);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const Disk disk(-0.6, 0.8, 1.0);
  for (int inst = 0; inst < 20; ++inst) {
    const QuadraticCost cost{0.5 + std::abs(u(rng)) * 3.0, 0.5 + std::abs(u(rng)) * 3.0, u(rng),
                             u(rng)};
    const Vec2 xi(2.0 * u(rng), 2.0 * u(rng));
    const Vec2 x = cost_linear_argmin(OperatingRegion{disk}, cost, xi);
    REQUIRE(contains(OperatingRegion{disk}, x, 1e-9));
    const double val = cost.eval(x) + xi.dot(x);

    const double pitch = 2e-3;
    double best = std::numeric_limits<double>::infinity();
    for (double p = disk.p_lo; p <= disk.p_hi + pitch / 2; p += pitch) {
      const double q_max = std::sqrt(std::max(0.0, disk.r * disk.r - p * p));
      for (double q = -q_max; q <= q_max + pitch / 2; q += pitch) {
        const Vec2 y(std::clamp(p, disk.p_lo, disk.p_hi), std::clamp(q, -q_max, q_max));
        best = std::min(best, cost.eval(y) + xi.dot(y));
      }
    }
    CHECK(val <= best + 1e-8);
  }
}

TEST_CASE("finite differences of the aggregate cost match the returned dual") {
  std::mt19937 rng(43);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double delta = 1e-4;

  for (int inst = 0; inst < 15; ++inst) {
    const int n = 2 + static_cast<int>(u(rng) * 3.0);
    std::vector<Member> members;
    std::vector<OperatingRegion> foldable;
    for (int i = 0; i < n; ++i) {
      const QuadraticCost cost{0.5 + 2.0 * u(rng), 0.5 + 2.0 * u(rng), u(rng) - 0.5,
                               u(rng) - 0.5};
      if (u(rng) < 0.5) {
        const double r = 0.5 + u(rng);
        const Disk d(-r * u(rng), r * u(rng), r);
        members.push_back(Member{d, cost});
        foldable.push_back(d);
      } else {
        const Interval iv(-u(rng), u(rng));
        members.push_back(Member{iv, cost});
        foldable.push_back(iv);
      }
    }
    const OperatingRegion folded = fold_aggregate(foldable);
    const Vec2 center = region_center(folded);
    const Vec2 xbar = pull_to_interior(folded, center, 1e-2 * region_diameter(folded));

    const auto mid = disaggregate(members, xbar, Vec2::Zero(), 1e-12, 200000);
    REQUIRE(mid.converged);
    const Vec2 grad = aggregate_gradient(mid);

    for (int axis = 0; axis < 2; ++axis) {
      if (std::holds_alternative<Interval>(folded) && axis == 1) continue;  // flat direction
      Vec2 e = Vec2::Zero();
      e(axis) = delta;
      const auto plus = disaggregate(members, Vec2(xbar + e), mid.xi, 1e-12, 200000);
      const auto minus = disaggregate(members, Vec2(xbar - e), mid.xi, 1e-12, 200000);
      REQUIRE(plus.converged);
      REQUIRE(minus.converged);
      const double fd = (plus.value_dual - minus.value_dual) / (2.0 * delta);
      const double scale = std::max(1.0, std::abs(grad(axis)));
      CHECK(std::abs(fd - grad(axis)) <= 1e-3 * scale);
    }
  }
}

TEST_CASE("dual is Lipschitz along interior segments") {
  const std::vector<Member> members{
      Member{Disk(-0.5, 0.5, 1.0), QuadraticCost{1.0, 1.0, 0.0, 0.0}},
      Member{Interval(-0.5, 1.0), QuadraticCost{2.0, 0.0, 0.3, 0.0}}};
  const double l1 = estimate_dual_lipschitz(members, Vec2(-0.2, 0.0), Vec2(0.6, 0.2), 8, 64);
  const double l2 = estimate_dual_lipschitz(members, Vec2(-0.2, 0.0), Vec2(0.6, 0.2), 64, 128);
  CHECK(l1 > 0.0);
  CHECK(std::abs(l1 - l2) <= 0.25 * std::max(l1, l2));
}

TEST_CASE("dual norm respects the pseudo-inverse bound") {
  std::mt19937 rng(47);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int inst = 0; inst < 10; ++inst) {
    const int n = 2 + static_cast<int>(u(rng) * 3.0);
    std::vector<Member> members;
    std::vector<OperatingRegion> foldable;
    for (int i = 0; i < n; ++i) {
      const double r = 0.5 + u(rng);
      const Disk d(-r * 0.9, r * 0.9, r);
      members.push_back(Member{d, QuadraticCost{0.5 + u(rng), 0.5 + u(rng), u(rng) - 0.5,
                                                u(rng) - 0.5}});
      foldable.push_back(d);
    }
    const OperatingRegion folded = fold_aggregate(foldable);
    const Vec2 xbar =
        pull_to_interior(folded, region_center(folded), 0.05 * region_diameter(folded));
    const auto res = disaggregate(members, xbar, Vec2::Zero(), 1e-10, 100000);
    REQUIRE(res.converged);

    // ||xi|| <= ||(H^T)^+|| max ||grad F||; H = [I2 ... I2] so the
    // pseudo-inverse norm is 1/sqrt(n).
    double max_grad = 0.0;
    for (const auto& m : members) {
      const auto* d = std::get_if<Disk>(&m.region);
      double worst = 0.0;
      for (int k = 0; k <= 500; ++k) {
        const double p = d->p_lo + (d->p_hi - d->p_lo) * k / 500.0;
        const double q = std::sqrt(std::max(0.0, d->r * d->r - p * p));
        worst = std::max({worst, m.cost.grad(Vec2(p, q)).norm(),
                          m.cost.grad(Vec2(p, -q)).norm()});
      }
      max_grad = std::max(max_grad, worst);
    }
    Eigen::MatrixXd H(2, 2 * n);
    for (int i = 0; i < n; ++i) H.middleCols(2 * i, 2) = Eigen::Matrix2d::Identity();
    const double pinv_norm = 1.0 / H.jacobiSvd().singularValues().minCoeff();
    // The stacked gradient norm is at most sqrt(n) times the worst member.
    CHECK(res.xi.norm() <= pinv_norm * std::sqrt(double(n)) * max_grad + 1e-6);
  }
}

TEST_CASE("returned member setpoints are always feasible") {
  std::mt19937 rng(53);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int inst = 0; inst < 30; ++inst) {
    std::vector<Member> members{
        Member{Disk(-0.4, 0.7, 0.9), QuadraticCost{1.0 + u(rng), 1.0, 0.1, -0.2}},
        Member{Interval(-0.5, 0.5), QuadraticCost{2.0, 0.0, 0.0, 0.0}},
        Member{Singleton{Vec2(0.25, 0.0)}, QuadraticCost{1.0, 1.0, 0.0, 0.0}}};
    const Vec2 xbar(u(rng), 0.3 * (u(rng) - 0.5));
    DisaggregationResult res;
    try {
      res = disaggregate(members, xbar, Vec2::Zero(), 1e-9, 20000);
    } catch (const InfeasibleError&) {
      continue;
    }
    for (std::size_t i = 0; i < members.size(); ++i)
      CHECK(contains(members[i].region, res.member_setpoints[i], 1e-9));
    // Locked member pinned to its point.
    CHECK(res.member_setpoints[2] == Vec2(0.25, 0.0));
  }
}

TEST_CASE("infeasible aggregate setpoints are rejected") {
  const auto members = appendix_pair();
  CHECK_THROWS_AS((void)disaggregate(members, Vec2(5.0, 0.0), Vec2::Zero()), InfeasibleError);
}

TEST_CASE("non-converged solves surface the flag") {
  const auto members = appendix_pair();
  const auto res = disaggregate(members, Vec2(1.0, 0.0), Vec2(1000.0, 0.0), 1e-14, 1);
  CHECK_FALSE(res.converged);
  CHECK(res.gap > 1e-14);
}
