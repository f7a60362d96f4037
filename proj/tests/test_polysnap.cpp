#include <doctest.h>

#include <Eigen/LU>
#include <cmath>
#include <numbers>
#include <sstream>

#include "support/oracles.hpp"
#include "uavtraj/polysnap.hpp"

using namespace uavtraj::polysnap;
using doctest::Approx;

namespace {

std::vector<Waypoint> line_points(std::initializer_list<double> xs) {
  std::vector<Waypoint> w;
  for (double x : xs) w.push_back({Eigen::Vector3d(x, 0.0, 0.0), 0.0});
  return w;
}

}  // namespace

TEST_CASE("allocate_times examples") {
  const std::vector<Waypoint> a{{Eigen::Vector3d(0, 0, 0), 0}, {Eigen::Vector3d(3, 4, 0), 0}};
  CHECK(allocate_times(a, 1.0).duration(0) == Approx(5.0));

  const std::vector<Waypoint> b{{Eigen::Vector3d(0, 0, 0), 0}, {Eigen::Vector3d(2, 0, 0), 0}, {Eigen::Vector3d(4, 0, 0), 0}};
  const auto tb = allocate_times(b, 2.0);
  REQUIRE(tb.knots().size() == 3);
  CHECK(tb.knots()[0] == 0.0);
  CHECK(tb.knots()[1] == Approx(1.0));
  CHECK(tb.knots()[2] == Approx(2.0));

  const std::vector<Waypoint> c{{Eigen::Vector3d(0, 0, 0), 0}, {Eigen::Vector3d(1, 1, 1), 0}};
  CHECK(allocate_times(c, 8.0).duration(0) == Approx(std::sqrt(3.0) / 8.0));
}

TEST_CASE("allocate_times rejects coincident waypoints and bad speeds") {
  const std::vector<Waypoint> same{{Eigen::Vector3d(1, 2, 3), 0}, {Eigen::Vector3d(1, 2, 3), 0}};
  try {
    allocate_times(same, 1.0);
    FAIL("expected an exception");
  } catch (const PolysnapError& e) {
    CHECK(e.kind() == PolysnapError::Kind::kZeroLengthSegment);
  }
  CHECK_THROWS_AS(allocate_times(line_points({0, 1}), 0.0), PolysnapError);
  CHECK_THROWS_AS(allocate_times(line_points({0}), 1.0), PolysnapError);
}

TEST_CASE("timeline validation and knot ownership") {
  CHECK_THROWS_AS(SegmentedTimeline({0.0, 1.0, 1.0}), PolysnapError);
  CHECK_THROWS_AS(SegmentedTimeline({0.0}), PolysnapError);
  const SegmentedTimeline t({0.0, 1.0, 3.0});
  CHECK(t.locate(0.0) == 0);
  CHECK(t.locate(1.0) == 0);
  CHECK(t.locate(1.5) == 1);
  CHECK(t.locate(3.0) == 1);
}

TEST_CASE("segment Gram matrix matches the closed form and quadrature") {
  const double T = 1.7;
  const auto w = line_points({0.0, 2.0});
  const QpSystem qp = build_qp(w, SegmentedTimeline({0.0, T}));
  REQUIRE(qp.cost.rows() == 4 * 8);
  const auto block = qp.cost.block(0, 0, 8, 8);
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j) {
      double expect = 0.0;
      if (i >= 4 && j >= 4) {
        const double fi = falling_factorial(i, 4), fj = falling_factorial(j, 4);
        expect = fi * fj / (i + j - 7) / std::pow(T, 7);
        // Gauss-free check: Simpson on tau^(i-4) tau^(j-4) with 2000 panels.
        double simpson = 0.0;
        const int nseg = 2000;
        for (int s = 0; s <= nseg; ++s) {
          const double tau = static_cast<double>(s) / nseg;
          const double wgt = (s == 0 || s == nseg) ? 1.0 : (s % 2 ? 4.0 : 2.0);
          simpson += wgt * std::pow(tau, i - 4) * std::pow(tau, j - 4);
        }
        simpson *= fi * fj / (3.0 * nseg) / std::pow(T, 7);
        CHECK(block(i, j) == Approx(simpson).epsilon(1e-9));
      }
      CHECK(block(i, j) == Approx(expect).epsilon(1e-12));
    }
  CHECK((qp.cost - qp.cost.transpose()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("build_qp rejects too low an order") {
  SolverConfig cfg;
  cfg.order = 6;
  CHECK_THROWS_AS(build_qp(line_points({0, 1}), SegmentedTimeline({0, 1}), cfg), PolysnapError);
}

TEST_CASE("single-segment rest-to-rest closed form") {
  const auto w = line_points({0.0, 1.0});
  const auto traj = solve_min_snap(w, SegmentedTimeline({0.0, 1.0}));
  const double expect[8] = {0, 0, 0, 0, 35, -84, 70, -20};
  for (int i = 0; i < 8; ++i) CHECK(std::abs(traj.coefficient(0, 0, i) - expect[i]) < 1e-8);
  CHECK(traj.evaluate(0.5, 0)(0) == Approx(0.5));
  CHECK(traj.evaluate(1.0, 0)(0) == Approx(1.0));
  CHECK(snap_cost(traj) == Approx(100800.0).epsilon(1e-9));
  CHECK(snap_cost(traj) == Approx(oracle::simpson_cost(traj)).epsilon(1e-6));
  // Oracle: the same polynomial from the 8x8 interpolation system.
  Eigen::Matrix<double, 8, 8> m = Eigen::Matrix<double, 8, 8>::Zero();
  Eigen::Matrix<double, 8, 1> rhs = Eigen::Matrix<double, 8, 1>::Zero();
  for (int d = 0; d < 4; ++d)
    for (int i = d; i < 8; ++i) {
      m(d, i) = (i == d) ? falling_factorial(i, d) : 0.0;
      m(4 + d, i) = falling_factorial(i, d);
    }
  rhs(4) = 1.0;
  const Eigen::Matrix<double, 8, 1> c = m.fullPivLu().solve(rhs);
  for (int i = 0; i < 8; ++i) CHECK(std::abs(traj.coefficient(0, 0, i) - c(i)) < 1e-10);
}

TEST_CASE("constant waypoints give a constant, zero-cost trajectory") {
  std::vector<Waypoint> w(4, Waypoint{Eigen::Vector3d(1.0, -2.0, 3.0), 0.25});
  const auto traj = solve_min_snap(w, SegmentedTimeline({0.0, 0.7, 2.0, 2.4}));
  for (double t : {0.0, 0.3, 1.1, 2.4}) {
    const auto p = traj.evaluate(t, 0);
    CHECK(p(0) == Approx(1.0));
    CHECK(p(1) == Approx(-2.0));
    CHECK(p(2) == Approx(3.0));
    CHECK(p(3) == Approx(0.25));
  }
  CHECK(std::abs(snap_cost(traj)) < 1e-18);
}

TEST_CASE("two symmetric segments are point-symmetric about (1, 1)") {
  const auto traj = solve_min_snap(line_points({0.0, 1.0, 2.0}), SegmentedTimeline({0.0, 1.0, 2.0}));
  for (int i = 0; i <= 100; ++i) {
    const double s = i / 100.0;
    CHECK(traj.evaluate(1.0 - s, 0)(0) + traj.evaluate(1.0 + s, 0)(0) == Approx(2.0).epsilon(1e-10));
  }
}

TEST_CASE("evaluate: domain, derivative beyond order, waypoint interpolation") {
  std::mt19937_64 rng(11);
  const auto p = oracle::random_snap_problem(rng, 5);
  const auto traj = solve_min_snap(p.waypoints, p.timeline);
  CHECK_THROWS_AS(traj.evaluate(p.timeline.start() - 1e-6, 0), PolysnapError);
  CHECK_THROWS_AS(traj.evaluate(p.timeline.end() + 1e-6, 0), PolysnapError);
  CHECK(traj.evaluate(0.5 * p.timeline.end(), 8).isZero());
  for (std::size_t j = 0; j < p.waypoints.size(); ++j) {
    const auto v = traj.evaluate(p.timeline.knots()[j], 0);
    CHECK((v.head<3>() - p.waypoints[j].position).norm() < 1e-8);
    CHECK(std::abs(v(3) - p.waypoints[j].yaw) < 1e-8);
  }
  // Rest-to-rest: derivatives 1..3 vanish at both ends.
  for (int d = 1; d < 4; ++d) {
    CHECK(traj.evaluate(p.timeline.start(), d).head<3>().norm() < 1e-8);
    CHECK(traj.evaluate(p.timeline.end(), d).head<3>().norm() < 1e-8);
  }
}

TEST_CASE("random problems: continuity, feasibility, optimality") {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 20; ++trial) {
    const auto p = oracle::random_snap_problem(rng, 3 + trial % 5);
    const QpSystem qp = build_qp(p.waypoints, p.timeline);
    const auto traj = solve_min_snap(p.waypoints, p.timeline);
    CHECK(oracle::continuity_error(traj) < 1e-6);
    const Eigen::VectorXd residual = qp.constraints * traj.decision() - qp.rhs;
    CHECK(residual.cwiseAbs().maxCoeff() < 1e-8);
    CHECK(oracle::worst_perturbation_gain(qp, traj.decision(), rng, 20) >= -1e-12);
    CHECK(snap_cost(traj) == Approx(oracle::simpson_cost(traj)).epsilon(1e-6));
  }
}

TEST_CASE("KKT solution matches an iterative constrained minimizer") {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 10; ++trial) {
    const auto p = oracle::random_snap_problem(rng, 2 + trial % 3);
    const QpSystem qp = build_qp(p.waypoints, p.timeline);
    const auto traj = solve_min_snap(p.waypoints, p.timeline);
    const double kkt = traj.decision().dot(qp.cost * traj.decision());
    CHECK(kkt == Approx(oracle::iterative_min_cost(qp)).epsilon(1e-4));
  }
}

TEST_CASE("doubling durations scales the cost by 2^-7") {
  const auto w = line_points({0.0, 1.5, 4.0, 2.0});
  const SegmentedTimeline t({0.0, 1.0, 2.5, 3.2});
  const double base = snap_cost(solve_min_snap(w, t));
  const double doubled = snap_cost(solve_min_snap(w, t.scaled(2.0)));
  CHECK(std::abs(doubled / base - std::pow(2.0, -7)) < 1e-9 * std::pow(2.0, -7));
}

TEST_CASE("weights scale the cost of their channel") {
  std::vector<Waypoint> w = line_points({0.0, 1.0});
  w[1].yaw = 1.0;
  const SegmentedTimeline t({0.0, 1.0});
  const auto traj = solve_min_snap(w, t);
  const double pos = snap_cost(traj, 1.0, 0.0);
  const double yaw = snap_cost(traj, 0.0, 1.0);
  CHECK(pos == Approx(100800.0));
  CHECK(snap_cost(traj, 2.0, 3.0) == Approx(2.0 * pos + 3.0 * yaw));
  CHECK(yaw == Approx(oracle::simpson_cost(traj, 0.0, 1.0)).epsilon(1e-6));
}

TEST_CASE("write_qp emits the three matrices") {
  const QpSystem qp = build_qp(line_points({0.0, 1.0}), SegmentedTimeline({0.0, 1.0}));
  std::ostringstream out;
  write_qp(out, qp);
  const std::string text = out.str();
  CHECK(text.find("# Q 32 32") != std::string::npos);
  CHECK(text.find("# A ") != std::string::npos);
  CHECK(text.find("# b ") != std::string::npos);
}

TEST_CASE("non-finite waypoints are rejected") {
  auto w = line_points({0.0, 1.0});
  w[1].position.x() = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(build_qp(w, SegmentedTimeline({0.0, 1.0})), PolysnapError);
}
