#pragma once

// Minimum-snap piecewise-polynomial trajectories through timed waypoints.
//
// Each segment j carries four flat-output channels (x, y, z, yaw) as order-n
// polynomials in normalized time tau = (t - t_j) / T_j in [0, 1]. The
// equality-constrained QP min c'Qc s.t. Ac = b is solved through its KKT
// system. Decision vector layout is channel-major:
//   index(channel, segment, i) = (channel * m + segment) * (n + 1) + i

#include <Eigen/Core>
#include <array>
#include <cstddef>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace uavtraj::polysnap {

inline constexpr int kChannels = 4;
inline constexpr int kYawChannel = 3;

class PolysnapError : public std::runtime_error {
 public:
  enum class Kind { kInvalidInput, kZeroLengthSegment, kInsufficientOrder, kSingularKkt, kOutOfDomain };
  PolysnapError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

struct Waypoint {
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  double yaw = 0.0;  // radians, [-pi, pi]
};

/// Strictly increasing knot times t_0 < t_1 < ... < t_m.
class SegmentedTimeline {
 public:
  explicit SegmentedTimeline(std::vector<double> knots);

  std::span<const double> knots() const noexcept { return knots_; }
  std::size_t segments() const noexcept { return knots_.size() - 1; }
  double start() const noexcept { return knots_.front(); }
  double end() const noexcept { return knots_.back(); }
  double duration(std::size_t segment) const { return knots_[segment + 1] - knots_[segment]; }

  /// Segment owning time t; a knot belongs to the segment on its left, except t_0.
  std::size_t locate(double t) const;

  SegmentedTimeline scaled(double factor) const;

 private:
  std::vector<double> knots_;
};

struct SolverConfig {
  int order = 7;                 // polynomial order n
  int position_derivative = 4;   // k_r
  int yaw_derivative = 2;        // k_psi
  double position_weight = 1.0;  // c_r
  double yaw_weight = 1.0;       // c_psi
};

struct QpSystem {
  Eigen::MatrixXd cost;         // Q, d x d
  Eigen::MatrixXd constraints;  // A, e x d
  Eigen::VectorXd rhs;          // b
  int order = 7;
  std::size_t segments = 0;
  // Rows of A belonging to each channel: [row_begin[c], row_begin[c + 1]).
  std::array<Eigen::Index, kChannels + 1> row_begin{};

  Eigen::Index coefficients_per_channel() const { return static_cast<Eigen::Index>(segments) * (order + 1); }
  Eigen::Index index(int channel, std::size_t segment, int power) const {
    return (channel * static_cast<Eigen::Index>(segments) + static_cast<Eigen::Index>(segment)) * (order + 1) + power;
  }
};

class PiecewiseTrajectory {
 public:
  PiecewiseTrajectory(SegmentedTimeline timeline, const SolverConfig& config, Eigen::VectorXd decision);

  const SegmentedTimeline& timeline() const noexcept { return timeline_; }
  int order() const noexcept { return config_.order; }
  const SolverConfig& config() const noexcept { return config_; }

  /// Coefficient of tau^power for (segment, channel).
  double coefficient(std::size_t segment, int channel, int power) const;

  /// Channel-major decision vector matching QpSystem::index.
  const Eigen::VectorXd& decision() const noexcept { return decision_; }

  /// d^k/dt^k of (x, y, z, yaw) at t. Throws kOutOfDomain outside [t_0, t_m].
  Eigen::Vector4d evaluate(double t, int derivative_order) const;

  /// Same as evaluate() but on an explicit segment (used for one-sided limits at knots).
  Eigen::Vector4d evaluate_segment(std::size_t segment, double tau, int derivative_order) const;

 private:
  SegmentedTimeline timeline_;
  SolverConfig config_;
  Eigen::VectorXd decision_;
};

SegmentedTimeline allocate_times(std::span<const Waypoint> waypoints, double speed);

QpSystem build_qp(std::span<const Waypoint> waypoints, const SegmentedTimeline& timeline,
                  const SolverConfig& config = {});

PiecewiseTrajectory solve_min_snap(std::span<const Waypoint> waypoints, const SegmentedTimeline& timeline,
                                   const SolverConfig& config = {});

/// Solve a prebuilt QP (channel blocks solved independently).
Eigen::VectorXd solve_qp(const QpSystem& qp);

/// c'Qc for the trajectory's coefficients with weights c_r, c_psi.
double snap_cost(const PiecewiseTrajectory& trajectory, double position_weight = 1.0, double yaw_weight = 1.0);

/// Plain-text dump of Q, A and b (one matrix row per line).
void write_qp(std::ostream& out, const QpSystem& qp);

/// i! / (i - d)!, zero when d > i.
double falling_factorial(int i, int d);

}  // namespace uavtraj::polysnap
