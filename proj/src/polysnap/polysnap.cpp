#include "uavtraj/polysnap.hpp"

#include <Eigen/LU>
#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <sstream>

namespace uavtraj::polysnap {
namespace {

using Kind = PolysnapError::Kind;

constexpr double kMinSegmentLength = 1e-9;
constexpr double kMinReciprocalCondition = 1e-14;

int derivative_order_for(const SolverConfig& config, int channel) {
  return channel == kYawChannel ? config.yaw_derivative : config.position_derivative;
}

double weight_for(double position_weight, double yaw_weight, int channel) {
  return channel == kYawChannel ? yaw_weight : position_weight;
}

double waypoint_value(const Waypoint& w, int channel) {
  return channel == kYawChannel ? w.yaw : w.position[channel];
}

// Gram matrix of the k-th time derivative over one segment of duration T in
// normalized time: int_0^T (d^k p/dt^k)^2 dt = T^(1-2k) int_0^1 (d^k p/dtau^k)^2 dtau.
Eigen::MatrixXd segment_gram(int order, int k, double duration, double weight) {
  const int size = order + 1;
  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(size, size);
  const double scale = weight / std::pow(duration, 2 * k - 1);
  for (int i = k; i < size; ++i) {
    for (int j = k; j < size; ++j) {
      gram(i, j) = scale * falling_factorial(i, k) * falling_factorial(j, k) / static_cast<double>(i + j - 2 * k + 1);
    }
  }
  return gram;
}

// Row of d^d p/dtau^d evaluated at tau (0 or 1) over the segment's coefficients.
void fill_derivative_row(Eigen::Ref<Eigen::RowVectorXd, 0, Eigen::InnerStride<>> row, int order, int d, double tau, double scale) {
  for (int i = d; i <= order; ++i) row(i) = scale * falling_factorial(i, d) * std::pow(tau, i - d);
}

// Symmetric Ruiz equilibration: returns D such that D*K*D has rows of unit max-norm.
Eigen::VectorXd equilibrate(Eigen::MatrixXd& kkt) {
  const Eigen::Index size = kkt.rows();
  Eigen::VectorXd total = Eigen::VectorXd::Ones(size);
  for (int pass = 0; pass < 20; ++pass) {
    Eigen::VectorXd step(size);
    double worst = 0.0;
    for (Eigen::Index i = 0; i < size; ++i) {
      const double norm = kkt.row(i).cwiseAbs().maxCoeff();
      step(i) = norm > 0.0 ? 1.0 / std::sqrt(norm) : 1.0;
      worst = std::max(worst, std::abs(1.0 - norm));
    }
    if (worst < 1e-3) break;
    kkt = step.asDiagonal() * kkt * step.asDiagonal();
    total = total.cwiseProduct(step);
  }
  return total;
}

}  // namespace

double falling_factorial(int i, int d) {
  if (d > i) return 0.0;
  double value = 1.0;
  for (int q = 0; q < d; ++q) value *= static_cast<double>(i - q);
  return value;
}

SegmentedTimeline::SegmentedTimeline(std::vector<double> knots) : knots_(std::move(knots)) {
  if (knots_.size() < 2) throw PolysnapError(Kind::kInvalidInput, "timeline needs at least two knots");
  for (std::size_t j = 0; j + 1 < knots_.size(); ++j) {
    if (!std::isfinite(knots_[j]) || !std::isfinite(knots_[j + 1]) || !(knots_[j + 1] > knots_[j]))
      throw PolysnapError(Kind::kInvalidInput, "timeline knots must be finite and strictly increasing");
  }
}

std::size_t SegmentedTimeline::locate(double t) const {
  if (!(t >= knots_.front() && t <= knots_.back())) {
    std::ostringstream msg;
    msg << "time " << t << " outside [" << knots_.front() << ", " << knots_.back() << "]";
    throw PolysnapError(Kind::kOutOfDomain, msg.str());
  }
  const auto it = std::lower_bound(knots_.begin() + 1, knots_.end(), t);
  return static_cast<std::size_t>(std::distance(knots_.begin() + 1, it));
}

SegmentedTimeline SegmentedTimeline::scaled(double factor) const {
  std::vector<double> knots(knots_);
  for (double& k : knots) k *= factor;
  return SegmentedTimeline(std::move(knots));
}

PiecewiseTrajectory::PiecewiseTrajectory(SegmentedTimeline timeline, const SolverConfig& config,
                                         Eigen::VectorXd decision)
    : timeline_(std::move(timeline)), config_(config), decision_(std::move(decision)) {
  const auto expected = static_cast<Eigen::Index>(kChannels * timeline_.segments() * (config_.order + 1));
  if (decision_.size() != expected)
    throw PolysnapError(Kind::kInvalidInput, "decision vector size does not match timeline and order");
}

double PiecewiseTrajectory::coefficient(std::size_t segment, int channel, int power) const {
  const auto m = static_cast<Eigen::Index>(timeline_.segments());
  return decision_((channel * m + static_cast<Eigen::Index>(segment)) * (config_.order + 1) + power);
}

Eigen::Vector4d PiecewiseTrajectory::evaluate_segment(std::size_t segment, double tau, int derivative_order) const {
  Eigen::Vector4d out = Eigen::Vector4d::Zero();
  const int n = config_.order;
  if (derivative_order > n) return out;
  const double time_scale = std::pow(timeline_.duration(segment), -derivative_order);
  for (int c = 0; c < kChannels; ++c) {
    double acc = 0.0;
    for (int i = n; i >= derivative_order; --i)
      acc = acc * tau + falling_factorial(i, derivative_order) * coefficient(segment, c, i);
    out[c] = acc * time_scale;
  }
  return out;
}

Eigen::Vector4d PiecewiseTrajectory::evaluate(double t, int derivative_order) const {
  if (derivative_order < 0) throw PolysnapError(Kind::kInvalidInput, "negative derivative order");
  const std::size_t segment = timeline_.locate(t);
  const double tau = (t - timeline_.knots()[segment]) / timeline_.duration(segment);
  return evaluate_segment(segment, std::clamp(tau, 0.0, 1.0), derivative_order);
}

SegmentedTimeline allocate_times(std::span<const Waypoint> waypoints, double speed) {
  if (waypoints.size() < 2) throw PolysnapError(Kind::kInvalidInput, "need at least two waypoints");
  if (!(speed > 0.0) || !std::isfinite(speed)) throw PolysnapError(Kind::kInvalidInput, "speed must be positive");
  std::vector<double> knots{0.0};
  for (std::size_t j = 0; j + 1 < waypoints.size(); ++j) {
    const double distance = (waypoints[j + 1].position - waypoints[j].position).norm();
    if (!(distance >= kMinSegmentLength)) {
      std::ostringstream msg;
      msg << "waypoints " << j << " and " << j + 1 << " coincide";
      throw PolysnapError(Kind::kZeroLengthSegment, msg.str());
    }
    knots.push_back(knots.back() + distance / speed);
  }
  return SegmentedTimeline(std::move(knots));
}

QpSystem build_qp(std::span<const Waypoint> waypoints, const SegmentedTimeline& timeline, const SolverConfig& config) {
  const std::size_t m = timeline.segments();
  if (waypoints.size() != m + 1) throw PolysnapError(Kind::kInvalidInput, "waypoint count must equal knot count");
  for (const auto& w : waypoints) {
    if (!w.position.allFinite() || !std::isfinite(w.yaw))
      throw PolysnapError(Kind::kInvalidInput, "waypoint has non-finite components");
  }
  const int n = config.order;
  const int k_max = std::max(config.position_derivative, config.yaw_derivative);
  if (config.position_derivative < 1 || config.yaw_derivative < 1)
    throw PolysnapError(Kind::kInvalidInput, "derivative orders must be positive");
  if (n < 2 * k_max - 1)
    throw PolysnapError(Kind::kInsufficientOrder, "polynomial order must be at least 2*k - 1");

  QpSystem qp;
  qp.order = n;
  qp.segments = m;
  const Eigen::Index per_channel = qp.coefficients_per_channel();
  const Eigen::Index d = kChannels * per_channel;

  // Rows per channel: 2 per segment (endpoints), (k-1) per interior knot, 2(k-1) boundary.
  Eigen::Index rows = 0;
  for (int c = 0; c < kChannels; ++c) {
    qp.row_begin[c] = rows;
    const int k = derivative_order_for(config, c);
    rows += static_cast<Eigen::Index>(2 * m + (k - 1) * (m - 1) + 2 * (k - 1));
  }
  qp.row_begin[kChannels] = rows;

  qp.cost = Eigen::MatrixXd::Zero(d, d);
  qp.constraints = Eigen::MatrixXd::Zero(rows, d);
  qp.rhs = Eigen::VectorXd::Zero(rows);

  for (int c = 0; c < kChannels; ++c) {
    const int k = derivative_order_for(config, c);
    const double weight = weight_for(config.position_weight, config.yaw_weight, c);
    for (std::size_t j = 0; j < m; ++j) {
      const Eigen::Index base = qp.index(c, j, 0);
      qp.cost.block(base, base, n + 1, n + 1) = segment_gram(n, k, timeline.duration(j), weight);
    }

    Eigen::Index row = qp.row_begin[c];
    for (std::size_t j = 0; j < m; ++j) {
      fill_derivative_row(qp.constraints.row(row).segment(qp.index(c, j, 0), n + 1), n, 0, 0.0, 1.0);
      qp.rhs(row++) = waypoint_value(waypoints[j], c);
      fill_derivative_row(qp.constraints.row(row).segment(qp.index(c, j, 0), n + 1), n, 0, 1.0, 1.0);
      qp.rhs(row++) = waypoint_value(waypoints[j + 1], c);
    }
    // Rest-to-rest boundary derivatives, rows scaled by T^d.
    for (int order = 1; order < k; ++order) {
      fill_derivative_row(qp.constraints.row(row++).segment(qp.index(c, 0, 0), n + 1), n, order, 0.0, 1.0);
      fill_derivative_row(qp.constraints.row(row++).segment(qp.index(c, m - 1, 0), n + 1), n, order, 1.0, 1.0);
    }
    // Interior continuity of derivatives 1..k-1, rows scaled by T_j^d.
    for (std::size_t j = 0; j + 1 < m; ++j) {
      const double ratio = timeline.duration(j) / timeline.duration(j + 1);
      for (int order = 1; order < k; ++order) {
        fill_derivative_row(qp.constraints.row(row).segment(qp.index(c, j, 0), n + 1), n, order, 1.0, 1.0);
        fill_derivative_row(qp.constraints.row(row).segment(qp.index(c, j + 1, 0), n + 1), n, order, 0.0,
                            -std::pow(ratio, order));
        ++row;
      }
    }
  }
  return qp;
}

Eigen::VectorXd solve_qp(const QpSystem& qp) {
  const Eigen::Index per_channel = qp.coefficients_per_channel();
  Eigen::VectorXd decision(kChannels * per_channel);
  for (int c = 0; c < kChannels; ++c) {
    const Eigen::Index col = c * per_channel;
    const Eigen::Index row = qp.row_begin[c];
    const Eigen::Index rows = qp.row_begin[c + 1] - row;
    const Eigen::Index size = per_channel + rows;

    Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(size, size);
    kkt.topLeftCorner(per_channel, per_channel) = 2.0 * qp.cost.block(col, col, per_channel, per_channel);
    const auto a = qp.constraints.block(row, col, rows, per_channel);
    kkt.topRightCorner(per_channel, rows) = a.transpose();
    kkt.bottomLeftCorner(rows, per_channel) = a;
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(size);
    rhs.tail(rows) = qp.rhs.segment(row, rows);

    const Eigen::VectorXd scaling = equilibrate(kkt);
    const Eigen::PartialPivLU<Eigen::MatrixXd> lu(kkt);
    const double rcond = lu.rcond();
    if (!(rcond >= kMinReciprocalCondition)) {
      std::ostringstream msg;
      msg << "KKT system of channel " << c << " is numerically singular (rcond " << rcond << ")";
      throw PolysnapError(Kind::kSingularKkt, msg.str());
    }
    const Eigen::VectorXd solution = scaling.cwiseProduct(lu.solve(scaling.cwiseProduct(rhs)));
    decision.segment(col, per_channel) = solution.head(per_channel);
  }
  return decision;
}

PiecewiseTrajectory solve_min_snap(std::span<const Waypoint> waypoints, const SegmentedTimeline& timeline,
                                   const SolverConfig& config) {
  const QpSystem qp = build_qp(waypoints, timeline, config);
  return PiecewiseTrajectory(timeline, config, solve_qp(qp));
}

double snap_cost(const PiecewiseTrajectory& trajectory, double position_weight, double yaw_weight) {
  const auto& timeline = trajectory.timeline();
  const int n = trajectory.order();
  double cost = 0.0;
  for (int c = 0; c < kChannels; ++c) {
    const int k = derivative_order_for(trajectory.config(), c);
    const double weight = weight_for(position_weight, yaw_weight, c);
    for (std::size_t j = 0; j < timeline.segments(); ++j) {
      const Eigen::MatrixXd gram = segment_gram(n, k, timeline.duration(j), weight);
      Eigen::VectorXd coeffs(n + 1);
      for (int i = 0; i <= n; ++i) coeffs(i) = trajectory.coefficient(j, c, i);
      cost += coeffs.dot(gram * coeffs);
    }
  }
  return cost;
}

void write_qp(std::ostream& out, const QpSystem& qp) {
  const auto dump = [&out](const char* name, const Eigen::MatrixXd& matrix) {
    out << "# " << name << ' ' << matrix.rows() << ' ' << matrix.cols() << '\n';
    out << std::setprecision(17);
    for (Eigen::Index i = 0; i < matrix.rows(); ++i) {
      for (Eigen::Index j = 0; j < matrix.cols(); ++j) out << (j ? " " : "") << matrix(i, j);
      out << '\n';
    }
  };
  out << "# segments " << qp.segments << " order " << qp.order << " layout channel-major\n";
  dump("Q", qp.cost);
  dump("A", qp.constraints);
  dump("b", qp.rhs);
}

}  // namespace uavtraj::polysnap
