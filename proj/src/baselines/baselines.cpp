#include "uavtraj/baselines.hpp"

#include <Eigen/LU>
#include <cmath>

namespace uavtraj::baselines {
namespace {

using Kind = BaselineError::Kind;

void check_finite(std::span<const Pixel> observations) {
  for (const auto& p : observations) {
    if (!std::isfinite(p.u) || !std::isfinite(p.v))
      throw BaselineError(Kind::kNonFiniteInput, "observation is not finite");
  }
}

}  // namespace

Eigen::Matrix4d transition_matrix() {
  Eigen::Matrix4d f = Eigen::Matrix4d::Identity();
  f(0, 2) = 1.0;
  f(1, 3) = 1.0;
  return f;
}

Eigen::Matrix4d process_covariance(double q) {
  Eigen::Matrix4d cov = Eigen::Matrix4d::Zero();
  for (int axis = 0; axis < 2; ++axis) {
    cov(axis, axis) = 0.25 * q;
    cov(axis, axis + 2) = 0.5 * q;
    cov(axis + 2, axis) = 0.5 * q;
    cov(axis + 2, axis + 2) = q;
  }
  return cov;
}

CvKalmanState kalman_filter(std::span<const Pixel> observations, const KalmanParams& params) {
  if (observations.empty()) throw BaselineError(Kind::kTooFewObservations, "need at least one observation");
  if (!(params.observation_variance > 0.0) || !(params.process_noise >= 0.0) ||
      !(params.initial_velocity_variance > 0.0))
    throw BaselineError(Kind::kInvalidParameters, "invalid Kalman noise parameters");
  check_finite(observations);

  const Eigen::Matrix4d f = transition_matrix();
  const Eigen::Matrix4d q = process_covariance(params.process_noise);
  Eigen::Matrix<double, 2, 4> h = Eigen::Matrix<double, 2, 4>::Zero();
  h(0, 0) = 1.0;
  h(1, 1) = 1.0;
  const Eigen::Matrix2d r = params.observation_variance * Eigen::Matrix2d::Identity();

  CvKalmanState state;
  state.params = params;
  state.mean << observations[0].u, observations[0].v, 0.0, 0.0;
  state.covariance = Eigen::Vector4d(params.observation_variance, params.observation_variance,
                                     params.initial_velocity_variance, params.initial_velocity_variance)
                         .asDiagonal();

  for (std::size_t t = 1; t < observations.size(); ++t) {
    state.mean = f * state.mean;
    state.covariance = f * state.covariance * f.transpose() + q;

    const Eigen::Vector2d z(observations[t].u, observations[t].v);
    const Eigen::Vector2d innovation = z - h * state.mean;
    const Eigen::Matrix2d s = h * state.covariance * h.transpose() + r;
    const Eigen::Matrix<double, 4, 2> gain = state.covariance * h.transpose() * s.inverse();
    state.mean += gain * innovation;
    // Joseph form keeps the covariance symmetric positive definite.
    const Eigen::Matrix4d i_kh = Eigen::Matrix4d::Identity() - gain * h;
    state.covariance = i_kh * state.covariance * i_kh.transpose() + gain * r * gain.transpose();
    state.covariance = 0.5 * (state.covariance + state.covariance.transpose());
  }
  return state;
}

KalmanForecast kalman_forecast(const CvKalmanState& state, int steps) {
  if (steps < 1) throw BaselineError(Kind::kInvalidParameters, "forecast needs at least one step");
  const Eigen::Matrix4d f = transition_matrix();
  const Eigen::Matrix4d q = process_covariance(state.params.process_noise);
  KalmanForecast out;
  Eigen::Vector4d mean = state.mean;
  Eigen::Matrix4d cov = state.covariance;
  for (int n = 0; n < steps; ++n) {
    mean = f * mean;
    cov = f * cov * f.transpose() + q;
    out.means.push_back({mean(0), mean(1)});
    out.covariances.push_back(cov.topLeftCorner<2, 2>());
  }
  return out;
}

std::vector<Pixel> linear_forecast(std::span<const Pixel> observations, int steps, LinearFit fit) {
  if (observations.size() < 2) throw BaselineError(Kind::kTooFewObservations, "need at least two observations");
  if (steps < 1) throw BaselineError(Kind::kInvalidParameters, "forecast needs at least one step");
  check_finite(observations);
  const std::size_t count = observations.size();

  double du = 0.0;
  double dv = 0.0;
  if (fit == LinearFit::kEndpoints) {
    du = (observations.back().u - observations.front().u) / static_cast<double>(count - 1);
    dv = (observations.back().v - observations.front().v) / static_cast<double>(count - 1);
  } else {
    const double t_mean = 0.5 * static_cast<double>(count - 1);
    double u_mean = 0.0;
    double v_mean = 0.0;
    for (const auto& p : observations) {
      u_mean += p.u;
      v_mean += p.v;
    }
    u_mean /= static_cast<double>(count);
    v_mean /= static_cast<double>(count);
    double sxx = 0.0;
    for (std::size_t t = 0; t < count; ++t) {
      const double dt = static_cast<double>(t) - t_mean;
      sxx += dt * dt;
      du += dt * (observations[t].u - u_mean);
      dv += dt * (observations[t].v - v_mean);
    }
    du /= sxx;
    dv /= sxx;
  }

  std::vector<Pixel> out;
  out.reserve(static_cast<std::size_t>(steps));
  const Pixel& last = observations.back();
  for (int n = 1; n <= steps; ++n) out.push_back({last.u + n * du, last.v + n * dv});
  return out;
}

}  // namespace uavtraj::baselines
