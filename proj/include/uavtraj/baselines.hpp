#pragma once

// Classic image-space predictors: a constant-velocity Kalman filter with a
// discrete white-noise-acceleration process model, and straight-line
// extrapolation of the observation window. Time unit is one frame.

#include <Eigen/Core>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "uavtraj/camera.hpp"

namespace uavtraj::baselines {

using camera::Pixel;

class BaselineError : public std::runtime_error {
 public:
  enum class Kind { kNonFiniteInput, kTooFewObservations, kInvalidParameters };
  BaselineError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

struct KalmanParams {
  double process_noise = 0.5;         // sigma^2_CV, px^2 / frame^4 acceleration-increment intensity
  double observation_variance = 2.25; // R = (1.5 px)^2
  double initial_velocity_variance = 100.0;
};

/// Mean (u, v, du, dv) and covariance of the constant-velocity model.
struct CvKalmanState {
  Eigen::Vector4d mean = Eigen::Vector4d::Zero();
  Eigen::Matrix4d covariance = Eigen::Matrix4d::Identity();
  KalmanParams params;
};

Eigen::Matrix4d transition_matrix();
Eigen::Matrix4d process_covariance(double process_noise);

CvKalmanState kalman_filter(std::span<const Pixel> observations, const KalmanParams& params = {});

struct KalmanForecast {
  std::vector<Pixel> means;
  std::vector<Eigen::Matrix2d> covariances;  // position covariance per step
};

KalmanForecast kalman_forecast(const CvKalmanState& state, int steps);

enum class LinearFit { kLeastSquares, kEndpoints };

/// Continues from the last observation at the window's fitted per-frame velocity.
std::vector<Pixel> linear_forecast(std::span<const Pixel> observations, int steps,
                                   LinearFit fit = LinearFit::kLeastSquares);

}  // namespace uavtraj::baselines
