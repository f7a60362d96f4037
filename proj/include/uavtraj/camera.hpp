#pragma once

// Distortion-free pinhole camera on a tripod near the ground.
//
// World frame: x right, y forward, z up. Camera frame: X right, Y down,
// Z along the optical axis. The optical axis is pitched up from horizontal by
// the inclination angle; camera yaw and roll are zero. The camera center is
// at (0, 0, height).

#include <Eigen/Core>
#include <array>
#include <stdexcept>
#include <string>

namespace uavtraj::camera {

class CameraError : public std::runtime_error {
 public:
  enum class Kind { kInvalidParameters, kBehindCamera, kInvalidRange };
  CameraError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

struct Pixel {
  double u = 0.0;
  double v = 0.0;
  friend bool operator==(const Pixel&, const Pixel&) = default;
};

struct Intrinsics {
  double focal_px = 1240.0;
  double principal_x = 579.0;
  double principal_y = 212.0;
  int width = 1176;
  int height = 640;
};

struct Extrinsics {
  double height_m = 1.5;
  double inclination_rad = 0.0;  // pitch of the optical axis above horizontal
};

class CameraRig {
 public:
  CameraRig(const Intrinsics& intrinsics, const Extrinsics& extrinsics);

  const Intrinsics& intrinsics() const noexcept { return intrinsics_; }
  const Extrinsics& extrinsics() const noexcept { return extrinsics_; }

  /// World-to-camera rotation (rows are the camera axes in world coordinates).
  const Eigen::Matrix3d& rotation() const noexcept { return rotation_; }
  const Eigen::Vector3d& center() const noexcept { return center_; }
  /// 3x4 world-to-camera rigid transform [R | -R C].
  Eigen::Matrix<double, 3, 4> world_to_camera() const;

  Eigen::Vector3d to_camera(const Eigen::Vector3d& world) const { return rotation_ * (world - center_); }
  Eigen::Vector3d to_world(const Eigen::Vector3d& cam) const { return rotation_.transpose() * cam + center_; }

  /// Pixel of a camera-frame point; throws kBehindCamera when Z <= 1e-9 m.
  Pixel project_camera(const Eigen::Vector3d& cam) const;
  Pixel project(const Eigen::Vector3d& world) const { return project_camera(to_camera(world)); }

  /// World point seen at `pixel` with camera-frame depth `depth`.
  Eigen::Vector3d backproject(const Pixel& pixel, double depth) const;

  /// Closed image rectangle test: 0 <= u <= W and 0 <= v <= H.
  bool in_image(const Pixel& pixel) const;

 private:
  Intrinsics intrinsics_;
  Extrinsics extrinsics_;
  Eigen::Matrix3d rotation_;
  Eigen::Vector3d center_;
};

/// Half-space {p : normal . p + offset <= 0}; the normal points outward.
struct Plane {
  Eigen::Vector3d normal = Eigen::Vector3d::Zero();
  double offset = 0.0;
  double signed_distance(const Eigen::Vector3d& p) const { return normal.dot(p) + offset; }
};

struct AxisAlignedBox {
  Eigen::Vector3d lower;
  Eigen::Vector3d upper;
};

class Frustum {
 public:
  enum Face { kNear = 0, kFar, kLeft, kRight, kTop, kBottom };

  Frustum(std::array<Plane, 6> planes, std::array<Eigen::Vector3d, 8> corners, double near, double far);

  const std::array<Plane, 6>& planes() const noexcept { return planes_; }
  /// Near rectangle corners (0..3) then far rectangle corners (4..7), world frame.
  const std::array<Eigen::Vector3d, 8>& corners() const noexcept { return corners_; }
  double near() const noexcept { return near_; }
  double far() const noexcept { return far_; }

  /// Closed-set membership: on a face counts as inside.
  bool contains(const Eigen::Vector3d& point) const;
  AxisAlignedBox bounding_box() const;

 private:
  std::array<Plane, 6> planes_;
  std::array<Eigen::Vector3d, 8> corners_;
  double near_;
  double far_;
};

Frustum make_frustum(const CameraRig& rig, double near, double far);

inline bool contains(const Frustum& frustum, const Eigen::Vector3d& point) { return frustum.contains(point); }

}  // namespace uavtraj::camera
