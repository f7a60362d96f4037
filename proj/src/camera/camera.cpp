#include "uavtraj/camera.hpp"

#include <cmath>
#include <sstream>

namespace uavtraj::camera {
namespace {

using Kind = CameraError::Kind;

constexpr double kMinDepth = 1e-9;
// Points within rounding distance of a face count as on it.
constexpr double kFaceTolerance = 1e-12;

}  // namespace

CameraRig::CameraRig(const Intrinsics& intrinsics, const Extrinsics& extrinsics)
    : intrinsics_(intrinsics), extrinsics_(extrinsics) {
  if (!(intrinsics.focal_px > 0.0) || intrinsics.width <= 0 || intrinsics.height <= 0 ||
      !(intrinsics.principal_x >= 0.0 && intrinsics.principal_x < intrinsics.width) ||
      !(intrinsics.principal_y >= 0.0 && intrinsics.principal_y < intrinsics.height))
    throw CameraError(Kind::kInvalidParameters, "invalid camera intrinsics");
  if (!(extrinsics.height_m > 0.0) || !std::isfinite(extrinsics.inclination_rad))
    throw CameraError(Kind::kInvalidParameters, "invalid camera extrinsics");

  const double c = std::cos(extrinsics.inclination_rad);
  const double s = std::sin(extrinsics.inclination_rad);
  rotation_.row(0) << 1.0, 0.0, 0.0;  // X: right
  rotation_.row(1) << 0.0, s, -c;     // Y: image down
  rotation_.row(2) << 0.0, c, s;      // Z: optical axis
  center_ << 0.0, 0.0, extrinsics.height_m;
}

Eigen::Matrix<double, 3, 4> CameraRig::world_to_camera() const {
  Eigen::Matrix<double, 3, 4> rt;
  rt.leftCols<3>() = rotation_;
  rt.col(3) = -rotation_ * center_;
  return rt;
}

Pixel CameraRig::project_camera(const Eigen::Vector3d& cam) const {
  if (!(cam.z() > kMinDepth)) {
    std::ostringstream msg;
    msg << "point at camera depth " << cam.z() << " m is behind the camera";
    throw CameraError(Kind::kBehindCamera, msg.str());
  }
  const double f = intrinsics_.focal_px;
  return {f * cam.x() / cam.z() + intrinsics_.principal_x, f * cam.y() / cam.z() + intrinsics_.principal_y};
}

Eigen::Vector3d CameraRig::backproject(const Pixel& pixel, double depth) const {
  const double f = intrinsics_.focal_px;
  const Eigen::Vector3d cam((pixel.u - intrinsics_.principal_x) * depth / f,
                            (pixel.v - intrinsics_.principal_y) * depth / f, depth);
  return to_world(cam);
}

bool CameraRig::in_image(const Pixel& pixel) const {
  return pixel.u >= 0.0 && pixel.u <= intrinsics_.width && pixel.v >= 0.0 && pixel.v <= intrinsics_.height;
}

Frustum::Frustum(std::array<Plane, 6> planes, std::array<Eigen::Vector3d, 8> corners, double near, double far)
    : planes_(planes), corners_(corners), near_(near), far_(far) {}

bool Frustum::contains(const Eigen::Vector3d& point) const {
  for (const Plane& plane : planes_) {
    if (plane.signed_distance(point) > kFaceTolerance) return false;
  }
  return true;
}

AxisAlignedBox Frustum::bounding_box() const {
  AxisAlignedBox box{corners_[0], corners_[0]};
  for (const auto& corner : corners_) {
    box.lower = box.lower.cwiseMin(corner);
    box.upper = box.upper.cwiseMax(corner);
  }
  return box;
}

Frustum make_frustum(const CameraRig& rig, double near, double far) {
  if (!(near > 0.0) || !(near < far) || !std::isfinite(far)) {
    std::ostringstream msg;
    msg << "frustum range requires 0 < near < far (got " << near << ", " << far << ")";
    throw CameraError(Kind::kInvalidRange, msg.str());
  }
  const auto& in = rig.intrinsics();
  const double f = in.focal_px;
  const double px = in.principal_x;
  const double py = in.principal_y;
  const double w = in.width;
  const double h = in.height;

  // Camera-frame planes n . X + o <= 0.
  std::array<Plane, 6> cam_planes;
  cam_planes[Frustum::kNear] = {Eigen::Vector3d(0, 0, -1), near};
  cam_planes[Frustum::kFar] = {Eigen::Vector3d(0, 0, 1), -far};
  cam_planes[Frustum::kLeft] = {Eigen::Vector3d(-f, 0, -px).normalized(), 0.0};     // u >= 0
  cam_planes[Frustum::kRight] = {Eigen::Vector3d(f, 0, px - w).normalized(), 0.0};  // u <= W
  cam_planes[Frustum::kTop] = {Eigen::Vector3d(0, -f, -py).normalized(), 0.0};      // v >= 0
  cam_planes[Frustum::kBottom] = {Eigen::Vector3d(0, f, py - h).normalized(), 0.0}; // v <= H

  std::array<Plane, 6> world_planes;
  for (std::size_t i = 0; i < cam_planes.size(); ++i) {
    const Eigen::Vector3d normal = rig.rotation().transpose() * cam_planes[i].normal;
    world_planes[i] = {normal, cam_planes[i].offset - normal.dot(rig.center())};
  }

  std::array<Eigen::Vector3d, 8> corners;
  const std::array<std::array<double, 2>, 4> image_corners{{{0, 0}, {w, 0}, {w, h}, {0, h}}};
  for (int layer = 0; layer < 2; ++layer) {
    const double depth = layer == 0 ? near : far;
    for (int q = 0; q < 4; ++q)
      corners[layer * 4 + q] = rig.backproject({image_corners[q][0], image_corners[q][1]}, depth);
  }
  return Frustum(world_planes, corners, near, far);
}

}  // namespace uavtraj::camera
