#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cstdint>

#include "crowd/geometry.hpp"

namespace crowd {

/// Pinhole camera with two-term radial distortion.
///
/// World frame: X/Y ground plane, Z up, meters. Camera frame follows the usual
/// vision convention (x right, y down, z forward). Pixel (col, row) covers
/// [col, col+1) x [row, row+1), so its center sits at (col + 0.5, row + 0.5).
struct CameraModel {
  std::uint32_t id = 0;
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();  // world -> camera
  Vec3 translation = Vec3::Zero();                          // world -> camera
  double fx = 500.0;
  double fy = 500.0;
  double cx = 320.0;
  double cy = 180.0;
  double k1 = 0.0;
  double k2 = 0.0;
  int width = 640;
  int height = 360;

  Vec3 to_camera(const Vec3& world) const { return rotation * world + translation; }
  Vec3 position() const { return -rotation.transpose() * translation; }

  bool operator==(const CameraModel&) const = default;
};

/// Rotation/translation of a camera at `eye` looking toward `target`, world Z up.
inline void look_at(CameraModel& cam, const Vec3& eye, const Vec3& target) {
  const Vec3 forward = (target - eye).normalized();
  Vec3 up = Vec3::UnitZ();
  if (std::abs(forward.dot(up)) > 1.0 - 1e-9) up = Vec3::UnitY();
  const Vec3 right = forward.cross(up).normalized();
  const Vec3 down = forward.cross(right);
  cam.rotation.row(0) = right.transpose();
  cam.rotation.row(1) = down.transpose();
  cam.rotation.row(2) = forward.transpose();
  cam.translation = -cam.rotation * eye;
}

}  // namespace crowd
