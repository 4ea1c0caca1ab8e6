#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <string>
#include <string_view>
#include <vector>

#include "crowd/agent.hpp"
#include "crowd/camera_model.hpp"

namespace crowd {

inline constexpr double kNearPlane = 0.05;

struct Projection {
  Vec2 pixel = Vec2::Zero();
  double depth = 0.0;
  bool in_front = false;
};

/// Projects a camera-frame point. Behind the near plane: in_front = false, pixel (0,0).
Projection project_camera_point(const CameraModel& c, const Vec3& p);

/// Projects a world point.
Projection project_point(const CameraModel& c, const Vec3& world);

/// Applies (1 + k1 r^2 + k2 r^4) to normalized image coordinates.
Vec2 distort(const CameraModel& c, const Vec2& normalized);

/// Fixed-point inverse of distort.
Vec2 undistort(const CameraModel& c, const Vec2& distorted);

/// Camera-frame point at `depth` whose projection is `pixel`.
Vec3 back_project(const CameraModel& c, const Vec2& pixel, double depth);

enum Joint : int {
  head,
  neck,
  left_shoulder,
  right_shoulder,
  left_elbow,
  right_elbow,
  left_wrist,
  right_wrist,
  pelvis,
  left_hip,
  right_hip,
  left_knee,
  right_knee,
  left_ankle,
  right_ankle,
};

inline constexpr int kJointCount = 15;

std::string_view joint_name(int joint);

struct Bone {
  int parent = 0;
  int child = 0;
  double radius = 0.0;  // meters
};

struct BodyModel {
  std::array<Vec3, kJointCount> joints;
  std::vector<Bone> bones;  // tree rooted at the pelvis

  double max_radius() const;
};

/// Procedural walking pose from position, velocity, height and gait phase.
BodyModel pose_skeleton(const Agent& a);

struct RenderBuffers {
  int width = 0;
  int height = 0;
  std::vector<std::uint32_t> instance;  // row-major, 0 = background
  std::vector<double> depth;            // +inf where background

  std::uint32_t id_at(int col, int row) const { return instance[static_cast<std::size_t>(row) * width + col]; }
  double depth_at(int col, int row) const { return depth[static_cast<std::size_t>(row) * width + col]; }
};

/// Pixel statistics for one agent in one render.
struct Coverage {
  std::uint32_t id = 0;
  std::uint64_t solo_pixels = 0;     // pixels covered when rendered alone
  std::uint64_t visible_pixels = 0;  // pixels won in the shared z-buffer
  int min_col = 0, min_row = 0, max_col = -1, max_row = -1;  // tight box of won pixels, inclusive
};

struct RenderResult {
  RenderBuffers buffers;
  std::vector<Coverage> coverage;  // ascending id, agents with solo_pixels > 0
  std::vector<BodyModel> bodies;   // parallel to the input AgentSet

  const Coverage* find(std::uint32_t id) const;
};

/// Entry depth of the ray t * dir (t > 0) into the capsule, or +inf when missed.
double ray_capsule(const Vec3& dir, const Vec3& a, const Vec3& b, double radius);

/// Per-pixel undistorted ray table for one camera; reused across frames.
class Rasterizer {
 public:
  explicit Rasterizer(CameraModel camera);

  const CameraModel& camera() const { return camera_; }
  const Vec3& ray(int col, int row) const { return rays_[static_cast<std::size_t>(row) * camera_.width + col]; }

  RenderResult render(const AgentSet& agents) const;
  RenderResult render(const AgentSet& agents, std::vector<BodyModel> bodies) const;

 private:
  struct PixelBox {
    int c0, r0, c1, r1;
  };
  PixelBox capsule_bounds(const Vec3& a, const Vec3& b, double radius) const;

  CameraModel camera_;
  std::vector<Vec3> rays_;
};

RenderBuffers rasterize(const CameraModel& c, const AgentSet& agents);

/// visible / solo pixels; 0 when solo is 0.
double visibility(const Agent& a, const RenderBuffers& buffers, std::uint64_t solo_pixel_count);

/// Binary PGM of normalized depth (near = white) and PPM of instance ids as colors.
void write_depth_pgm(const RenderBuffers& b, const std::string& path);
void write_instance_ppm(const RenderBuffers& b, const std::string& path);

}  // namespace crowd
