#include "crowd/camera.hpp"
#include "crowd/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <stdexcept>

namespace crowd {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Template lengths as fractions of body height.
constexpr double kHeadUp = 0.92;
constexpr double kNeckUp = 0.83;
constexpr double kShoulderUp = 0.81;
constexpr double kShoulderLat = 0.11;
constexpr double kPelvisUp = 0.53;
constexpr double kHipUp = 0.52;
constexpr double kHipLat = 0.055;
constexpr double kThigh = 0.24;
constexpr double kShin = 0.24;
constexpr double kUpperArm = 0.17;
constexpr double kForearm = 0.16;

constexpr double kLegSwing = 0.4;   // rad
constexpr double kKneeFlex = 0.15;  // rad, scaled by (1 - cos)
constexpr double kArmSwing = 0.35;
constexpr double kElbowFlex = 0.3;
constexpr double kStandingElbowFlex = 0.1;
constexpr double kStandingSpeed = 0.1;

struct LimbPose {
  Vec2 mid;  // (forward, up) of knee/elbow relative to hip/shoulder
  Vec2 end;  // ankle/wrist
};

LimbPose leg(double psi, bool moving) {
  const double theta = moving ? kLegSwing * std::sin(psi) : 0.0;
  const double kappa = moving ? kKneeFlex * (1.0 - std::cos(psi)) : 0.0;
  const Vec2 knee(kThigh * std::sin(theta), -kThigh * std::cos(theta));
  const Vec2 ankle = knee + Vec2(kShin * std::sin(theta - kappa), -kShin * std::cos(theta - kappa));
  return {knee, ankle};
}

LimbPose arm(double psi, bool moving) {
  const double alpha = moving ? kArmSwing * std::sin(psi) : 0.0;
  const double beta = moving ? kElbowFlex : kStandingElbowFlex;
  const Vec2 elbow(kUpperArm * std::sin(alpha), -kUpperArm * std::cos(alpha));
  const Vec2 wrist = elbow + Vec2(kForearm * std::sin(alpha + beta), -kForearm * std::cos(alpha + beta));
  return {elbow, wrist};
}

Vec2 heading(const Agent& a) {
  const double speed = a.velocity.norm();
  if (speed > 1e-9) return a.velocity / speed;
  const Vec2 to_goal = a.goal - a.position;
  const double d = to_goal.norm();
  if (d > 1e-6) return to_goal / d;
  return Vec2::UnitX();
}

}  // namespace

Vec2 distort(const CameraModel& c, const Vec2& n) {
  const double r2 = n.squaredNorm();
  return n * (1.0 + c.k1 * r2 + c.k2 * r2 * r2);
}

Vec2 undistort(const CameraModel& c, const Vec2& d) {
  if (c.k1 == 0.0 && c.k2 == 0.0) return d;
  Vec2 n = d;
  for (int i = 0; i < 50; ++i) {
    const double r2 = n.squaredNorm();
    n = d / (1.0 + c.k1 * r2 + c.k2 * r2 * r2);
  }
  return n;
}

Projection project_camera_point(const CameraModel& c, const Vec3& p) {
  Projection out;
  out.depth = p.z();
  if (!(p.z() > kNearPlane)) return out;
  const Vec2 d = distort(c, Vec2(p.x() / p.z(), p.y() / p.z()));
  out.pixel = Vec2(c.fx * d.x() + c.cx, c.fy * d.y() + c.cy);
  out.in_front = true;
  return out;
}

Projection project_point(const CameraModel& c, const Vec3& world) {
  return project_camera_point(c, c.to_camera(world));
}

Vec3 back_project(const CameraModel& c, const Vec2& pixel, double depth) {
  const Vec2 n = undistort(c, Vec2((pixel.x() - c.cx) / c.fx, (pixel.y() - c.cy) / c.fy));
  return Vec3(n.x() * depth, n.y() * depth, depth);
}

std::string_view joint_name(int joint) {
  static constexpr std::array<std::string_view, kJointCount> names = {
      "head",      "neck",      "left_shoulder", "right_shoulder", "left_elbow",
      "right_elbow", "left_wrist", "right_wrist", "pelvis",        "left_hip",
      "right_hip", "left_knee", "right_knee",    "left_ankle",     "right_ankle"};
  return joint >= 0 && joint < kJointCount ? names[static_cast<std::size_t>(joint)] : "unknown";
}

double BodyModel::max_radius() const {
  double r = 0.0;
  for (const auto& b : bones) r = std::max(r, b.radius);
  return r;
}

BodyModel pose_skeleton(const Agent& a) {
  const Vec2 h = heading(a);
  const Vec3 fwd(h.x(), h.y(), 0.0);
  const Vec3 left(-h.y(), h.x(), 0.0);
  const Vec3 up = Vec3::UnitZ();
  const bool moving = a.velocity.norm() >= kStandingSpeed;
  const double H = a.height;
  const Vec3 base(a.position.x(), a.position.y(), 0.0);

  const auto at = [&](double f, double l, double u) -> Vec3 {
    const Vec3 t = f * fwd + l * left + u * up;
    return base + H * t;
  };

  double phase = std::fmod(a.gait_phase, kTwoPi);
  if (phase < 0) phase += kTwoPi;
  const double opposite = std::fmod(phase + std::numbers::pi, kTwoPi);

  BodyModel body;
  auto& j = body.joints;
  j[head] = at(0, 0, kHeadUp);
  j[neck] = at(0, 0, kNeckUp);
  j[pelvis] = at(0, 0, kPelvisUp);
  j[left_shoulder] = at(0, kShoulderLat, kShoulderUp);
  j[right_shoulder] = at(0, -kShoulderLat, kShoulderUp);
  j[left_hip] = at(0, kHipLat, kHipUp);
  j[right_hip] = at(0, -kHipLat, kHipUp);

  const LimbPose ll = leg(phase, moving);
  const LimbPose rl = leg(opposite, moving);
  j[left_knee] = at(ll.mid.x(), kHipLat, kHipUp + ll.mid.y());
  j[left_ankle] = at(ll.end.x(), kHipLat, kHipUp + ll.end.y());
  j[right_knee] = at(rl.mid.x(), -kHipLat, kHipUp + rl.mid.y());
  j[right_ankle] = at(rl.end.x(), -kHipLat, kHipUp + rl.end.y());

  // each arm swings with the opposite leg
  const LimbPose la = arm(opposite, moving);
  const LimbPose ra = arm(phase, moving);
  j[left_elbow] = at(la.mid.x(), kShoulderLat, kShoulderUp + la.mid.y());
  j[left_wrist] = at(la.end.x(), kShoulderLat, kShoulderUp + la.end.y());
  j[right_elbow] = at(ra.mid.x(), -kShoulderLat, kShoulderUp + ra.mid.y());
  j[right_wrist] = at(ra.end.x(), -kShoulderLat, kShoulderUp + ra.end.y());

  body.bones = {
      {pelvis, neck, 0.09 * H},          {neck, head, 0.06 * H},
      {neck, left_shoulder, 0.04 * H},   {neck, right_shoulder, 0.04 * H},
      {left_shoulder, left_elbow, 0.03 * H}, {right_shoulder, right_elbow, 0.03 * H},
      {left_elbow, left_wrist, 0.025 * H},   {right_elbow, right_wrist, 0.025 * H},
      {pelvis, left_hip, 0.06 * H},      {pelvis, right_hip, 0.06 * H},
      {left_hip, left_knee, 0.045 * H},  {right_hip, right_knee, 0.045 * H},
      {left_knee, left_ankle, 0.035 * H}, {right_knee, right_ankle, 0.035 * H},
  };
  return body;
}

namespace {

// Ray-capsule query with the per-capsule terms hoisted out of the pixel loop.
struct CapsuleHit {
  Vec3 pa, pb, ba, oa;
  double r2, baba, baoa, oaoa, c;

  CapsuleHit(const Vec3& a, const Vec3& b, double r)
      : pa(a), pb(b), ba(b - a), oa(-a), r2(r * r) {
    baba = ba.dot(ba);
    baoa = ba.dot(oa);
    oaoa = oa.dot(oa);
    c = baba * oaoa - baoa * baoa - r2 * baba;
  }

  double sphere(const Vec3& rd, double rdrd, const Vec3& oc) const {
    const double bs = rd.dot(oc);
    const double cs = oc.dot(oc) - r2;
    const double hs = bs * bs - rdrd * cs;
    if (hs <= 0.0) return kInf;
    return (-bs - std::sqrt(hs)) / rdrd;
  }

  double operator()(const Vec3& rd) const {
    const double bard = ba.dot(rd);
    const double rdoa = rd.dot(oa);
    const double rdrd = rd.dot(rd);
    const double a = baba * rdrd - bard * bard;
    if (a > 1e-12 * baba * rdrd) {
      const double b = baba * rdoa - baoa * bard;
      const double h = b * b - a * c;
      if (h < 0.0) return kInf;
      const double t = (-b - std::sqrt(h)) / a;
      const double y = baoa + t * bard;
      if (y > 0.0 && y < baba) return t;
      return sphere(rd, rdrd, y <= 0.0 ? oa : Vec3(-pb));
    }
    // ray parallel to the axis (or degenerate bone): nearest of the two end spheres
    double best = kInf;
    for (const Vec3* p : {&pa, &pb}) {
      const Vec3 oc = -*p;
      const double bs = rd.dot(oc);
      const double cs = oc.dot(oc) - r2;
      const double hs = bs * bs - rdrd * cs;
      if (hs > 0.0) best = std::min(best, (-bs - std::sqrt(hs)) / rdrd);
    }
    return best;
  }
};

// Range of u / z over a sphere in front of the camera, from the two tangent planes u = m z.
std::pair<double, double> tangent_slopes(double u, double z, double r) {
  const double den = z * z - r * r;
  const double root = r * std::sqrt(std::max(0.0, u * u + den));
  return {(u * z - root) / den, (u * z + root) / den};
}

}  // namespace

double ray_capsule(const Vec3& rd, const Vec3& pa, const Vec3& pb, double r) { return CapsuleHit(pa, pb, r)(rd); }

const Coverage* RenderResult::find(std::uint32_t id) const {
  const auto it = std::lower_bound(coverage.begin(), coverage.end(), id,
                                   [](const Coverage& c, std::uint32_t v) { return c.id < v; });
  return it != coverage.end() && it->id == id ? &*it : nullptr;
}

Rasterizer::Rasterizer(CameraModel camera) : camera_(std::move(camera)) {
  if (camera_.width <= 0 || camera_.height <= 0) throw std::invalid_argument("camera resolution must be positive");
  rays_.resize(static_cast<std::size_t>(camera_.width) * camera_.height);
  for (int row = 0; row < camera_.height; ++row)
    for (int col = 0; col < camera_.width; ++col) {
      const Vec2 d((col + 0.5 - camera_.cx) / camera_.fx, (row + 0.5 - camera_.cy) / camera_.fy);
      const Vec2 n = undistort(camera_, d);
      rays_[static_cast<std::size_t>(row) * camera_.width + col] = Vec3(n.x(), n.y(), 1.0);
    }
}

Rasterizer::PixelBox Rasterizer::capsule_bounds(const Vec3& a, const Vec3& b, double radius) const {
  const PixelBox full{0, 0, camera_.width - 1, camera_.height - 1};
  const Vec3 lo = a.cwiseMin(b) - Vec3::Constant(radius);
  const Vec3 hi = a.cwiseMax(b) + Vec3::Constant(radius);
  if (hi.z() <= kNearPlane) return {0, 0, -1, -1};
  if (lo.z() <= kNearPlane) return full;
  double x0 = kInf, y0 = kInf, x1 = -kInf, y1 = -kInf;
  if (std::min(a.z(), b.z()) - radius > kNearPlane) {
    // u / z is quasilinear, so its extremes over the capsule are attained on the end spheres
    for (const Vec3* c : {&a, &b}) {
      const auto [xl, xh] = tangent_slopes(c->x(), c->z(), radius);
      const auto [yl, yh] = tangent_slopes(c->y(), c->z(), radius);
      x0 = std::min(x0, xl);
      x1 = std::max(x1, xh);
      y0 = std::min(y0, yl);
      y1 = std::max(y1, yh);
    }
  } else {
    for (int k = 0; k < 8; ++k) {
      const Vec3 p((k & 1) ? hi.x() : lo.x(), (k & 2) ? hi.y() : lo.y(), (k & 4) ? hi.z() : lo.z());
      x0 = std::min(x0, p.x() / p.z());
      x1 = std::max(x1, p.x() / p.z());
      y0 = std::min(y0, p.y() / p.z());
      y1 = std::max(y1, p.y() / p.z());
    }
  }
  double margin = 1.0;
  if (camera_.k1 != 0.0 || camera_.k2 != 0.0) {
    // image of the rectangle is bounded by the image of its boundary
    constexpr int kSamples = 8;
    double u0 = kInf, v0 = kInf, u1 = -kInf, v1 = -kInf;
    for (int s = 0; s <= kSamples; ++s) {
      const double f = static_cast<double>(s) / kSamples;
      const double xs = x0 + f * (x1 - x0);
      const double ys = y0 + f * (y1 - y0);
      for (const Vec2& n : {Vec2(xs, y0), Vec2(xs, y1), Vec2(x0, ys), Vec2(x1, ys)}) {
        const Vec2 d = distort(camera_, n);
        u0 = std::min(u0, d.x());
        u1 = std::max(u1, d.x());
        v0 = std::min(v0, d.y());
        v1 = std::max(v1, d.y());
      }
    }
    x0 = u0;
    x1 = u1;
    y0 = v0;
    y1 = v1;
    margin = 2.0;
  }
  const double cu0 = camera_.fx * x0 + camera_.cx - 0.5 - margin;
  const double cu1 = camera_.fx * x1 + camera_.cx - 0.5 + margin;
  const double cv0 = camera_.fy * y0 + camera_.cy - 0.5 - margin;
  const double cv1 = camera_.fy * y1 + camera_.cy - 0.5 + margin;
  if (cu1 < 0 || cv1 < 0 || cu0 > camera_.width - 1 || cv0 > camera_.height - 1) return {0, 0, -1, -1};
  return {std::max(0, static_cast<int>(std::floor(cu0))), std::max(0, static_cast<int>(std::floor(cv0))),
          std::min(camera_.width - 1, static_cast<int>(std::ceil(cu1))),
          std::min(camera_.height - 1, static_cast<int>(std::ceil(cv1)))};
}

RenderResult Rasterizer::render(const AgentSet& agents) const {
  std::vector<BodyModel> bodies;
  bodies.reserve(agents.size());
  for (const auto& a : agents) bodies.push_back(pose_skeleton(a));
  return render(agents, std::move(bodies));
}

RenderResult Rasterizer::render(const AgentSet& agents, std::vector<BodyModel> bodies) const {
  const int W = camera_.width;
  const int H = camera_.height;
  RenderResult out;
  out.buffers.width = W;
  out.buffers.height = H;
  out.buffers.instance.assign(static_cast<std::size_t>(W) * H, 0);
  out.buffers.depth.assign(static_cast<std::size_t>(W) * H, kInf);

  std::vector<double> local;
  std::vector<Vec3> cam_joints(kJointCount);
  const bool straight_rows = camera_.k1 == 0.0 && camera_.k2 == 0.0;
  std::vector<PixelBox> boxes;
  for (std::size_t i = 0; i < agents.size(); ++i) {
    const Agent& ag = agents[i];
    if (!ag.active) continue;
    const BodyModel& body = bodies[i];
    for (int k = 0; k < kJointCount; ++k) cam_joints[k] = camera_.to_camera(body.joints[k]);

    boxes.clear();
    PixelBox u{W, H, -1, -1};
    for (const auto& bone : body.bones) {
      const PixelBox b = capsule_bounds(cam_joints[bone.parent], cam_joints[bone.child], bone.radius);
      boxes.push_back(b);
      if (b.c0 > b.c1 || b.r0 > b.r1) continue;
      u = {std::min(u.c0, b.c0), std::min(u.r0, b.r0), std::max(u.c1, b.c1), std::max(u.r1, b.r1)};
    }
    if (u.c0 > u.c1 || u.r0 > u.r1) continue;
    const int bw = u.c1 - u.c0 + 1;
    local.assign(static_cast<std::size_t>(bw) * (u.r1 - u.r0 + 1), kInf);
    for (std::size_t k = 0; k < body.bones.size(); ++k) {
      const PixelBox& b = boxes[k];
      const Bone& bone = body.bones[k];
      const CapsuleHit hit(cam_joints[bone.parent], cam_joints[bone.child], bone.radius);
      for (int row = b.r0; row <= b.r1; ++row) {
        bool inside = false;
        for (int col = b.c0; col <= b.c1; ++col) {
          const double t = hit(ray(col, row));
          if (!(t > kNearPlane)) {
            // without distortion a pixel row is a line, and it crosses the convex silhouette once
            if (inside && straight_rows) break;
            continue;
          }
          inside = true;
          double& slot = local[static_cast<std::size_t>(row - u.r0) * bw + (col - u.c0)];
          slot = std::min(slot, t);
        }
      }
    }
    Coverage cov;
    cov.id = ag.id;
    for (int row = u.r0; row <= u.r1; ++row)
      for (int col = u.c0; col <= u.c1; ++col) {
        const double t = local[static_cast<std::size_t>(row - u.r0) * bw + (col - u.c0)];
        if (t == kInf) continue;
        ++cov.solo_pixels;
        const std::size_t p = static_cast<std::size_t>(row) * W + col;
        if (t < out.buffers.depth[p]) {
          out.buffers.depth[p] = t;
          out.buffers.instance[p] = ag.id;
        }
      }
    if (cov.solo_pixels > 0) out.coverage.push_back(cov);
  }

  for (int row = 0; row < H; ++row)
    for (int col = 0; col < W; ++col) {
      const std::uint32_t id = out.buffers.instance[static_cast<std::size_t>(row) * W + col];
      if (id == 0) continue;
      auto* c = &*std::lower_bound(out.coverage.begin(), out.coverage.end(), id,
                                   [](const Coverage& cv, std::uint32_t v) { return cv.id < v; });
      if (c->visible_pixels++ == 0) {
        c->min_col = c->max_col = col;
        c->min_row = c->max_row = row;
        continue;
      }
      c->min_col = std::min(c->min_col, col);
      c->max_col = std::max(c->max_col, col);
      c->min_row = std::min(c->min_row, row);
      c->max_row = std::max(c->max_row, row);
    }
  out.bodies = std::move(bodies);
  return out;
}

RenderBuffers rasterize(const CameraModel& c, const AgentSet& agents) {
  return Rasterizer(c).render(agents).buffers;
}

double visibility(const Agent& a, const RenderBuffers& buffers, std::uint64_t solo_pixel_count) {
  if (solo_pixel_count == 0) return 0.0;
  const auto visible = static_cast<std::uint64_t>(std::count(buffers.instance.begin(), buffers.instance.end(), a.id));
  return std::clamp(static_cast<double>(visible) / static_cast<double>(solo_pixel_count), 0.0, 1.0);
}

void write_depth_pgm(const RenderBuffers& b, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path);
  double lo = kInf, hi = 0.0;
  for (double d : b.depth)
    if (d != kInf) {
      lo = std::min(lo, d);
      hi = std::max(hi, d);
    }
  f << "P5\n" << b.width << ' ' << b.height << "\n255\n";
  for (double d : b.depth) {
    unsigned char v = 0;
    if (d != kInf) v = static_cast<unsigned char>(hi > lo ? 255.0 - 200.0 * (d - lo) / (hi - lo) : 255.0);
    f.put(static_cast<char>(v));
  }
}

void write_instance_ppm(const RenderBuffers& b, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path);
  f << "P6\n" << b.width << ' ' << b.height << "\n255\n";
  for (std::uint32_t id : b.instance) {
    std::uint32_t h = id * 2654435761u;
    const unsigned char rgb[3] = {static_cast<unsigned char>(id ? (h >> 16) | 0x40 : 0),
                                  static_cast<unsigned char>(id ? (h >> 8) | 0x40 : 0),
                                  static_cast<unsigned char>(id ? h | 0x40 : 0)};
    f.write(reinterpret_cast<const char*>(rgb), 3);
  }
}

}  // namespace crowd
