#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>

#include "crowd/camera.hpp"
#include "crowd/random.hpp"

using namespace crowd;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

CameraModel hd_camera() {
  CameraModel c;
  c.fx = c.fy = 1000;
  c.cx = 960;
  c.cy = 540;
  c.width = 1920;
  c.height = 1080;
  return c;
}

CameraModel small_camera(double k1 = 0.0, double k2 = 0.0) {
  CameraModel c;
  c.id = 1;
  c.width = 64;
  c.height = 48;
  c.fx = c.fy = 60;
  c.cx = 32;
  c.cy = 24;
  c.k1 = k1;
  c.k2 = k2;
  look_at(c, Vec3(-4, 0, 1.6), Vec3(2, 0, 1.0));
  return c;
}

Agent walker(std::uint32_t id, double x, double y, double phase = 0.0) {
  Agent a;
  a.id = id;
  a.position = Vec2(x, y);
  a.velocity = Vec2(0.3, 1.2);
  a.goal = a.position + Vec2(0, 5);
  a.gait_phase = phase;
  return a;
}

// Distance from p to segment ab.
double segment_distance(const Vec3& p, const Vec3& a, const Vec3& b) {
  const Vec3 ab = b - a;
  const double len2 = ab.squaredNorm();
  const double s = len2 > 0 ? std::clamp((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
  return (p - (a + s * ab)).norm();
}

// First t along t * dir inside the capsule, by marching then bisection.
double marched_entry(const Vec3& dir, const Vec3& a, const Vec3& b, double r) {
  const double step = 1e-3;
  double prev = 0.0;
  for (double t = step; t < 60.0; t += step) {
    if (segment_distance(t * dir, a, b) <= r) {
      double lo = prev, hi = t;
      for (int i = 0; i < 60; ++i) {
        const double mid = 0.5 * (lo + hi);
        (segment_distance(mid * dir, a, b) <= r ? hi : lo) = mid;
      }
      return hi;
    }
    prev = t;
  }
  return kInf;
}

// Per-pixel reference z-buffer over every bone of every agent.
struct Reference {
  std::vector<std::uint32_t> instance;
  std::vector<double> depth;
  std::vector<std::uint64_t> solo;
};

Reference reference_render(const CameraModel& c, const AgentSet& agents) {
  Reference out;
  const std::size_t n = static_cast<std::size_t>(c.width) * c.height;
  out.instance.assign(n, 0);
  out.depth.assign(n, kInf);
  out.solo.assign(agents.size(), 0);
  for (int row = 0; row < c.height; ++row)
    for (int col = 0; col < c.width; ++col) {
      const Vec3 dir = back_project(c, Vec2(col + 0.5, row + 0.5), 1.0);
      for (std::size_t i = 0; i < agents.size(); ++i) {
        const BodyModel body = pose_skeleton(agents[i]);
        double best = kInf;
        for (const auto& bone : body.bones) {
          const double t = ray_capsule(dir, c.to_camera(body.joints[bone.parent]),
                                       c.to_camera(body.joints[bone.child]), bone.radius);
          if (t > kNearPlane) best = std::min(best, t);
        }
        if (best == kInf) continue;
        ++out.solo[i];
        const std::size_t p = static_cast<std::size_t>(row) * c.width + col;
        if (best < out.depth[p]) {
          out.depth[p] = best;
          out.instance[p] = agents[i].id;
        }
      }
    }
  return out;
}

}  // namespace

TEST_CASE("pinhole projection") {
  const CameraModel c = hd_camera();
  const auto axis = project_camera_point(c, Vec3(0, 0, 3));
  CHECK(axis.in_front);
  CHECK(axis.pixel == Vec2(960, 540));

  const auto p = project_camera_point(c, Vec3(1, 0, 5));
  CHECK(p.pixel.x() == 1160.0);
  CHECK(p.pixel.y() == 540.0);
  CHECK(p.depth == 5.0);

  const auto behind = project_camera_point(c, Vec3(1, 1, -2));
  CHECK_FALSE(behind.in_front);
  CHECK(std::isfinite(behind.pixel.x()));
  CHECK_FALSE(project_camera_point(c, Vec3(0, 0, kNearPlane)).in_front);
}

TEST_CASE("barrel distortion pulls points inward") {
  CameraModel plain = hd_camera();
  CameraModel barrel = plain;
  barrel.k1 = -0.1;
  const Vec2 centre(plain.cx, plain.cy);
  RandomStream rng(2);
  for (int i = 0; i < 200; ++i) {
    const Vec3 q(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(2, 8));
    if (std::hypot(q.x(), q.y()) < 1e-3) continue;
    const double d0 = (project_camera_point(plain, q).pixel - centre).norm();
    const double d1 = (project_camera_point(barrel, q).pixel - centre).norm();
    CHECK(d1 < d0);
  }
}

TEST_CASE("undistort inverts distort and back_project inverts projection") {
  CameraModel c = hd_camera();
  c.k1 = -0.05;
  c.k2 = 0.01;
  RandomStream rng(4);
  for (int i = 0; i < 200; ++i) {
    const Vec2 n(rng.uniform(-0.8, 0.8), rng.uniform(-0.5, 0.5));
    CHECK((undistort(c, distort(c, n)) - n).norm() < 1e-12);
    const Vec3 q(rng.uniform(-3, 3), rng.uniform(-2, 2), rng.uniform(2, 20));
    const auto pr = project_camera_point(c, q);
    CHECK((back_project(c, pr.pixel, pr.depth) - q).norm() < 1e-9);
  }
}

TEST_CASE("look_at points the optical axis at the target") {
  CameraModel c = hd_camera();
  const Vec3 eye(3, -4, 6), target(10, 2, 0);
  look_at(c, eye, target);
  const auto pr = project_point(c, target);
  CHECK(pr.pixel.x() == doctest::Approx(c.cx).epsilon(1e-12));
  CHECK(pr.pixel.y() == doctest::Approx(c.cy).epsilon(1e-12));
  CHECK(pr.depth == doctest::Approx((target - eye).norm()));
  CHECK((c.position() - eye).norm() < 1e-12);
  // world up appears as image up (smaller row)
  CHECK(project_point(c, target + Vec3(0, 0, 1)).pixel.y() < c.cy);
}

TEST_CASE("skeleton template") {
  Agent a;
  a.velocity = Vec2(1.2, 0);
  a.height = 1.8;

  SUBCASE("15 joints, 14 bones rooted at the pelvis") {
    const BodyModel b = pose_skeleton(a);
    CHECK(b.bones.size() == kJointCount - 1);
    std::vector<int> parent_count(kJointCount, 0);
    for (const auto& bone : b.bones) {
      ++parent_count[static_cast<std::size_t>(bone.child)];
      CHECK(bone.radius > 0);
    }
    CHECK(parent_count[pelvis] == 0);
    for (int j = 0; j < kJointCount; ++j)
      if (j != pelvis) CHECK(parent_count[static_cast<std::size_t>(j)] == 1);
  }

  SUBCASE("legs in antiphase mirror each other") {
    a.gait_phase = 0.0;
    const BodyModel p0 = pose_skeleton(a);
    a.gait_phase = std::numbers::pi;
    const BodyModel p1 = pose_skeleton(a);
    const auto mirror = [](const Vec3& v) { return Vec3(v.x(), -v.y(), v.z()); };
    CHECK(p0.joints[left_knee] == mirror(p1.joints[right_knee]));
    CHECK(p0.joints[left_ankle] == mirror(p1.joints[right_ankle]));
    CHECK(p0.joints[right_knee] == mirror(p1.joints[left_knee]));
    CHECK(p0.joints[left_wrist] == mirror(p1.joints[right_wrist]));
  }

  SUBCASE("offsets scale with height") {
    a.gait_phase = 1.1;
    const BodyModel tall = pose_skeleton(a);
    a.height = 0.9;
    const BodyModel small = pose_skeleton(a);
    for (int j = 0; j < kJointCount; ++j) CHECK(tall.joints[j] == 2.0 * small.joints[j]);
  }

  SUBCASE("standing pose is symmetric about the heading") {
    a.velocity = Vec2(0.02, 0.01);
    a.goal = Vec2(3, 4);
    a.position = Vec2(0, 0);
    a.gait_phase = 2.0;
    const BodyModel b = pose_skeleton(a);
    const Vec2 h = a.velocity.normalized();
    const Vec2 l(b.joints[left_ankle].x(), b.joints[left_ankle].y());
    const Vec2 r(b.joints[right_ankle].x(), b.joints[right_ankle].y());
    CHECK(l.dot(h) == doctest::Approx(r.dot(h)).epsilon(1e-12));
    const Vec2 side(-h.y(), h.x());
    CHECK(l.dot(side) == doctest::Approx(-r.dot(side)).epsilon(1e-12));
  }
}

TEST_CASE("ray-capsule entry matches a marched oracle") {
  RandomStream rng(9);
  int hits = 0;
  for (int i = 0; i < 300; ++i) {
    const Vec3 a(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(2, 6));
    const Vec3 b = a + Vec3(rng.uniform(-0.6, 0.6), rng.uniform(-0.6, 0.6), rng.uniform(-0.6, 0.6));
    const double r = rng.uniform(0.02, 0.2);
    // aim near the segment so that roughly half the rays hit
    const Vec3 aim = a + rng.uniform(-0.2, 1.2) * (b - a) + Vec3(rng.uniform(-2, 2) * r, rng.uniform(-2, 2) * r, 0);
    const Vec3 dir = aim / aim.z();
    const double got = ray_capsule(dir, a, b, r);
    const double want = marched_entry(dir, a, b, r);
    if (want == kInf) {
      // the marcher can step over grazing hits thinner than its step
      if (got != kInf) CHECK(segment_distance(got * dir, a, b) == doctest::Approx(r).epsilon(1e-6));
      continue;
    }
    ++hits;
    CHECK(got == doctest::Approx(want).epsilon(1e-9));
  }
  CHECK(hits > 30);
  // ray along the axis
  CHECK(ray_capsule(Vec3(0, 0, 1), Vec3(0, 0, 3), Vec3(0, 0, 5), 0.5) == doctest::Approx(2.5));
}

TEST_CASE("z-buffer equals a per-pixel reference") {
  for (const double k1 : {0.0, -0.2}) {
    CAPTURE(k1);
    const CameraModel c = small_camera(k1, k1 == 0.0 ? 0.0 : 0.05);
    const AgentSet agents = {walker(1, 0, 0, 0.3), walker(2, 0.2, 0.25, 2.0), walker(3, 1.5, -0.8, 4.0),
                             walker(5, -2.0, 0.6, 5.5), walker(8, 3.0, 2.5, 1.0)};
    const RenderResult got = Rasterizer(c).render(agents);
    const Reference want = reference_render(c, agents);
    CHECK(got.buffers.instance == want.instance);
    CHECK(got.buffers.depth == want.depth);
    for (std::size_t i = 0; i < agents.size(); ++i) {
      const Coverage* cov = got.find(agents[i].id);
      if (want.solo[i] == 0) {
        CHECK(cov == nullptr);
        continue;
      }
      REQUIRE(cov != nullptr);
      CHECK(cov->solo_pixels == want.solo[i]);
      const auto visible = static_cast<std::uint64_t>(
          std::count(want.instance.begin(), want.instance.end(), agents[i].id));
      CHECK(cov->visible_pixels == visible);
      CHECK(visibility(agents[i], got.buffers, cov->solo_pixels) ==
            static_cast<double>(visible) / static_cast<double>(want.solo[i]));
    }
    for (std::size_t p = 0; p < want.instance.size(); ++p)
      if (got.buffers.instance[p] != 0) CHECK((std::isfinite(got.buffers.depth[p]) && got.buffers.depth[p] > 0));
  }
}

TEST_CASE("nearer agent occludes the farther one") {
  const CameraModel c = small_camera();
  Agent front = walker(2, -1.0, 0.0);
  Agent back = walker(1, 1.0, 0.0);
  const RenderResult r = Rasterizer(c).render({back, front});
  const Coverage* f = r.find(2);
  const Coverage* b = r.find(1);
  REQUIRE(f);
  REQUIRE(b);
  CHECK(f->visible_pixels == f->solo_pixels);
  CHECK(b->visible_pixels < b->solo_pixels);
  CHECK(visibility(front, r.buffers, f->solo_pixels) == 1.0);
}

TEST_CASE("mirror-symmetric scene renders mirror-symmetric") {
  CameraModel c = small_camera();
  look_at(c, Vec3(-5, 0, 1.0), Vec3(0, 0, 1.0));
  c.cx = c.width / 2.0;
  Agent a;
  a.id = 1;
  a.velocity = Vec2(0.0, 0.0);  // standing, facing the camera
  a.goal = Vec2(-5, 0);
  const RenderResult r = Rasterizer(c).render({a});
  int asym = 0;
  for (int row = 0; row < c.height; ++row)
    for (int col = 0; col < c.width / 2; ++col)
      asym += (r.buffers.id_at(col, row) != 0) != (r.buffers.id_at(c.width - 1 - col, row) != 0);
  CHECK(asym == 0);
  CHECK(r.find(1) != nullptr);
}

TEST_CASE("agents behind the camera are not drawn") {
  const CameraModel c = small_camera();
  const RenderResult r = Rasterizer(c).render({walker(1, -9, 0)});
  CHECK(r.coverage.empty());
  for (auto id : r.buffers.instance) CHECK(id == 0);
}

TEST_CASE("debug dumps") {
  const CameraModel c = small_camera();
  const RenderResult r = Rasterizer(c).render({walker(1, 0, 0)});
  const auto dir = std::filesystem::temp_directory_path() / "crowd_camera_test";
  std::filesystem::create_directories(dir);
  write_depth_pgm(r.buffers, (dir / "d.pgm").string());
  write_instance_ppm(r.buffers, (dir / "i.ppm").string());
  std::ifstream pgm(dir / "d.pgm", std::ios::binary);
  std::string magic;
  pgm >> magic;
  CHECK(magic == "P5");
  CHECK(std::filesystem::file_size(dir / "i.ppm") > static_cast<std::uintmax_t>(3 * c.width * c.height));
  std::filesystem::remove_all(dir);
}
