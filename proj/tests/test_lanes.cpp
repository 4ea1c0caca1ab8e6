#include <doctest.h>

#include <cmath>

#include "crowd/lanes.hpp"
#include "crowd/scenario.hpp"

using namespace crowd;

namespace {

// Quadratic reference for one frame.
double reference_order(const LaneFrame& f, const std::map<std::uint32_t, int>& flow, const LaneParams& p) {
  const Vec2 along = p.axis.normalized();
  const Vec2 across(-along.y(), along.x());
  double sum = 0;
  int scored = 0;
  for (std::size_t i = 0; i < f.ids.size(); ++i) {
    const int li = flow.count(f.ids[i]) ? flow.at(f.ids[i]) : 0;
    if (li == 0) continue;
    int same = 0, opposite = 0;
    for (std::size_t j = 0; j < f.ids.size(); ++j) {
      const int lj = flow.count(f.ids[j]) ? flow.at(f.ids[j]) : 0;
      if (j == i || lj == 0) continue;
      const Vec2 d = f.positions[j] - f.positions[i];
      if (std::abs(d.dot(along)) > p.longitudinal || std::abs(d.dot(across)) > p.lateral) continue;
      (lj == li ? same : opposite) += 1;
    }
    if (same + opposite == 0) continue;
    const double r = static_cast<double>(same - opposite) / (same + opposite);
    sum += r * r;
    ++scored;
  }
  return scored ? sum / scored : -1.0;
}

LaneFrame two_lanes(int per_lane, double spacing) {
  LaneFrame f;
  for (int k = 0; k < per_lane; ++k) {
    f.ids.push_back(static_cast<std::uint32_t>(2 * k + 1));
    f.positions.emplace_back(k * spacing, 1.0);
    f.ids.push_back(static_cast<std::uint32_t>(2 * k + 2));
    f.positions.emplace_back(k * spacing + 0.5 * spacing, 3.0);
  }
  return f;
}

std::map<std::uint32_t, int> odd_even_flow(std::uint32_t n) {
  std::map<std::uint32_t, int> flow;
  for (std::uint32_t id = 1; id <= n; ++id) flow[id] = id % 2 ? 1 : -1;
  return flow;
}

}  // namespace

TEST_CASE("segregated lanes score one") {
  const LaneFrame f = two_lanes(20, 1.0);
  CHECK(lane_order(f, odd_even_flow(40)) == 1.0);
}

TEST_CASE("alternating single file") {
  LaneFrame f;
  for (std::uint32_t k = 0; k < 21; ++k) {
    f.ids.push_back(k + 1);
    f.positions.emplace_back(static_cast<double>(k), 2.0);
  }
  const auto flow = odd_even_flow(21);
  // the middle agent sees 6 opposite and 4 same within 5 m
  const double got = lane_order(f, flow);
  CHECK(got == doctest::Approx(reference_order(f, flow, {})).epsilon(1e-15));
  CHECK(got < 0.2);
}

TEST_CASE("sweep matches the quadratic reference") {
  RandomStream rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    LaneFrame f;
    std::map<std::uint32_t, int> flow;
    const int n = static_cast<int>(rng.uniform(0, 80));
    for (int k = 0; k < n; ++k) {
      const auto id = static_cast<std::uint32_t>(k + 1);
      f.ids.push_back(id);
      f.positions.emplace_back(rng.uniform(0, 30), rng.uniform(0, 5));
      const double u = rng.uniform(0, 1);
      if (u < 0.45) flow[id] = 1;
      else if (u < 0.9) flow[id] = -1;
    }
    LaneParams p;
    const double angle = rng.uniform(0, 6.283);
    p.axis = Vec2(std::cos(angle), std::sin(angle));
    CHECK(lane_order(f, flow, p) == doctest::Approx(reference_order(f, flow, p)).epsilon(1e-12));
  }
}

TEST_CASE("rotating the frame and the axis together changes nothing") {
  const LaneFrame f = two_lanes(15, 0.8);
  LaneFrame r = f;
  const double c = std::cos(0.7), s = std::sin(0.7);
  for (auto& p : r.positions) p = Vec2(c * p.x() - s * p.y(), s * p.x() + c * p.y());
  LaneParams params;
  params.axis = Vec2(c, s);
  CHECK(lane_order(r, odd_even_flow(30), params) == doctest::Approx(lane_order(f, odd_even_flow(30))));
}

TEST_CASE("frames without neighbours are skipped") {
  LaneFrame lonely;
  lonely.ids = {1, 2};
  lonely.positions = {Vec2(0, 0), Vec2(50, 0)};
  CHECK(lane_order(lonely, odd_even_flow(2)) == -1.0);
  const std::vector<LaneFrame> frames = {lonely, two_lanes(5, 1.0)};
  CHECK(lane_order(frames, odd_even_flow(10)) == 1.0);
  CHECK(lane_order(std::vector<LaneFrame>{}, odd_even_flow(2)) == 0.0);
}

TEST_CASE("permutation test") {
  std::vector<LaneFrame> frames;
  for (int k = 0; k < 5; ++k) frames.push_back(two_lanes(20, 1.0 + 0.1 * k));
  const auto flow = odd_even_flow(40);
  RandomStream a(1), b(1);
  const LaneTest t = lane_order_test(frames, flow, 100, a);
  CHECK(t.null.size() == 100);
  CHECK(t.statistic == 1.0);
  CHECK(t.significant);
  CHECK(t.null_p95 < 0.5);
  std::vector<double> sorted = t.null;
  std::sort(sorted.begin(), sorted.end());
  CHECK(t.null_p95 == sorted[94]);
  CHECK(lane_order_test(frames, flow, 100, b).null == t.null);
}

TEST_CASE("lane_frames groups the log by tick") {
  WorldState w;
  for (std::uint64_t t = 1; t <= 4; ++t)
    for (std::uint32_t id = 1; id <= t; ++id) w.trajectory_log.push_back({t, id, Vec2(id, t), Vec2::Zero(), false});
  const auto frames = lane_frames(w, 2, 3);
  REQUIRE(frames.size() == 2);
  CHECK(frames[0].ids.size() == 2);
  CHECK(frames[1].ids == std::vector<std::uint32_t>{1, 2, 3});
  CHECK(frames[1].positions[2] == Vec2(3, 3));
}

TEST_CASE("opposing groups in the corridor form lanes") {
  const Scenario s = load_scenario_file(CROWD_SOURCE_DIR "/scenarios/corridor.scn");
  WorldState w = make_world(s);
  std::map<std::uint32_t, int> flow;
  for (const auto& a : w.agents) flow[a.id] = a.goal.x() > 90.0 ? 1 : -1;
  run_until(w, s.duration);
  const auto frames = lane_frames(w, s.duration - 449, s.duration);
  REQUIRE(frames.size() == 450);
  RandomStream rng(s.seed, 7);
  const LaneTest t = lane_order_test(frames, flow, 100, rng);
  MESSAGE("lane order " << t.statistic << " vs null p95 " << t.null_p95);
  CHECK(t.significant);
}
