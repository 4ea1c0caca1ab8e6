// Acceptance checks. Prints one PASS/FAIL line per criterion and exits non-zero on any failure.
// Optional arguments select criteria by name substring.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "crowd/annotation.hpp"
#include "crowd/lanes.hpp"
#include "crowd/metrics.hpp"
#include "crowd/protocol.hpp"
#include "crowd/runner.hpp"

using namespace crowd;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

// Pinned limits.
constexpr double kDeterminismSeconds = 60.0;     // per plaza run
constexpr double kForceOracleSeconds = 10.0;
constexpr double kPenetrationTolerance = 1e-9;  // metres
constexpr double kCounterflowSeconds = 30.0;
constexpr double kAnnotationMatrixSeconds = 600.0;
constexpr double kApTolerance = 1e-12;
constexpr double kMinTicksPerSecond = 30.0;
constexpr double kMinAllPairsSlowdown = 10.0;

const std::string kPlaza = CROWD_SOURCE_DIR "/scenarios/plaza.scn";
const std::string kCorridor = CROWD_SOURCE_DIR "/scenarios/corridor.scn";

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("crowd_acceptance_" + name);
  fs::remove_all(p);
  return p;
}

// --- determinism ---------------------------------------------------------------------------

Outcome determinism() {
  const fs::path out = scratch("determinism");
  RunManifest m;
  m.scenario_path = kPlaza;
  m.output_root = out.string();
  m.keep_outputs = false;
  std::vector<RunSummary> runs;
  double slowest = 0.0;
  for (int k = 0; k < 2; ++k) {
    const auto t0 = Clock::now();
    runs.push_back(run_matrix(m));
    slowest = std::max(slowest, seconds_since(t0));
  }
  fs::remove_all(out);
  const auto& a = runs[0].conditions.at(0);
  const auto& b = runs[1].conditions.at(0);
  bool same = a.files.size() == b.files.size() && a.state_hash == b.state_hash;
  for (std::size_t i = 0; same && i < a.files.size(); ++i)
    same = a.files[i].fnv1a64 == b.files[i].fnv1a64 && a.files[i].bytes == b.files[i].bytes;
  const bool shape = a.ticks == 1800 && a.initial_agents == 150 && a.files.size() == 2;
  return {same && shape && slowest < kDeterminismSeconds,
          fmt("%zu files identical=%d, %zu agents, %llu ticks, slowest run %.1f s (limit %.0f s)", a.files.size(),
              same, a.initial_agents, static_cast<unsigned long long>(a.ticks), slowest, kDeterminismSeconds)};
}

// --- force oracle ---------------------------------------------------------------------------

Outcome force_oracle() {
  const Scenario s = load_scenario_file(kPlaza);
  RandomStream rng(2024);
  std::size_t compared = 0, mismatches = 0;
  double elapsed = 0.0;
  for (int world = 0; world < 50; ++world) {
    WorldState w = make_world(s);
    const auto n = static_cast<std::size_t>(1 + rng.below(500));
    AgentSet agents;
    while (agents.size() < n) {
      const Vec2 p(rng.uniform(0.2, 39.8), rng.uniform(0.2, 29.8));
      if (!is_free(w.map, p)) continue;
      Agent a = w.agents[agents.size() % w.agents.size()];
      a.id = static_cast<std::uint32_t>(agents.size() + 1);
      a.position = p;
      a.velocity = Vec2(rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5));
      a.goal = Vec2(rng.uniform(1, 39), rng.uniform(1, 29));
      agents.push_back(a);
    }
    w.agents = std::move(agents);
    w.next_id = static_cast<std::uint32_t>(n + 1);
    w.clock.tick = rng.below(1800);
    w.grid.rebuild(w.agents);
    const auto t0 = Clock::now();
    const auto grid = accelerations(w, NeighbourSearch::grid);
    const auto oracle = accelerations(w, NeighbourSearch::all_pairs);
    elapsed += seconds_since(t0);
    for (std::size_t i = 0; i < n; ++i, ++compared)
      if (grid[i].x() != oracle[i].x() || grid[i].y() != oracle[i].y()) ++mismatches;
  }
  return {mismatches == 0 && elapsed < kForceOracleSeconds,
          fmt("%zu accelerations over 50 worlds, %zu not bit-equal, %.2f s (limit %.0f s)", compared, mismatches,
              elapsed, kForceOracleSeconds)};
}

// --- non-penetration and speed bound ---------------------------------------------------------

Outcome non_penetration() {
  const Scenario s = load_scenario_file(kPlaza);
  WorldState w = make_world(s);
  w.record_trajectories = false;
  std::size_t inside = 0, outside_walkable = 0, too_fast = 0, samples = 0;
  std::map<std::uint32_t, double> vmax;
  while (w.clock.tick < s.duration) {
    vmax.clear();
    for (const auto& a : w.agents) vmax[a.id] = apply_anomaly(a, w.clock, w.forces, w.map).max_speed;
    step(w);
    for (const auto& a : w.agents) {
      ++samples;
      for (const auto& o : w.map.obstacles)
        if (point_in_polygon(o.polygon, a.position) &&
            closest_boundary_point(o.polygon, a.position).distance > kPenetrationTolerance)
          ++inside;
      bool walkable = false;
      for (const auto& region : w.map.walkable)
        walkable = walkable || point_in_polygon(region.polygon, a.position) ||
                   closest_boundary_point(region.polygon, a.position).distance <= kPenetrationTolerance;
      if (!walkable) ++outside_walkable;
      const auto it = vmax.find(a.id);
      if (it != vmax.end() && a.velocity.norm() > it->second) ++too_fast;
    }
  }
  return {inside == 0 && outside_walkable == 0 && too_fast == 0 && samples > 0,
          fmt("%zu agent-ticks: %zu inside obstacles, %zu off the walkable area, %zu over 1.3 v0", samples, inside,
              outside_walkable, too_fast)};
}

// --- counter-flow lanes ---------------------------------------------------------------------

Outcome counterflow() {
  const auto t0 = Clock::now();
  const Scenario s = load_scenario_file(kCorridor);
  WorldState w = make_world(s);
  std::map<std::uint32_t, int> flow;
  int east = 0;
  for (const auto& a : w.agents) {
    flow[a.id] = a.goal.x() > 90.0 ? 1 : -1;
    east += flow[a.id] > 0;
  }
  run_until(w, s.duration);
  const std::uint64_t quarter = s.duration / 4;
  const auto frames = lane_frames(w, s.duration - quarter + 1, s.duration);
  RandomStream rng(s.seed, 7);
  const LaneTest t = lane_order_test(frames, flow, 100, rng);
  const double elapsed = seconds_since(t0);
  const bool shape = east == 40 && flow.size() == 80 && s.duration == 1800;
  return {t.significant && shape && elapsed < kCounterflowSeconds,
          fmt("lane order %.4f vs null p95 %.4f (100 shuffles, %zu frames, %d+%zu agents), %.2f s (limit %.0f s)",
              t.statistic, t.null_p95, frames.size(), east, flow.size() - east, elapsed, kCounterflowSeconds)};
}

// --- annotation consistency -----------------------------------------------------------------

Outcome annotation_matrix() {
  const fs::path out = scratch("annotations");
  RunManifest m;
  m.scenario_path = kPlaza;
  m.output_root = out.string();
  m.duration = 300;
  m.times = {7 * 60, 12 * 60, 18 * 60 + 30};
  m.densities = {DensityPreset::low, DensityPreset::medium, DensityPreset::high};
  m.keep_outputs = false;
  std::size_t frames = 0, records = 0, box_errors = 0, count_errors = 0, joint_errors = 0, size_errors = 0;
  m.observer = [&](const CameraModel& c, const WorldState&, const RenderResult&, const FrameAnnotation& f) {
    ++frames;
    if (c.width != 640 || c.height != 360) ++size_errors;
    if (f.count != f.records.size()) ++count_errors;
    for (const auto& rec : f.records) {
      ++records;
      const BinaryMask mask = decode_rle(rec.mask);
      if (tight_box(mask) != rec.bbox) ++box_errors;
      const double g = rec.joint_margin;
      for (const auto& j : rec.joints2d) {
        if (j.visibility != kVisible) continue;
        if (j.pixel.x() < rec.bbox[0] - g || j.pixel.x() > rec.bbox[0] + rec.bbox[2] + g ||
            j.pixel.y() < rec.bbox[1] - g || j.pixel.y() > rec.bbox[1] + rec.bbox[3] + g)
          ++joint_errors;
      }
    }
  };
  const auto t0 = Clock::now();
  const RunSummary r = run_matrix(m);
  const double elapsed = seconds_since(t0);
  fs::remove_all(out);
  std::size_t exported = 0, annotations = 0;
  for (const auto& c : r.conditions) {
    exported += c.frames;
    annotations += c.annotations;
  }
  const bool ok = r.conditions.size() == 9 && frames == 9 * 300 * 5 && exported == frames &&
                  annotations == records && box_errors + count_errors + joint_errors + size_errors == 0 &&
                  elapsed < kAnnotationMatrixSeconds;
  return {ok, fmt("%zu conditions, %zu frames, %zu records: %zu bbox, %zu count, %zu joint, %zu size errors; "
                  "%.1f s (limit %.0f s)",
                  r.conditions.size(), frames, records, box_errors, count_errors, joint_errors, size_errors, elapsed,
                  kAnnotationMatrixSeconds)};
}

// --- RLE ------------------------------------------------------------------------------------

Outcome rle_codec() {
  RandomStream rng(99);
  std::size_t failures = 0;
  for (int i = 0; i < 10000; ++i) {
    BinaryMask mask(1 + static_cast<int>(rng.below(64)), 1 + static_cast<int>(rng.below(64)));
    const double density = rng.uniform();
    for (auto& v : mask.data) v = rng.uniform() < density ? 1 : 0;
    if (decode_rle(encode_rle(mask)) != mask) ++failures;
  }
  BinaryMask zeros(2, 2), ones(2, 2);
  ones.data.assign(4, 1);
  const bool goldens = encode_rle(zeros).counts == std::vector<std::uint32_t>{4} &&
                       encode_rle(ones).counts == std::vector<std::uint32_t>{0, 4};
  return {failures == 0 && goldens, fmt("10000 random masks up to 64x64, %zu round-trip failures, goldens %s",
                                        failures, goldens ? "match" : "differ")};
}

// --- metrics --------------------------------------------------------------------------------

double brute_force_ap(const std::vector<metrics::GroundTruth>& gt, const std::vector<metrics::Detection>& det,
                      double tau) {
  std::vector<std::size_t> order(det.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return det[a].score > det[b].score; });
  std::vector<bool> used(gt.size(), false);
  std::vector<std::pair<double, double>> pr;
  double tp = 0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    const auto& d = det[order[k]];
    double best = -1;
    std::size_t pick = gt.size();
    for (std::size_t g = 0; g < gt.size(); ++g) {
      if (used[g] || gt[g].image_id != d.image_id) continue;
      const double v = metrics::iou(d.bbox, gt[g].bbox);
      if (v >= tau && v > best) {
        best = v;
        pick = g;
      }
    }
    if (pick < gt.size()) {
      used[pick] = true;
      tp += 1;
    }
    pr.emplace_back(tp / static_cast<double>(gt.size()), tp / static_cast<double>(k + 1));
  }
  double sum = 0;
  for (int k = 0; k <= 100; ++k) {
    double p = 0;
    for (const auto& [r, prec] : pr)
      if (r >= k / 100.0) p = std::max(p, prec);
    sum += p;
  }
  return sum / 101.0;
}

Outcome metrics_sanity() {
  // ground truth from a short plaza export
  const fs::path out = scratch("metrics");
  RunManifest m;
  m.scenario_path = kPlaza;
  m.output_root = out.string();
  m.duration = 30;
  m.export_trajectories = false;
  const RunSummary r = run_matrix(m);
  const auto gt = metrics::load_ground_truth((fs::path(r.conditions[0].directory) / "plaza_coco.json").string());
  fs::remove_all(out);
  const auto report = metrics::evaluate(gt, metrics::as_detections(gt));
  bool f1_ok = report.f1.size() == 5;
  for (const double f : report.f1) f1_ok = f1_ok && f == 1.0;
  int buckets = 0;
  bool ap_ok = true;
  for (const auto& ap : {report.ap, report.ap_small, report.ap_medium, report.ap_large})
    if (ap) {
      ++buckets;
      ap_ok = ap_ok && *ap == 1.0;
    }

  using metrics::Detection;
  using metrics::GroundTruth;
  const auto g = [](double x) { return GroundTruth{1, {x, 0, 10, 10}, 100, false, std::nullopt}; };
  const auto d = [](double x, double s) { return Detection{1, {x, 0, 10, 10}, s, std::nullopt}; };
  const std::vector<GroundTruth> hand_gt = {g(0), g(100), g(200)};
  const std::vector<Detection> hand_det = {d(0, 0.9), d(400, 0.8), d(100, 0.7), d(500, 0.6)};
  const double ap = *metrics::average_precision(hand_gt, hand_det, 0.5);
  const double oracle = brute_force_ap(hand_gt, hand_det, 0.5);
  const bool hand_ok = std::abs(ap - oracle) <= kApTolerance;
  return {f1_ok && ap_ok && buckets >= 2 && hand_ok,
          fmt("%zu gt boxes: F1 = 1 at %zu thresholds %s, AP = 1 in %d populated buckets %s; "
              "hand AP %.15f vs oracle %.15f",
              gt.size(), report.f1.size(), f1_ok ? "yes" : "no", buckets, ap_ok ? "yes" : "no", ap, oracle)};
}

// --- protocol -------------------------------------------------------------------------------

wire::Message random_message(RandomStream& rng) {
  using namespace wire;
  const auto f = [&] { return static_cast<float>(rng.uniform(-1e4, 1e4)); };
  const auto u32 = [&] { return static_cast<std::uint32_t>(rng.next_u64()); };
  switch (rng.below(10)) {
    case 0: return Hello{static_cast<std::uint16_t>(rng.below(3)), rng.below(2) ? Mode::streaming : Mode::lockstep};
    case 1: return HelloAck{1, Mode::lockstep, u32(), rng.next_u64()};
    case 2: return TickBegin{rng.next_u64(), u32()};
    case 3: return AgentState{u32(), rng.next_u64(), f(), f(), f(), f(), f(), static_cast<std::uint8_t>(rng.below(2))};
    case 4: return TickEnd{rng.next_u64()};
    case 5: {
      EnvUpdate u{static_cast<EnvOp>(1 + rng.below(5)), u32(), {}};
      u.polygon.resize(rng.below(12));
      for (auto& v : u.polygon) v = {f(), f()};
      return u;
    }
    case 6: return SpawnEvent{rng.next_u64(), u32(), f(), f()};
    case 7: return DespawnEvent{rng.next_u64(), u32()};
    case 8: {
      std::string detail(rng.below(40), ' ');
      for (auto& c : detail) c = static_cast<char>(rng.below(256));
      return Error{static_cast<ErrorCode>(1 + rng.below(7)), detail};
    }
    default: return Shutdown{};
  }
}

bool lockstep_matches_headless(std::string& detail) {
  const Scenario s = load_scenario_file(kPlaza);
  WorldState headless = make_world(s);
  WorldState served = headless;
  std::promise<std::uint16_t> ready;
  wire::ServeOptions o;
  o.port = 0;
  o.accept_timeout = std::chrono::seconds(30);
  o.on_listening = [&](std::uint16_t p) { ready.set_value(p); };
  auto server = std::async(std::launch::async, [&] { return wire::serve(served, o); });
  wire::Connection c = wire::Connection::connect("127.0.0.1", ready.get_future().get());
  c.send(wire::Hello{wire::kProtocolVersion, wire::Mode::lockstep});
  std::size_t states = 0, mismatches = 0;
  while (true) {
    const wire::Decoded d = c.receive(std::chrono::seconds(30));
    if (d.status != wire::DecodeStatus::message) break;
    const wire::Message& m = *d.message;
    if (const auto* b = std::get_if<wire::TickBegin>(&m)) {
      if (b->tick > headless.clock.tick) step(headless);
      if (b->tick != headless.clock.tick) ++mismatches;
    } else if (const auto* a = std::get_if<wire::AgentState>(&m)) {
      ++states;
      const Agent* h = headless.find(a->id);
      if (!h || a->x != static_cast<float>(h->position.x()) || a->y != static_cast<float>(h->position.y()) ||
          a->vx != static_cast<float>(h->velocity.x()) || a->vy != static_cast<float>(h->velocity.y()))
        ++mismatches;
    } else if (const auto* e = std::get_if<wire::TickEnd>(&m)) {
      c.send(wire::TickEnd{e->tick});
    } else if (std::holds_alternative<wire::Shutdown>(m)) {
      break;
    }
  }
  const wire::ServeResult r = server.get();
  const bool same_world = state_hash(served) == state_hash(headless) &&
                          served.trajectory_log == headless.trajectory_log && served.clock.tick == s.duration;
  detail = fmt("lockstep %llu ticks, %zu agent states, %zu mismatches, world %s",
               static_cast<unsigned long long>(served.clock.tick), states, mismatches,
               same_world ? "bit-identical" : "differs");
  return r.error.empty() && mismatches == 0 && same_world && r.env_updates == 0;
}

Outcome protocol_framing() {
  RandomStream rng(4580);
  std::vector<wire::Message> sent;
  std::vector<std::uint8_t> stream;
  for (int i = 0; i < 10000; ++i) {
    sent.push_back(random_message(rng));
    wire::encode_message(sent.back(), stream);
  }
  wire::FrameDecoder decoder;
  std::size_t received = 0, mismatches = 0;
  for (std::size_t pos = 0; pos < stream.size();) {
    const std::size_t n = std::min<std::size_t>(stream.size() - pos, 1 + rng.below(97));
    decoder.feed(std::span<const std::uint8_t>(stream).subspan(pos, n));
    pos += n;
    while (true) {
      const wire::Decoded d = decoder.next();
      if (d.status == wire::DecodeStatus::need_more) break;
      if (d.status != wire::DecodeStatus::message || received >= sent.size() ||
          wire::encode_message(*d.message) != wire::encode_message(sent[received]))
        ++mismatches;
      ++received;
      if (d.status == wire::DecodeStatus::framing_error) break;
    }
  }
  std::string lockstep;
  const bool lockstep_ok = lockstep_matches_headless(lockstep);
  return {mismatches == 0 && received == sent.size() && lockstep_ok,
          fmt("%zu/%zu fuzzed messages decoded, %zu mismatches; %s", received, sent.size(), mismatches,
              lockstep.c_str())};
}

// --- performance ----------------------------------------------------------------------------

Outcome performance() {
  const std::string text =
      "[scenario]\nname = open_field\nseed = 1\nduration = 300\nat_goal = regoal\n"
      "[environment]\nwalkable.field = 0,0; 200,0; 200,200; 0,200\n"
      "spawn.west = 2,2; 98,2; 98,198; 2,198\n"
      "goal.east = 180,2; 198,2; 198,198; 180,198\n"
      "[population]\ncount = 10000\n";
  const Scenario s = parse_scenario(text);
  WorldState w = make_world(s);
  w.record_trajectories = false;
  run_until(w, 10);  // warm-up
  const int ticks = 90;
  const auto t0 = Clock::now();
  run_until(w, w.clock.tick + ticks);
  const double rate = ticks / seconds_since(t0);

  // best of several repetitions for each neighbour search
  std::vector<Vec2> grid, all_pairs;
  double grid_time = 1e300, all_pairs_time = 1e300;
  for (int k = 0; k < 3; ++k) {
    auto t1 = Clock::now();
    grid = accelerations(w, NeighbourSearch::grid);
    grid_time = std::min(grid_time, seconds_since(t1));
    t1 = Clock::now();
    all_pairs = accelerations(w, NeighbourSearch::all_pairs);
    all_pairs_time = std::min(all_pairs_time, seconds_since(t1));
  }
  const double slowdown = all_pairs_time / grid_time;
  const bool equal = grid == all_pairs;
  return {w.agents.size() == 10000 && rate >= kMinTicksPerSecond && slowdown >= kMinAllPairsSlowdown && equal,
          fmt("%zu agents: %.1f ticks/s (min %.0f); forces grid %.4f s vs all-pairs %.3f s, %.0fx slower (min %.0fx)",
              w.agents.size(), rate, kMinTicksPerSecond, grid_time, all_pairs_time, slowdown, kMinAllPairsSlowdown)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"determinism", determinism},
      {"force-oracle", force_oracle},
      {"non-penetration", non_penetration},
      {"counter-flow", counterflow},
      {"annotation-consistency", annotation_matrix},
      {"rle-codec", rle_codec},
      {"metrics-sanity", metrics_sanity},
      {"protocol-framing", protocol_framing},
      {"performance", performance},
  };
  int failed = 0;
  for (const auto& [name, check] : criteria) {
    bool selected = argc < 2;
    for (int i = 1; i < argc; ++i) selected = selected || name.find(argv[i]) != std::string::npos;
    if (!selected) continue;
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  return failed ? 1 : 0;
}
