#include "crowd/behavior.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numbers>

namespace crowd {

namespace {

constexpr double kDegenerate = 1e-6;
constexpr double kNudge = 1e-7;

Vec2 clamp_speed(Vec2 v, double max_speed) {
  if (!(max_speed > 0)) return Vec2::Zero();
  const double n = v.norm();
  if (n <= max_speed) return v;
  v *= max_speed / n;
  while (v.norm() > max_speed) v *= std::nextafter(1.0, 0.0);
  return v;
}

const SpawnArea* spawn_by_id(const EnvironmentMap& map, std::uint32_t id) {
  for (const auto& a : map.spawn_areas)
    if (a.id == id) return &a;
  return nullptr;
}

Vec2 interior_point(const Polygon& zone) {
  const Vec2 c = centroid(zone);
  if (point_in_polygon(zone, c)) return c;
  // concave zone: midpoint of a diagonal is a reasonable interior guess
  return (zone[0] + zone[zone.size() / 2]) / 2.0;
}

Vec2 reflected_goal(const Agent& a, const EnvironmentMap& map) {
  Box2<double> box = bounding_box(map.walkable.front().polygon);
  for (const auto& w : map.walkable) {
    const auto b = bounding_box(w.polygon);
    box.min = box.min.cwiseMin(b.min);
    box.max = box.max.cwiseMax(b.max);
  }
  const Vec2 center = (box.min + box.max) / 2.0;
  Vec2 origin = a.position;
  if (const auto* area = spawn_by_id(map, a.spawn_area)) origin = centroid(area->polygon);
  const Vec2 flow = a.goal - origin;
  Vec2 g = a.goal;
  if (std::abs(flow.x()) >= std::abs(flow.y())) g.x() = 2.0 * center.x() - g.x();
  else g.y() = 2.0 * center.y() - g.y();
  return is_free(map, g) ? g : push_to_free_space(map, g);
}

std::uint64_t fnv(std::uint64_t h, const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

template <typename T>
std::uint64_t fnv_value(std::uint64_t h, const T& v) {
  return fnv(h, &v, sizeof(T));
}

std::uint64_t fnv_polygon(std::uint64_t h, const Polygon& poly) {
  for (const auto& v : poly) {
    h = fnv_value(h, v.x());
    h = fnv_value(h, v.y());
  }
  return h;
}

}  // namespace

std::pair<std::int64_t, std::int64_t> SpatialGrid::cell_of(const Vec2& p) const {
  return {static_cast<std::int64_t>(std::floor(p.x() / cell_size_)),
          static_cast<std::int64_t>(std::floor(p.y() / cell_size_))};
}

std::uint64_t SpatialGrid::key(std::int64_t cx, std::int64_t cy) {
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(cx)) << 32) |
         static_cast<std::uint32_t>(cy);
}

void SpatialGrid::rebuild(const AgentSet& agents) {
  for (auto& [k, v] : cells_) v.clear();
  count_ = 0;
  for (std::size_t i = 0; i < agents.size(); ++i) {
    const auto& a = agents[i];
    if (!a.active) continue;
    const auto [cx, cy] = cell_of(a.position);
    cells_[key(cx, cy)].push_back({a.id, static_cast<std::uint32_t>(i), a.position});
    ++count_;
  }
  // drop cells emptied since the last rebuild so cell_count() stays meaningful
  for (auto it = cells_.begin(); it != cells_.end();) {
    if (it->second.empty()) it = cells_.erase(it);
    else ++it;
  }
}

const std::vector<SpatialGrid::Entry>* SpatialGrid::cell(std::int64_t cx, std::int64_t cy) const {
  const auto it = cells_.find(key(cx, cy));
  return it == cells_.end() ? nullptr : &it->second;
}

void SpatialGrid::query_entries(const Vec2& p, double radius, std::vector<Entry>& out) const {
  out.clear();
  if (!(radius >= 0)) return;
  const auto [x0, y0] = cell_of(p - Vec2(radius, radius));
  const auto [x1, y1] = cell_of(p + Vec2(radius, radius));
  const double span = (static_cast<double>(x1 - x0) + 1.0) * (static_cast<double>(y1 - y0) + 1.0);
  const auto take = [&](const std::vector<Entry>& entries) {
    for (const auto& e : entries)
      if (within_radius(e.position, p, radius)) out.push_back(e);
  };
  if (span > static_cast<double>(cells_.size())) {
    for (const auto& [k, entries] : cells_) take(entries);
    return;
  }
  for (std::int64_t cy = y0; cy <= y1; ++cy)
    for (std::int64_t cx = x0; cx <= x1; ++cx)
      if (const auto* entries = cell(cx, cy)) take(*entries);
}

void SpatialGrid::query(const Vec2& p, double radius, std::vector<std::uint32_t>& out) const {
  thread_local std::vector<Entry> entries;
  query_entries(p, radius, entries);
  out.clear();
  for (const auto& e : entries) out.push_back(e.index);
  std::sort(out.begin(), out.end());
}

std::vector<std::uint32_t> neighbors_within(const SpatialGrid& grid, const Vec2& p, double radius) {
  std::vector<SpatialGrid::Entry> entries;
  grid.query_entries(p, radius, entries);
  std::vector<std::uint32_t> ids;
  ids.reserve(entries.size());
  for (const auto& e : entries) ids.push_back(e.id);
  std::sort(ids.begin(), ids.end());
  return ids;
}

const Agent* WorldState::find(std::uint32_t id) const {
  const auto it = std::lower_bound(agents.begin(), agents.end(), id,
                                   [](const Agent& a, std::uint32_t v) { return a.id < v; });
  return it != agents.end() && it->id == id ? &*it : nullptr;
}

WorldState make_world(const Scenario& s) {
  WorldState w;
  w.scenario = std::make_shared<const Scenario>(s);
  w.clock = {0, s.dt()};
  w.map = s.map;
  w.forces = s.forces;
  RandomStream population(s.seed, 0);
  w.agents = sample_population(s, population);
  w.rng = RandomStream(s.seed, 1);
  w.next_id = static_cast<std::uint32_t>(w.agents.size()) + 1;
  w.emitted.assign(s.map.spawn_areas.size(), 0);
  w.grid = SpatialGrid(s.forces.cutoff);
  for (const auto& a : w.agents) w.event_log.push_back({0, a.id, EventKind::spawn, std::nullopt, a.position});
  w.grid.rebuild(w.agents);
  return w;
}

bool anomaly_active(const AnomalyState& st, const SimClock& clock) {
  std::uint64_t end = st.end;
  if (st.kind == AnomalyKind::loiterer) {
    const auto dwell = static_cast<std::uint64_t>(std::llround(std::max(0.0, st.dwell_seconds) / clock.dt));
    end = std::min(end, st.start + dwell);
  }
  return clock.tick >= st.start && clock.tick < end;
}

EffectiveBehavior apply_anomaly(const Agent& a, const SimClock& clock, const ForceParams& forces,
                                const EnvironmentMap& map) {
  EffectiveBehavior eff;
  eff.preferred_speed = a.preferred_speed;
  eff.goal = a.goal;
  if (a.anomaly && anomaly_active(*a.anomaly, clock)) {
    eff.anomaly_active = true;
    switch (a.anomaly->kind) {
      case AnomalyKind::runner:
        eff.preferred_speed = a.preferred_speed * a.anomaly->speed_multiplier;
        break;
      case AnomalyKind::loiterer:
        eff.preferred_speed = 0.0;
        break;
      case AnomalyKind::counterflow:
        eff.goal = reflected_goal(a, map);
        eff.goal_overridden = true;
        break;
      case AnomalyKind::forbidden_zone_entry:
        if (!a.anomaly->zone.empty()) {
          eff.goal = interior_point(a.anomaly->zone);
          eff.goal_overridden = true;
        }
        break;
    }
  }
  eff.max_speed = forces.speed_limit_factor * eff.preferred_speed;
  return eff;
}

DrivingForce driving_force(const Agent& a, double preferred_speed, const Vec2& goal) {
  const Vec2 to_goal = goal - a.position;
  const double dist = to_goal.norm();
  if (dist < kDegenerate) return {Vec2::Zero(), true};
  const Vec2 e = to_goal / dist;
  return {(preferred_speed * e - a.velocity) / a.relaxation_time, false};
}

DrivingForce driving_force(const Agent& a) { return driving_force(a, a.preferred_speed, a.goal); }

std::optional<Vec2> heading_of(const Agent& a) {
  const double speed = a.velocity.norm();
  if (speed > 1e-9) return Vec2(a.velocity / speed);
  const Vec2 to_goal = a.goal - a.position;
  const double dist = to_goal.norm();
  if (dist > kDegenerate) return Vec2(to_goal / dist);
  return std::nullopt;
}

Vec2 pedestrian_repulsion(const Agent& a, const Agent& b, const ForceParams& f) {
  const Vec2 diff = a.position - b.position;
  const double d = diff.norm();
  const double r_ab = a.social_radius + b.social_radius;
  if (d < kDegenerate) {
    const Vec2 n = a.id < b.id ? Vec2(-1.0, 0.0) : Vec2(1.0, 0.0);
    return f.pedestrian_strength * std::exp(r_ab / f.pedestrian_range) * n;
  }
  const Vec2 n = diff / d;
  const double magnitude = f.pedestrian_strength * std::exp((r_ab - d) / f.pedestrian_range);
  double weight = 1.0;
  if (const auto heading = heading_of(a)) {
    const double cos_phi = heading->dot(-n);
    weight = f.anisotropy + (1.0 - f.anisotropy) * (1.0 + cos_phi) / 2.0;
  }
  return magnitude * weight * n;
}

Vec2 obstacle_repulsion(const Agent& a, const EnvironmentMap& map, const ForceParams& f) {
  Vec2 total = Vec2::Zero();
  for (const auto& o : map.obstacles) {
    const auto bp = closest_boundary_point(o.polygon, a.position);
    if (bp.distance > f.cutoff) continue;
    const bool inside = point_in_polygon(o.polygon, a.position);
    Vec2 dir;
    double signed_dist = bp.distance;
    if (bp.distance < 1e-9) {
      dir = outward_normal(o.polygon, bp.edge);
      signed_dist = 0.0;
    } else if (inside) {
      dir = (bp.point - a.position) / bp.distance;
      signed_dist = -bp.distance;
    } else {
      dir = (a.position - bp.point) / bp.distance;
    }
    total += f.obstacle_strength * std::exp((a.social_radius - signed_dist) / f.obstacle_range) * dir;
  }
  return total;
}

Vec2 total_acceleration(const WorldState& w, std::size_t i, const std::vector<std::uint32_t>& neighbours,
                        const EffectiveBehavior& eff) {
  const Agent& a = w.agents[i];
  Vec2 acc = driving_force(a, eff.preferred_speed, eff.goal).acceleration;
  for (const auto j : neighbours) {
    if (j == i) continue;
    const Agent& b = w.agents[j];
    if (!b.active) continue;
    acc += pedestrian_repulsion(a, b, w.forces);
  }
  acc += obstacle_repulsion(a, w.map, w.forces);
  return acc;
}

std::vector<std::uint32_t> neighbours_linear(const AgentSet& agents, const Vec2& p, double radius) {
  std::vector<std::uint32_t> out;
  for (std::size_t j = 0; j < agents.size(); ++j)
    if (agents[j].active && within_radius(agents[j].position, p, radius))
      out.push_back(static_cast<std::uint32_t>(j));
  return out;
}

std::vector<Vec2> accelerations(const WorldState& w, NeighbourSearch mode) {
  std::vector<Vec2> acc(w.agents.size(), Vec2::Zero());
  std::vector<std::uint32_t> nb;
  for (std::size_t i = 0; i < w.agents.size(); ++i) {
    const Agent& a = w.agents[i];
    if (!a.active) continue;
    if (mode == NeighbourSearch::grid) w.grid.query(a.position, w.forces.cutoff, nb);
    else nb = neighbours_linear(w.agents, a.position, w.forces.cutoff);
    const auto eff = apply_anomaly(a, w.clock, w.forces, w.map);
    acc[i] = total_acceleration(w, i, nb, eff);
  }
  return acc;
}

bool is_free(const EnvironmentMap& map, const Vec2& p) {
  const bool walkable = map.walkable.empty() ||
                        std::any_of(map.walkable.begin(), map.walkable.end(),
                                    [&](const NamedPolygon& w) { return point_in_polygon(w.polygon, p); });
  if (!walkable) return false;
  return std::none_of(map.obstacles.begin(), map.obstacles.end(),
                      [&](const NamedPolygon& o) { return point_in_polygon(o.polygon, p); });
}

Vec2 push_to_free_space(const EnvironmentMap& map, const Vec2& start) {
  Vec2 p = start;
  for (int iter = 0; iter < 8; ++iter) {
    bool moved = false;
    for (const auto& o : map.obstacles) {
      if (!point_in_polygon(o.polygon, p)) continue;
      const auto bp = closest_boundary_point(o.polygon, p);
      p = bp.point + kNudge * outward_normal(o.polygon, bp.edge);
      moved = true;
    }
    if (!map.walkable.empty() &&
        std::none_of(map.walkable.begin(), map.walkable.end(),
                     [&](const NamedPolygon& w) { return point_in_polygon(w.polygon, p); })) {
      const NamedPolygon* best = nullptr;
      BoundaryPoint<double> best_bp{p, std::numeric_limits<double>::infinity(), 0};
      for (const auto& w : map.walkable) {
        const auto bp = closest_boundary_point(w.polygon, p);
        if (bp.distance < best_bp.distance) {
          best_bp = bp;
          best = &w;
        }
      }
      p = best_bp.point - kNudge * outward_normal(best->polygon, best_bp.edge);
      moved = true;
    }
    if (!moved) break;
  }
  return p;
}

Vec2 resolve_position(const EnvironmentMap& map, const Vec2& from, const Vec2& proposed) {
  if (is_free(map, proposed)) return proposed;
  const double step_len = (proposed - from).norm();
  const Vec2 pushed = push_to_free_space(map, proposed);
  if (is_free(map, pushed) && (pushed - from).norm() <= step_len) return pushed;
  if (!is_free(map, from)) return pushed;
  double lo = 0.0;
  double hi = 1.0;
  for (int i = 0; i < 60; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (is_free(map, from + mid * (proposed - from))) lo = mid;
    else hi = mid;
  }
  return from + lo * (proposed - from);
}

void step(WorldState& w) {
  const Scenario& s = *w.scenario;
  const double dt = w.clock.dt;
  const std::uint64_t next_tick = w.clock.tick + 1;
  const std::size_t n = w.agents.size();

  std::vector<EffectiveBehavior> eff(n);
  std::vector<Vec2> acc(n, Vec2::Zero());
  std::vector<std::uint32_t> nb;
  for (std::size_t i = 0; i < n; ++i) {
    const Agent& a = w.agents[i];
    if (!a.active) continue;
    eff[i] = apply_anomaly(a, w.clock, w.forces, w.map);
    w.grid.query(a.position, w.forces.cutoff, nb);
    acc[i] = total_acceleration(w, i, nb, eff[i]);
  }

  bool any_removed = false;
  for (std::size_t i = 0; i < n; ++i) {
    Agent& a = w.agents[i];
    if (!a.active) continue;
    const Vec2 previous = a.position;
    a.velocity = clamp_speed(a.velocity + acc[i] * dt, eff[i].max_speed);
    const Vec2 proposed = previous + a.velocity * dt;
    a.position = resolve_position(w.map, previous, proposed);
    if (a.position != proposed) a.velocity = (a.position - previous) / dt;
    const double walked = (a.position - previous).norm();
    a.gait_phase = std::fmod(a.gait_phase + 2.0 * std::numbers::pi * walked / (0.7 * a.height),
                             2.0 * std::numbers::pi);
    if (a.gait_phase < 0) a.gait_phase += 2.0 * std::numbers::pi;

    if (eff[i].anomaly_active)
      w.event_log.push_back({next_tick, a.id, EventKind::anomaly, a.anomaly->kind, a.position});

    const bool reached = !eff[i].goal_overridden &&
                         (eff[i].goal - a.position).norm() <= w.forces.goal_tolerance;
    if (!reached) continue;
    w.event_log.push_back({next_tick, a.id, EventKind::goal_reached, std::nullopt, a.position});
    if (s.at_goal == GoalPolicy::despawn) {
      a.active = false;
      any_removed = true;
      w.event_log.push_back({next_tick, a.id, EventKind::despawn, std::nullopt, a.position});
      continue;
    }
    const SpawnArea* area = spawn_by_id(w.map, a.spawn_area);
    std::vector<std::uint32_t> goals = area ? allowed_goals(w.map, *area) : std::vector<std::uint32_t>{};
    if (goals.empty())
      for (const auto& g : w.map.goal_areas) goals.push_back(g.id);
    const auto it = std::find(goals.begin(), goals.end(), a.goal_area);
    const std::size_t next = it == goals.end() ? 0 : (static_cast<std::size_t>(it - goals.begin()) + 1) % goals.size();
    a.goal_area = goals[next];
    a.goal = sample_point_in(w.map.goal(a.goal_area)->polygon, w.rng);
    w.event_log.push_back({next_tick, a.id, EventKind::regoal, std::nullopt, a.position});
  }
  if (any_removed)
    w.agents.erase(std::remove_if(w.agents.begin(), w.agents.end(), [](const Agent& a) { return !a.active; }),
                   w.agents.end());

  w.clock.tick = next_tick;

  if (w.record_trajectories) {
    for (const auto& a : w.agents) {
      const bool flagged = a.anomaly && anomaly_active(*a.anomaly, SimClock{next_tick - 1, dt});
      w.trajectory_log.push_back({next_tick, a.id, a.position, a.velocity, flagged});
    }
  }

  for (std::size_t k = 0; k < w.map.spawn_areas.size(); ++k) {
    const SpawnArea& area = w.map.spawn_areas[k];
    if (area.rate <= 0.0 || !area.open) continue;
    const auto due = static_cast<std::uint64_t>(std::floor(area.rate * static_cast<double>(next_tick) * dt)) -
                     static_cast<std::uint64_t>(std::floor(area.rate * static_cast<double>(next_tick - 1) * dt));
    for (std::uint64_t m = 0; m < due; ++m) {
      const std::uint32_t id = w.next_id++;
      const AgentDraw ctx{&s, &w.map, &w.agents};
      auto agent = draw_agent(ctx, area, id, w.emitted[k]++, w.rng);
      if (!agent) continue;
      const double fraction = s.population.anomaly_fraction;
      if (fraction > 0 && !s.anomalies.empty() && w.rng.uniform() < fraction) {
        const auto spec = static_cast<std::uint32_t>(w.anomaly_counter++ % s.anomalies.size());
        agent->anomaly = anomaly_for_spec(s, spec);
      }
      agent->spawn_tick = next_tick;
      w.event_log.push_back({next_tick, id, EventKind::spawn, std::nullopt, agent->position});
      w.agents.push_back(std::move(*agent));
    }
  }

  w.grid.rebuild(w.agents);
}

WorldState stepped(WorldState w) {
  step(w);
  return w;
}

void run_until(WorldState& w, std::uint64_t ticks) {
  while (w.clock.tick < ticks) step(w);
}

std::uint64_t state_hash(const WorldState& w) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  h = fnv_value(h, w.clock.tick);
  for (const auto& a : w.agents) {
    h = fnv_value(h, a.id);
    h = fnv_value(h, a.position.x());
    h = fnv_value(h, a.position.y());
    h = fnv_value(h, a.velocity.x());
    h = fnv_value(h, a.velocity.y());
    h = fnv_value(h, a.goal.x());
    h = fnv_value(h, a.goal.y());
    h = fnv_value(h, a.gait_phase);
  }
  for (const auto& o : w.map.obstacles) {
    h = fnv_value(h, o.id);
    h = fnv_polygon(h, o.polygon);
  }
  for (const auto& a : w.map.spawn_areas) {
    h = fnv_value(h, a.id);
    h = fnv_value(h, a.open);
    h = fnv_polygon(h, a.polygon);
  }
  for (const auto& g : w.map.goal_areas) {
    h = fnv_value(h, g.id);
    h = fnv_polygon(h, g.polygon);
  }
  return h;
}

std::vector<std::pair<std::uint32_t, AnomalyKind>> anomaly_flags_at(const WorldState& w, std::uint64_t tick) {
  std::vector<std::pair<std::uint32_t, AnomalyKind>> out;
  const auto lo = std::lower_bound(w.event_log.begin(), w.event_log.end(), tick,
                                   [](const Event& e, std::uint64_t t) { return e.tick < t; });
  for (auto it = lo; it != w.event_log.end() && it->tick == tick; ++it)
    if (it->kind == EventKind::anomaly && it->anomaly) out.emplace_back(it->agent_id, *it->anomaly);
  return out;
}

}  // namespace crowd
