#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <unordered_map>
#include <vector>

#include "crowd/agent.hpp"
#include "crowd/random.hpp"
#include "crowd/scenario.hpp"

namespace crowd {

struct SimClock {
  std::uint64_t tick = 0;
  double dt = 1.0 / 30.0;
};

/// Uniform hash grid over agent positions. Entries inside a cell stay in ascending id order.
class SpatialGrid {
 public:
  struct Entry {
    std::uint32_t id;
    std::uint32_t index;  // position in the AgentSet
    Vec2 position;
  };

  explicit SpatialGrid(double cell_size = 4.0) : cell_size_(cell_size) {}

  void rebuild(const AgentSet& agents);

  double cell_size() const { return cell_size_; }
  std::pair<std::int64_t, std::int64_t> cell_of(const Vec2& p) const;
  const std::vector<Entry>* cell(std::int64_t cx, std::int64_t cy) const;
  std::size_t size() const { return count_; }
  std::size_t cell_count() const { return cells_.size(); }

  /// AgentSet indices with |position - p| <= radius, ascending.
  void query(const Vec2& p, double radius, std::vector<std::uint32_t>& out) const;

  /// Matching entries in unspecified order.
  void query_entries(const Vec2& p, double radius, std::vector<Entry>& out) const;

 private:
  static std::uint64_t key(std::int64_t cx, std::int64_t cy);

  double cell_size_;
  std::size_t count_ = 0;
  std::unordered_map<std::uint64_t, std::vector<Entry>> cells_;
};

/// Ids with |position - p| <= radius, ascending.
std::vector<std::uint32_t> neighbors_within(const SpatialGrid& grid, const Vec2& p, double radius);

/// Shared distance predicate for grid queries and the all-pairs reference.
inline bool within_radius(const Vec2& a, const Vec2& b, double radius) {
  return (a - b).squaredNorm() <= radius * radius;
}

enum class EventKind { spawn, despawn, goal_reached, regoal, anomaly };

struct Event {
  std::uint64_t tick = 0;
  std::uint32_t agent_id = 0;
  EventKind kind = EventKind::spawn;
  std::optional<AnomalyKind> anomaly;
  Vec2 position = Vec2::Zero();
};

struct TrajectoryRecord {
  std::uint64_t tick = 0;
  std::uint32_t agent_id = 0;
  Vec2 position = Vec2::Zero();
  Vec2 velocity = Vec2::Zero();
  bool anomaly = false;

  bool operator==(const TrajectoryRecord&) const = default;
};

struct WorldState {
  std::shared_ptr<const Scenario> scenario;
  SimClock clock;
  AgentSet agents;
  EnvironmentMap map;
  ForceParams forces;
  SpatialGrid grid;
  std::vector<TrajectoryRecord> trajectory_log;
  std::vector<Event> event_log;  // ordered by tick
  RandomStream rng{0, 1};
  std::uint32_t next_id = 1;
  std::vector<std::uint64_t> emitted;  // per spawn area index, rate-based emission count
  std::uint64_t anomaly_counter = 0;
  bool record_trajectories = true;

  const Agent* find(std::uint32_t id) const;
};

/// Initial world: population sampled from stream 0 of the seed, runtime draws from stream 1.
WorldState make_world(const Scenario& s);

/// Preferred speed, speed cap and target after applying an active anomaly.
struct EffectiveBehavior {
  double preferred_speed = 0.0;
  double max_speed = 0.0;
  Vec2 goal = Vec2::Zero();
  bool anomaly_active = false;
  bool goal_overridden = false;
};

/// Anomaly overrides in effect at `clock.tick`; identity when the window is inactive.
EffectiveBehavior apply_anomaly(const Agent& a, const SimClock& clock, const ForceParams& forces,
                                const EnvironmentMap& map);

bool anomaly_active(const AnomalyState& st, const SimClock& clock);

struct DrivingForce {
  Vec2 acceleration = Vec2::Zero();
  bool goal_reached = false;
};

/// (v0 e - v) / tau toward `goal`; zero with goal_reached when the goal is within 1e-6 m.
DrivingForce driving_force(const Agent& a, double preferred_speed, const Vec2& goal);
DrivingForce driving_force(const Agent& a);

/// Unit heading: velocity direction, else goal direction, else nullopt.
std::optional<Vec2> heading_of(const Agent& a);

/// Repulsion exerted by b on a.
Vec2 pedestrian_repulsion(const Agent& a, const Agent& b, const ForceParams& f);

/// Sum of wall forces from obstacles whose boundary lies within the cutoff.
Vec2 obstacle_repulsion(const Agent& a, const EnvironmentMap& map, const ForceParams& f);

/// Full acceleration of agents[i] with the given neighbour indices (ascending, may include i).
Vec2 total_acceleration(const WorldState& w, std::size_t i, const std::vector<std::uint32_t>& neighbours,
                        const EffectiveBehavior& eff);

enum class NeighbourSearch { grid, all_pairs };

/// Accelerations of every agent for the current tick.
std::vector<Vec2> accelerations(const WorldState& w, NeighbourSearch mode);

/// Linear-scan neighbour indices of agents[i] within `radius`, ascending.
std::vector<std::uint32_t> neighbours_linear(const AgentSet& agents, const Vec2& p, double radius);

/// Position after the move, corrected to stay outside obstacles and inside the walkable
/// region without exceeding the uncorrected displacement.
Vec2 resolve_position(const EnvironmentMap& map, const Vec2& from, const Vec2& proposed);

/// Nearest point outside every obstacle and inside the walkable region.
Vec2 push_to_free_space(const EnvironmentMap& map, const Vec2& p);

bool is_free(const EnvironmentMap& map, const Vec2& p);

/// Advances the world by one tick in place.
void step(WorldState& w);

/// Pure form of step.
WorldState stepped(WorldState w);

/// Runs until clock.tick == ticks.
void run_until(WorldState& w, std::uint64_t ticks);

/// FNV-1a over clock, agent kinematics and map geometry.
std::uint64_t state_hash(const WorldState& w);

/// Anomaly kinds flagged for each agent at `tick`, from the event log.
std::vector<std::pair<std::uint32_t, AnomalyKind>> anomaly_flags_at(const WorldState& w, std::uint64_t tick);

}  // namespace crowd
