#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "crowd/agent.hpp"
#include "crowd/camera_model.hpp"
#include "crowd/geometry.hpp"
#include "crowd/random.hpp"

namespace crowd {

enum class Weather { clear, rain, snow };
enum class DensityPreset { none, low, medium, high };
enum class GoalPolicy { despawn, regoal };

std::string_view to_string(Weather w);
std::string_view to_string(DensityPreset p);
std::string_view to_string(GoalPolicy p);

/// low -> 40, medium -> 100, high -> 150; none -> 0.
std::uint32_t preset_count(DensityPreset p);
std::optional<DensityPreset> density_preset_from_string(std::string_view text);

/// Polygon with a stable numeric id (1-based within its category) and a config name.
struct NamedPolygon {
  std::uint32_t id = 0;
  std::string name;
  Polygon polygon;

  bool operator==(const NamedPolygon&) const = default;
};

/// Either an initial-population area (rate == 0) or a continuous emitter.
struct SpawnArea {
  std::uint32_t id = 0;
  std::string name;
  Polygon polygon;
  double rate = 0.0;               // agents per second
  std::vector<std::string> goals;  // empty: every goal area
  bool open = true;

  bool operator==(const SpawnArea&) const = default;
};

struct EnvironmentMap {
  std::vector<NamedPolygon> walkable;
  std::vector<NamedPolygon> obstacles;
  std::vector<SpawnArea> spawn_areas;
  std::vector<NamedPolygon> goal_areas;

  const NamedPolygon* goal(std::uint32_t id) const;
  const NamedPolygon* obstacle(std::uint32_t id) const;
  SpawnArea* spawn(std::uint32_t id);

  bool operator==(const EnvironmentMap&) const = default;
};

/// Normal distribution truncated to [min, max].
struct Distribution {
  double mean = 0.0;
  double stddev = 0.0;
  double min = 0.0;
  double max = 0.0;

  bool operator==(const Distribution&) const = default;
};

struct PopulationSpec {
  DensityPreset preset = DensityPreset::none;
  std::uint32_t count = 0;  // resolved from the preset when one is set
  Distribution preferred_speed{1.34, 0.26, 0.5, 2.2};
  Distribution social_radius{0.3, 0.03, 0.22, 0.4};
  Distribution body_height{1.72, 0.08, 1.5, 2.0};
  double relaxation_time = 0.5;
  double anomaly_fraction = 0.0;

  bool operator==(const PopulationSpec&) const = default;
};

/// Social-force coefficients; accelerations in m/s^2, lengths in m.
struct ForceParams {
  double pedestrian_strength = 2.1;
  double pedestrian_range = 0.3;
  double obstacle_strength = 10.0;
  double obstacle_range = 0.2;
  double cutoff = 4.0;
  double anisotropy = 0.3;
  double goal_tolerance = 0.3;
  double speed_limit_factor = 1.3;

  bool operator==(const ForceParams&) const = default;
};

struct GlobalConditions {
  int time_of_day = 12 * 60;  // minutes since midnight
  Weather weather = Weather::clear;
  std::string notes;

  bool operator==(const GlobalConditions&) const = default;
};

/// "HH:MM", zero padded.
std::string format_time_of_day(int minutes);

struct AnomalySpec {
  std::string name;
  AnomalyKind kind = AnomalyKind::runner;
  std::map<std::string, double> parameters;
  std::vector<Polygon> zones;  // forbidden_zone_entry: exactly one
  std::uint64_t start = 0;
  std::uint64_t end = 0;  // exclusive

  bool operator==(const AnomalySpec&) const = default;
};

struct Scenario {
  std::string name = "scenario";
  std::uint64_t seed = 0;
  std::uint32_t tick_rate = 30;
  std::uint64_t duration = 300;
  GoalPolicy at_goal = GoalPolicy::despawn;
  bool export_annotations = false;
  EnvironmentMap map;
  PopulationSpec population;
  ForceParams forces;
  std::vector<CameraModel> cameras;
  GlobalConditions conditions;
  std::vector<AnomalySpec> anomalies;

  double dt() const { return 1.0 / static_cast<double>(tick_rate); }

  bool operator==(const Scenario&) const = default;
};

/// Syntax, unknown-key and out-of-range failures while reading a scenario file.
class ScenarioError : public std::runtime_error {
 public:
  ScenarioError(std::string message, std::size_t line, std::size_t column, std::string field);

  std::size_t line() const { return line_; }
  std::size_t column() const { return column_; }
  const std::string& field() const { return field_; }

 private:
  std::size_t line_;
  std::size_t column_;
  std::string field_;
};

struct Violation {
  std::string field;
  std::string message;
};

struct ValidationReport {
  std::vector<Violation> violations;

  bool ok() const { return violations.empty(); }
  std::string to_string() const;
};

/// Thrown by parse_scenario when the parsed scenario fails validation.
class ScenarioInvalid : public std::runtime_error {
 public:
  explicit ScenarioInvalid(ValidationReport report);
  const ValidationReport& report() const { return report_; }

 private:
  ValidationReport report_;
};

/// Reads the scenario grammar without semantic validation.
Scenario read_scenario(std::string_view text);

/// read_scenario followed by validate_scenario; throws ScenarioInvalid on violations.
Scenario parse_scenario(std::string_view text);

Scenario load_scenario_file(const std::string& path);

std::string serialize_scenario(const Scenario& s);

ValidationReport validate_scenario(const Scenario& s);

/// Initial agents, placed inside initial-population spawn areas (round robin) with
/// obstacle and agent overlap rejected. Throws std::runtime_error when an area is
/// too crowded for the retry budget.
AgentSet sample_population(const Scenario& s, RandomStream& stream);

/// Draws one agent inside `area`; used both for the initial population and for
/// rate-based emission during the run. Returns nullopt when no free spot was found.
struct AgentDraw {
  const Scenario* scenario;
  const EnvironmentMap* map;
  const AgentSet* existing;
};
std::optional<Agent> draw_agent(const AgentDraw& ctx, const SpawnArea& area,
                                std::uint32_t id, std::uint64_t ordinal, RandomStream& stream);

/// Uniform point in the polygon by bounding-box rejection.
Vec2 sample_point_in(const Polygon& poly, RandomStream& stream);

/// AnomalyState for the spec at `index`, as assigned to tagged agents.
std::optional<AnomalyState> anomaly_for_spec(const Scenario& s, std::uint32_t index);

/// Goal area ids reachable from a spawn area, in configured order.
std::vector<std::uint32_t> allowed_goals(const EnvironmentMap& map, const SpawnArea& area);

/// Whether every allowed goal can be reached from each spawn area across walkable,
/// obstacle-free cells of the given size.
std::vector<std::string> unreachable_goals(const EnvironmentMap& map, double cell_size);

}  // namespace crowd
