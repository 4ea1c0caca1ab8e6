#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "crowd/geometry.hpp"

namespace crowd {

enum class AnomalyKind { runner, counterflow, loiterer, forbidden_zone_entry };

std::string_view to_string(AnomalyKind kind);
std::optional<AnomalyKind> anomaly_kind_from_string(std::string_view text);

/// Anomaly carried by one agent, resolved from its scenario spec.
struct AnomalyState {
  std::uint32_t spec_index = 0;
  AnomalyKind kind = AnomalyKind::runner;
  double speed_multiplier = 1.0;
  double dwell_seconds = 0.0;
  Polygon zone;
  std::uint64_t start = 0;  // first active tick
  std::uint64_t end = 0;    // one past the last active tick

  bool operator==(const AnomalyState&) const = default;
};

struct Agent {
  std::uint32_t id = 0;
  Vec2 position = Vec2::Zero();
  Vec2 velocity = Vec2::Zero();
  double preferred_speed = 1.34;
  double relaxation_time = 0.5;
  double social_radius = 0.3;
  Vec2 goal = Vec2::Zero();
  std::uint32_t goal_area = 0;
  double height = 1.72;
  double gait_phase = 0.0;
  std::optional<AnomalyState> anomaly;
  bool active = true;
  std::uint32_t spawn_area = 0;
  std::uint64_t spawn_tick = 0;

  bool operator==(const Agent&) const = default;
};

/// Agents kept sorted by ascending id.
using AgentSet = std::vector<Agent>;

}  // namespace crowd
