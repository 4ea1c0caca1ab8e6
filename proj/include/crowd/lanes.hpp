#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "crowd/behavior.hpp"
#include "crowd/random.hpp"

namespace crowd {

/// Neighbourhood used by the lane order parameter, in corridor coordinates.
struct LaneParams {
  Vec2 axis = Vec2::UnitX();  // corridor direction
  double lateral = 0.6;       // |offset across the axis| for two agents to share a lane
  double longitudinal = 5.0;  // |offset along the axis|
};

struct LaneFrame {
  std::vector<std::uint32_t> ids;
  std::vector<Vec2> positions;
};

/// Mean over agents with at least one lane neighbour of ((same - opposite) / (same + opposite))^2.
/// Returns nullopt-like -1 when no agent has a neighbour.
double lane_order(const LaneFrame& frame, const std::map<std::uint32_t, int>& flow, const LaneParams& p = {});

/// Mean of lane_order over frames that have at least one scored agent.
double lane_order(const std::vector<LaneFrame>& frames, const std::map<std::uint32_t, int>& flow,
                  const LaneParams& p = {});

struct LaneTest {
  double statistic = 0.0;
  std::vector<double> null;  // one value per label permutation
  double null_p95 = 0.0;
  bool significant = false;  // statistic > null_p95
};

/// Compares the statistic with copies computed under random permutations of the per-agent labels.
LaneTest lane_order_test(const std::vector<LaneFrame>& frames, const std::map<std::uint32_t, int>& flow,
                         int permutations, RandomStream& rng, const LaneParams& p = {});

/// Frames for ticks in [first, last] taken from the trajectory log.
std::vector<LaneFrame> lane_frames(const WorldState& w, std::uint64_t first, std::uint64_t last);

}  // namespace crowd
