#include "crowd/lanes.hpp"

#include <algorithm>
#include <cmath>

namespace crowd {

double lane_order(const LaneFrame& frame, const std::map<std::uint32_t, int>& flow, const LaneParams& p) {
  const Vec2 along = p.axis.normalized();
  const Vec2 across(-along.y(), along.x());
  const std::size_t n = frame.ids.size();
  std::vector<int> label(n);
  std::vector<Vec2> local(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto it = flow.find(frame.ids[i]);
    label[i] = it == flow.end() ? 0 : it->second;
    local[i] = Vec2(frame.positions[i].dot(along), frame.positions[i].dot(across));
  }
  // sweep along the axis so each agent only visits agents inside its longitudinal window
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return local[a].x() < local[b].x() || (local[a].x() == local[b].x() && a < b);
  });
  double sum = 0.0;
  std::size_t scored = 0;
  std::size_t lo = 0;
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t i = order[k];
    if (label[i] == 0) continue;
    while (local[order[lo]].x() < local[i].x() - p.longitudinal) ++lo;
    int same = 0, opposite = 0;
    for (std::size_t m = lo; m < n && local[order[m]].x() <= local[i].x() + p.longitudinal; ++m) {
      const std::size_t j = order[m];
      if (j == i || label[j] == 0) continue;
      if (std::abs(local[j].y() - local[i].y()) > p.lateral) continue;
      (label[j] == label[i] ? same : opposite) += 1;
    }
    if (same + opposite == 0) continue;
    const double r = static_cast<double>(same - opposite) / static_cast<double>(same + opposite);
    sum += r * r;
    ++scored;
  }
  return scored ? sum / static_cast<double>(scored) : -1.0;
}

double lane_order(const std::vector<LaneFrame>& frames, const std::map<std::uint32_t, int>& flow,
                  const LaneParams& p) {
  double sum = 0.0;
  std::size_t used = 0;
  for (const auto& f : frames) {
    const double v = lane_order(f, flow, p);
    if (v < 0.0) continue;
    sum += v;
    ++used;
  }
  return used ? sum / static_cast<double>(used) : 0.0;
}

LaneTest lane_order_test(const std::vector<LaneFrame>& frames, const std::map<std::uint32_t, int>& flow,
                         int permutations, RandomStream& rng, const LaneParams& p) {
  LaneTest t;
  t.statistic = lane_order(frames, flow, p);
  std::vector<std::uint32_t> ids;
  std::vector<int> labels;
  for (const auto& [id, label] : flow) {
    ids.push_back(id);
    labels.push_back(label);
  }
  for (int k = 0; k < permutations; ++k) {
    for (std::size_t i = labels.size(); i > 1; --i) std::swap(labels[i - 1], labels[rng.below(i)]);
    std::map<std::uint32_t, int> shuffled;
    for (std::size_t i = 0; i < ids.size(); ++i) shuffled[ids[i]] = labels[i];
    t.null.push_back(lane_order(frames, shuffled, p));
  }
  if (!t.null.empty()) {
    std::vector<double> sorted = t.null;
    std::sort(sorted.begin(), sorted.end());
    // nearest-rank percentile
    const auto rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(sorted.size())));
    t.null_p95 = sorted[std::max<std::size_t>(rank, 1) - 1];
  }
  t.significant = t.statistic > t.null_p95;
  return t;
}

std::vector<LaneFrame> lane_frames(const WorldState& w, std::uint64_t first, std::uint64_t last) {
  std::vector<LaneFrame> frames;
  const auto lo = std::lower_bound(w.trajectory_log.begin(), w.trajectory_log.end(), first,
                                   [](const TrajectoryRecord& r, std::uint64_t t) { return r.tick < t; });
  for (auto it = lo; it != w.trajectory_log.end() && it->tick <= last; ++it) {
    if (frames.empty() || (it != lo && std::prev(it)->tick != it->tick)) frames.emplace_back();
    frames.back().ids.push_back(it->agent_id);
    frames.back().positions.push_back(it->position);
  }
  return frames;
}

}  // namespace crowd
