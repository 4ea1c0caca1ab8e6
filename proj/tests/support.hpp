#pragma once

#include <string>

#include "crowd/behavior.hpp"
#include "crowd/scenario.hpp"

namespace testing {

// Open 20 x 20 m field, one spawn area in the west, one goal in the east.
inline std::string open_field(int count = 10, const std::string& extra = "") {
  return "[scenario]\nname = field\nseed = 3\nduration = 300\n"
         "[environment]\nwalkable.all = 0,0; 20,0; 20,20; 0,20\n"
         "spawn.west = 1,1; 6,1; 6,19; 1,19\n"
         "goal.east = 17,1; 19,1; 19,19; 17,19\n"
         "[population]\ncount = " +
         std::to_string(count) + "\n" + extra;
}

inline crowd::Agent agent_at(std::uint32_t id, double x, double y) {
  crowd::Agent a;
  a.id = id;
  a.position = crowd::Vec2(x, y);
  a.goal = a.position;
  return a;
}

// World with hand-placed agents on an obstacle-free map.
inline crowd::WorldState bare_world(crowd::AgentSet agents) {
  crowd::Scenario s = crowd::parse_scenario(open_field(0));
  crowd::WorldState w = crowd::make_world(s);
  w.agents = std::move(agents);
  w.next_id = w.agents.empty() ? 1 : w.agents.back().id + 1;
  w.grid.rebuild(w.agents);
  return w;
}

}  // namespace testing
