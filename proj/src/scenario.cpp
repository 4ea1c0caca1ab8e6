#include "crowd/scenario.hpp"
#include "crowd/errors.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

namespace crowd {

namespace {

constexpr int kPlacementRetries = 2000;

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(s.substr(start, pos == std::string_view::npos ? pos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

bool valid_name(std::string_view name) {
  return !name.empty() && std::all_of(name.begin(), name.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-';
  });
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

/// One `key = value` line with the position of its value for diagnostics.
struct Entry {
  std::string key;
  std::string_view value;
  std::size_t line;
  std::size_t column;  // of the value
  std::string field;   // section.key
  std::size_t key_column = 0;
};

[[noreturn]] void fail(const Entry& e, const std::string& what) {
  throw ScenarioError(what, e.line, e.column, e.field);
}

[[noreturn]] void fail_key(const Entry& e, const std::string& what) {
  throw ScenarioError(what, e.line, e.key_column, e.field);
}

double to_double(const Entry& e, std::string_view text) {
  text = trim(text);
  double v = 0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec == std::errc::result_out_of_range) fail(e, "value out of range");
  if (res.ec != std::errc() || res.ptr != text.data() + text.size() || text.empty())
    fail(e, "expected a number, got '" + std::string(text) + "'");
  if (!std::isfinite(v)) fail(e, "value out of range: not finite");
  return v;
}

template <typename Unsigned>
Unsigned to_unsigned(const Entry& e, std::string_view text) {
  text = trim(text);
  if (!text.empty() && text.front() == '-') fail(e, "value out of range: must be non-negative");
  Unsigned v = 0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec == std::errc::result_out_of_range) fail(e, "value out of range");
  if (res.ec != std::errc() || res.ptr != text.data() + text.size() || text.empty())
    fail(e, "expected a non-negative integer, got '" + std::string(text) + "'");
  return v;
}

bool to_bool(const Entry& e, std::string_view text) {
  text = trim(text);
  if (text == "true" || text == "yes" || text == "1") return true;
  if (text == "false" || text == "no" || text == "0") return false;
  fail(e, "expected true/false, got '" + std::string(text) + "'");
}

std::vector<double> to_numbers(const Entry& e, std::string_view text, std::size_t expected) {
  std::vector<double> out;
  for (auto part : split(text, ',')) out.push_back(to_double(e, part));
  if (out.size() != expected)
    fail(e, "expected " + std::to_string(expected) + " comma-separated numbers, got " +
                std::to_string(out.size()));
  return out;
}

Polygon to_polygon(const Entry& e, std::string_view text) {
  Polygon poly;
  for (auto vertex : split(text, ';')) {
    if (trim(vertex).empty()) continue;
    const auto xy = to_numbers(e, vertex, 2);
    poly.emplace_back(xy[0], xy[1]);
  }
  if (poly.empty()) fail(e, "expected a polygon 'x,y; x,y; ...'");
  return poly;
}

int to_time_of_day(const Entry& e, std::string_view text) {
  text = trim(text);
  const auto colon = text.find(':');
  if (colon == std::string_view::npos) {
    const auto minutes = to_unsigned<std::uint32_t>(e, text);
    if (minutes >= 1440) fail(e, "value out of range: time_of_day must be < 1440 minutes");
    return static_cast<int>(minutes);
  }
  const auto hours = to_unsigned<std::uint32_t>(e, text.substr(0, colon));
  const auto minutes = to_unsigned<std::uint32_t>(e, text.substr(colon + 1));
  if (hours >= 24 || minutes >= 60) fail(e, "value out of range: time_of_day must be HH:MM");
  return static_cast<int>(hours * 60 + minutes);
}

std::string polygon_text(const Polygon& poly) {
  std::string out;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    if (i) out += "; ";
    out += format_double(poly[i].x()) + "," + format_double(poly[i].y());
  }
  return out;
}

std::string numbers_text(std::initializer_list<double> values) {
  std::string out;
  bool first = true;
  for (double v : values) {
    if (!first) out += ", ";
    out += format_double(v);
    first = false;
  }
  return out;
}

std::string distribution_text(const Distribution& d) {
  return numbers_text({d.mean, d.stddev, d.min, d.max});
}

Distribution to_distribution(const Entry& e) {
  const auto v = to_numbers(e, e.value, 4);
  return {v[0], v[1], v[2], v[3]};
}

/// Accumulates one [camera.N] section; orientation may come from look-at or raw matrices.
struct CameraDraft {
  CameraModel camera;
  std::optional<Vec3> eye;
  std::optional<Vec3> target;
  bool has_rotation = false;
  bool has_translation = false;
  Entry header;
};

struct AnomalyDraft {
  AnomalySpec spec;
  bool has_kind = false;
  bool has_window = false;
  Entry header;
};

class Reader {
 public:
  explicit Reader(std::string_view text) : text_(text) {}

  Scenario read() {
    std::size_t line_no = 0;
    std::set<std::string> seen_sections;
    for (auto raw : split(text_, '\n')) {
      ++line_no;
      auto line = raw;
      if (const auto hash = line.find('#'); hash != std::string_view::npos)
        line = line.substr(0, hash);
      const auto body = trim(line);
      if (body.empty()) continue;
      const std::size_t indent = static_cast<std::size_t>(body.data() - raw.data());
      if (body.front() == '[') {
        if (body.back() != ']') {
          throw ScenarioError("unterminated section header", line_no, indent + 1, "");
        }
        open_section(std::string(trim(body.substr(1, body.size() - 2))), line_no, indent + 1);
        if (!seen_sections.insert(section_).second)
          throw ScenarioError("duplicate section [" + section_ + "]", line_no, indent + 1,
                              section_);
        continue;
      }
      const auto eq = body.find('=');
      if (eq == std::string_view::npos)
        throw ScenarioError("expected 'key = value'", line_no, indent + 1, section_);
      if (section_.empty())
        throw ScenarioError("key outside of any section", line_no, indent + 1, "");
      const auto key = trim(body.substr(0, eq));
      const auto value_raw = body.substr(eq + 1);
      const auto value = trim(value_raw);
      const std::size_t value_col =
          indent + eq + 2 + (value.empty() ? 0 : static_cast<std::size_t>(value.data() - value_raw.data()));
      Entry e{std::string(key), value, line_no, value_col, section_ + "." + std::string(key), indent + 1};
      if (key.empty()) fail_key(e, "empty key");
      if (!keys_.insert(e.field).second && !(is_anomaly_section() && e.key == "zone"))
        fail_key(e, "duplicate key");
      dispatch(e);
    }
    return finish();
  }

 private:
  bool is_anomaly_section() const { return section_.rfind("anomaly.", 0) == 0; }

  void open_section(std::string name, std::size_t line, std::size_t column) {
    section_ = std::move(name);
    Entry header{"", {}, line, column, section_};
    static const std::set<std::string> plain{"scenario", "environment", "population", "forces",
                                             "conditions"};
    if (plain.count(section_)) return;
    if (section_.rfind("camera.", 0) == 0) {
      const auto id_text = std::string_view(section_).substr(7);
      CameraDraft draft;
      draft.camera.id = to_unsigned<std::uint32_t>(header, id_text);
      draft.header = header;
      cameras_.push_back(std::move(draft));
      return;
    }
    if (is_anomaly_section()) {
      const auto name = std::string_view(section_).substr(8);
      if (!valid_name(name)) fail(header, "invalid anomaly name");
      AnomalyDraft draft;
      draft.spec.name = std::string(name);
      draft.header = header;
      anomalies_.push_back(std::move(draft));
      return;
    }
    fail(header, "unknown section [" + section_ + "]");
  }

  void dispatch(const Entry& e) {
    if (section_ == "scenario") return scenario_key(e);
    if (section_ == "environment") return environment_key(e);
    if (section_ == "population") return population_key(e);
    if (section_ == "forces") return forces_key(e);
    if (section_ == "conditions") return conditions_key(e);
    if (section_.rfind("camera.", 0) == 0) return camera_key(e, cameras_.back());
    return anomaly_key(e, anomalies_.back());
  }

  void scenario_key(const Entry& e) {
    if (e.key == "name") {
      if (!valid_name(e.value)) fail(e, "name must be [A-Za-z0-9_-]+");
      s_.name = std::string(e.value);
    } else if (e.key == "seed") {
      s_.seed = to_unsigned<std::uint64_t>(e, e.value);
    } else if (e.key == "tick_rate") {
      s_.tick_rate = to_unsigned<std::uint32_t>(e, e.value);
    } else if (e.key == "duration") {
      s_.duration = to_unsigned<std::uint64_t>(e, e.value);
    } else if (e.key == "at_goal") {
      if (e.value == "despawn") s_.at_goal = GoalPolicy::despawn;
      else if (e.value == "regoal") s_.at_goal = GoalPolicy::regoal;
      else fail(e, "value out of range: expected despawn or regoal");
    } else if (e.key == "export_annotations") {
      s_.export_annotations = to_bool(e, e.value);
    } else {
      fail_key(e, "unknown key");
    }
  }

  void environment_key(const Entry& e) {
    const auto parts = split(e.key, '.');
    if (parts.size() < 2 || !valid_name(parts[1])) fail_key(e, "unknown key");
    const std::string name(parts[1]);
    const auto kind = parts[0];
    if (parts.size() == 2) {
      if (kind == "walkable") return add_named(s_.map.walkable, name, to_polygon(e, e.value));
      if (kind == "obstacle") return add_named(s_.map.obstacles, name, to_polygon(e, e.value));
      if (kind == "goal") return add_named(s_.map.goal_areas, name, to_polygon(e, e.value));
      if (kind == "spawn") {
        spawn_draft(name).polygon = to_polygon(e, e.value);
        return;
      }
    } else if (parts.size() == 3 && kind == "spawn") {
      auto& area = spawn_draft(name);
      if (parts[2] == "rate") {
        area.rate = to_double(e, e.value);
        if (area.rate < 0) fail(e, "value out of range: rate must be >= 0");
        return;
      }
      if (parts[2] == "goals") {
        for (auto g : split(e.value, ',')) {
          const auto goal = trim(g);
          if (!valid_name(goal)) fail(e, "invalid goal name '" + std::string(goal) + "'");
          area.goals.emplace_back(goal);
        }
        return;
      }
      if (parts[2] == "open") {
        area.open = to_bool(e, e.value);
        return;
      }
    }
    fail_key(e, "unknown key");
  }

  static void add_named(std::vector<NamedPolygon>& list, const std::string& name, Polygon poly) {
    list.push_back({static_cast<std::uint32_t>(list.size() + 1), name, std::move(poly)});
  }

  SpawnArea& spawn_draft(const std::string& name) {
    for (auto& a : s_.map.spawn_areas)
      if (a.name == name) return a;
    SpawnArea a;
    a.id = static_cast<std::uint32_t>(s_.map.spawn_areas.size() + 1);
    a.name = name;
    s_.map.spawn_areas.push_back(std::move(a));
    return s_.map.spawn_areas.back();
  }

  void population_key(const Entry& e) {
    auto& p = s_.population;
    if (e.key == "preset") {
      const auto preset = density_preset_from_string(e.value);
      if (!preset || *preset == DensityPreset::none)
        fail(e, "value out of range: expected low, medium or high");
      if (has_count_) fail(e, "preset and count are mutually exclusive");
      p.preset = *preset;
      p.count = preset_count(*preset);
    } else if (e.key == "count") {
      if (p.preset != DensityPreset::none) fail(e, "preset and count are mutually exclusive");
      p.count = to_unsigned<std::uint32_t>(e, e.value);
      has_count_ = true;
    } else if (e.key == "speed") {
      p.preferred_speed = to_distribution(e);
    } else if (e.key == "social_radius") {
      p.social_radius = to_distribution(e);
    } else if (e.key == "height") {
      p.body_height = to_distribution(e);
    } else if (e.key == "relaxation_time") {
      p.relaxation_time = to_double(e, e.value);
    } else if (e.key == "anomaly_fraction") {
      p.anomaly_fraction = to_double(e, e.value);
    } else {
      fail_key(e, "unknown key");
    }
  }

  void forces_key(const Entry& e) {
    auto& f = s_.forces;
    const std::map<std::string, double*> fields{
        {"pedestrian_strength", &f.pedestrian_strength},
        {"pedestrian_range", &f.pedestrian_range},
        {"obstacle_strength", &f.obstacle_strength},
        {"obstacle_range", &f.obstacle_range},
        {"cutoff", &f.cutoff},
        {"anisotropy", &f.anisotropy},
        {"goal_tolerance", &f.goal_tolerance},
        {"speed_limit_factor", &f.speed_limit_factor},
    };
    const auto it = fields.find(e.key);
    if (it == fields.end()) fail_key(e, "unknown key");
    *it->second = to_double(e, e.value);
  }

  void conditions_key(const Entry& e) {
    auto& c = s_.conditions;
    if (e.key == "time_of_day") {
      c.time_of_day = to_time_of_day(e, e.value);
    } else if (e.key == "weather") {
      if (e.value == "clear") c.weather = Weather::clear;
      else if (e.value == "rain") c.weather = Weather::rain;
      else if (e.value == "snow") c.weather = Weather::snow;
      else fail(e, "value out of range: expected clear, rain or snow");
    } else if (e.key == "notes") {
      c.notes = std::string(e.value);
    } else {
      fail_key(e, "unknown key");
    }
  }

  void camera_key(const Entry& e, CameraDraft& d) {
    auto& c = d.camera;
    if (e.key == "position") {
      const auto v = to_numbers(e, e.value, 3);
      d.eye = Vec3(v[0], v[1], v[2]);
    } else if (e.key == "look_at") {
      const auto v = to_numbers(e, e.value, 3);
      d.target = Vec3(v[0], v[1], v[2]);
    } else if (e.key == "rotation") {
      const auto v = to_numbers(e, e.value, 9);
      for (int r = 0; r < 3; ++r)
        for (int col = 0; col < 3; ++col) c.rotation(r, col) = v[static_cast<std::size_t>(3 * r + col)];
      d.has_rotation = true;
    } else if (e.key == "translation") {
      const auto v = to_numbers(e, e.value, 3);
      c.translation = Vec3(v[0], v[1], v[2]);
      d.has_translation = true;
    } else if (e.key == "focal") {
      const auto v = to_numbers(e, e.value, 2);
      c.fx = v[0];
      c.fy = v[1];
    } else if (e.key == "principal") {
      const auto v = to_numbers(e, e.value, 2);
      c.cx = v[0];
      c.cy = v[1];
    } else if (e.key == "distortion") {
      const auto v = to_numbers(e, e.value, 2);
      c.k1 = v[0];
      c.k2 = v[1];
    } else if (e.key == "resolution") {
      const auto v = to_numbers(e, e.value, 2);
      if (v[0] < 1 || v[1] < 1 || v[0] > 65535 || v[1] > 65535 || v[0] != std::floor(v[0]) ||
          v[1] != std::floor(v[1]))
        fail(e, "value out of range: resolution must be positive integers");
      c.width = static_cast<int>(v[0]);
      c.height = static_cast<int>(v[1]);
    } else {
      fail_key(e, "unknown key");
    }
  }

  void anomaly_key(const Entry& e, AnomalyDraft& d) {
    auto& a = d.spec;
    if (e.key == "kind") {
      const auto kind = anomaly_kind_from_string(e.value);
      if (!kind) fail(e, "value out of range: unknown anomaly kind");
      a.kind = *kind;
      d.has_kind = true;
    } else if (e.key == "window") {
      const auto v = to_numbers(e, e.value, 2);
      if (v[0] < 0 || v[1] < 0 || v[0] != std::floor(v[0]) || v[1] != std::floor(v[1]))
        fail(e, "value out of range: window must be non-negative tick numbers");
      a.start = static_cast<std::uint64_t>(v[0]);
      a.end = static_cast<std::uint64_t>(v[1]);
      d.has_window = true;
    } else if (e.key == "zone") {
      a.zones.push_back(to_polygon(e, e.value));
    } else if (e.key == "speed_multiplier" || e.key == "dwell") {
      a.parameters[e.key] = to_double(e, e.value);
    } else {
      fail_key(e, "unknown key");
    }
  }

  Scenario finish() {
    for (auto& d : cameras_) {
      if ((d.eye || d.target) && (d.has_rotation || d.has_translation))
        fail(d.header, "camera pose given both as look-at and as rotation/translation");
      if (d.eye.has_value() != d.target.has_value())
        fail(d.header, "camera look-at needs both position and look_at");
      if (d.eye) look_at(d.camera, *d.eye, *d.target);
      for (const auto& other : s_.cameras)
        if (other.id == d.camera.id) fail(d.header, "duplicate camera id");
      s_.cameras.push_back(d.camera);
    }
    for (auto& d : anomalies_) {
      if (!d.has_kind) fail(d.header, "anomaly needs a kind");
      auto& a = d.spec;
      if (!d.has_window) {
        a.start = 0;
        a.end = s_.duration;
      }
      const auto allow = [&](std::initializer_list<const char*> keys) {
        for (const auto& [k, v] : a.parameters) {
          if (std::none_of(keys.begin(), keys.end(), [&](const char* name) { return k == name; }))
            fail(d.header, "unknown key '" + k + "' for anomaly kind " +
                               std::string(to_string(a.kind)));
        }
      };
      switch (a.kind) {
        case AnomalyKind::runner:
          allow({"speed_multiplier"});
          a.parameters.try_emplace("speed_multiplier", 2.0);
          break;
        case AnomalyKind::loiterer:
          allow({"dwell"});
          a.parameters.try_emplace("dwell", 5.0);
          break;
        case AnomalyKind::counterflow:
        case AnomalyKind::forbidden_zone_entry:
          allow({});
          break;
      }
      if (a.kind != AnomalyKind::forbidden_zone_entry && !a.zones.empty())
        fail(d.header, "zone only applies to forbidden_zone_entry");
      s_.anomalies.push_back(std::move(a));
    }
    return std::move(s_);
  }

  std::string_view text_;
  std::string section_;
  std::set<std::string> keys_;
  Scenario s_;
  std::vector<CameraDraft> cameras_;
  std::vector<AnomalyDraft> anomalies_;
  bool has_count_ = false;
};

bool finite_positive(const Distribution& d) {
  return std::isfinite(d.mean) && std::isfinite(d.stddev) && std::isfinite(d.min) &&
         std::isfinite(d.max) && d.mean > 0 && d.stddev >= 0 && d.min > 0 && d.max >= d.min;
}

bool inside_any_walkable(const EnvironmentMap& map, const Polygon& poly) {
  return std::any_of(map.walkable.begin(), map.walkable.end(),
                     [&](const NamedPolygon& w) { return polygon_contains(w.polygon, poly); });
}

bool disc_clear_of_obstacles(const EnvironmentMap& map, const Vec2& p, double radius) {
  for (const auto& o : map.obstacles) {
    if (point_in_polygon(o.polygon, p)) return false;
    if (closest_boundary_point(o.polygon, p).distance < radius) return false;
  }
  return true;
}

AnomalyState make_anomaly_state(const AnomalySpec& spec, std::uint32_t index) {
  AnomalyState st;
  st.spec_index = index;
  st.kind = spec.kind;
  st.start = spec.start;
  st.end = spec.end;
  if (auto it = spec.parameters.find("speed_multiplier"); it != spec.parameters.end())
    st.speed_multiplier = it->second;
  if (auto it = spec.parameters.find("dwell"); it != spec.parameters.end())
    st.dwell_seconds = it->second;
  if (!spec.zones.empty()) st.zone = spec.zones.front();
  return st;
}

}  // namespace

std::string_view to_string(AnomalyKind kind) {
  switch (kind) {
    case AnomalyKind::runner: return "runner";
    case AnomalyKind::counterflow: return "counterflow";
    case AnomalyKind::loiterer: return "loiterer";
    case AnomalyKind::forbidden_zone_entry: return "forbidden_zone_entry";
  }
  return "unknown";
}

std::optional<AnomalyKind> anomaly_kind_from_string(std::string_view text) {
  for (auto k : {AnomalyKind::runner, AnomalyKind::counterflow, AnomalyKind::loiterer,
                 AnomalyKind::forbidden_zone_entry})
    if (to_string(k) == text) return k;
  return std::nullopt;
}

std::string_view to_string(Weather w) {
  switch (w) {
    case Weather::clear: return "clear";
    case Weather::rain: return "rain";
    case Weather::snow: return "snow";
  }
  return "clear";
}

std::string_view to_string(DensityPreset p) {
  switch (p) {
    case DensityPreset::none: return "none";
    case DensityPreset::low: return "low";
    case DensityPreset::medium: return "medium";
    case DensityPreset::high: return "high";
  }
  return "none";
}

std::string_view to_string(GoalPolicy p) {
  return p == GoalPolicy::despawn ? "despawn" : "regoal";
}

std::uint32_t preset_count(DensityPreset p) {
  switch (p) {
    case DensityPreset::low: return 40;
    case DensityPreset::medium: return 100;
    case DensityPreset::high: return 150;
    case DensityPreset::none: return 0;
  }
  return 0;
}

std::optional<DensityPreset> density_preset_from_string(std::string_view text) {
  for (auto p : {DensityPreset::none, DensityPreset::low, DensityPreset::medium,
                 DensityPreset::high})
    if (to_string(p) == text) return p;
  return std::nullopt;
}

std::string format_time_of_day(int minutes) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%02d:%02d", minutes / 60, minutes % 60);
  return buf;
}

const NamedPolygon* EnvironmentMap::goal(std::uint32_t id) const {
  for (const auto& g : goal_areas)
    if (g.id == id) return &g;
  return nullptr;
}

const NamedPolygon* EnvironmentMap::obstacle(std::uint32_t id) const {
  for (const auto& o : obstacles)
    if (o.id == id) return &o;
  return nullptr;
}

SpawnArea* EnvironmentMap::spawn(std::uint32_t id) {
  for (auto& s : spawn_areas)
    if (s.id == id) return &s;
  return nullptr;
}

ScenarioError::ScenarioError(std::string message, std::size_t line, std::size_t column,
                             std::string field)
    : std::runtime_error("line " + std::to_string(line) + ", column " + std::to_string(column) +
                         (field.empty() ? "" : " (" + field + ")") + ": " + message),
      line_(line),
      column_(column),
      field_(std::move(field)) {}

std::string ValidationReport::to_string() const {
  std::string out;
  for (const auto& v : violations) out += v.field + ": " + v.message + "\n";
  return out;
}

ScenarioInvalid::ScenarioInvalid(ValidationReport report)
    : std::runtime_error("invalid scenario:\n" + report.to_string()), report_(std::move(report)) {}

Scenario read_scenario(std::string_view text) { return Reader(text).read(); }

Scenario parse_scenario(std::string_view text) {
  Scenario s = read_scenario(text);
  auto report = validate_scenario(s);
  if (!report.ok()) throw ScenarioInvalid(std::move(report));
  return s;
}

Scenario load_scenario_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open scenario file '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_scenario(buf.str());
}

std::string serialize_scenario(const Scenario& s) {
  std::ostringstream out;
  out << "[scenario]\n";
  out << "name = " << s.name << "\n";
  out << "seed = " << s.seed << "\n";
  out << "tick_rate = " << s.tick_rate << "\n";
  out << "duration = " << s.duration << "\n";
  out << "at_goal = " << to_string(s.at_goal) << "\n";
  out << "export_annotations = " << (s.export_annotations ? "true" : "false") << "\n";

  out << "\n[environment]\n";
  for (const auto& w : s.map.walkable) out << "walkable." << w.name << " = " << polygon_text(w.polygon) << "\n";
  for (const auto& o : s.map.obstacles) out << "obstacle." << o.name << " = " << polygon_text(o.polygon) << "\n";
  for (const auto& a : s.map.spawn_areas) {
    out << "spawn." << a.name << " = " << polygon_text(a.polygon) << "\n";
    if (a.rate != 0.0) out << "spawn." << a.name << ".rate = " << format_double(a.rate) << "\n";
    if (!a.goals.empty()) {
      out << "spawn." << a.name << ".goals = ";
      for (std::size_t i = 0; i < a.goals.size(); ++i) out << (i ? ", " : "") << a.goals[i];
      out << "\n";
    }
    if (!a.open) out << "spawn." << a.name << ".open = false\n";
  }
  for (const auto& g : s.map.goal_areas) out << "goal." << g.name << " = " << polygon_text(g.polygon) << "\n";

  const auto& p = s.population;
  out << "\n[population]\n";
  if (p.preset != DensityPreset::none) out << "preset = " << to_string(p.preset) << "\n";
  else out << "count = " << p.count << "\n";
  out << "speed = " << distribution_text(p.preferred_speed) << "\n";
  out << "social_radius = " << distribution_text(p.social_radius) << "\n";
  out << "height = " << distribution_text(p.body_height) << "\n";
  out << "relaxation_time = " << format_double(p.relaxation_time) << "\n";
  out << "anomaly_fraction = " << format_double(p.anomaly_fraction) << "\n";

  const auto& f = s.forces;
  out << "\n[forces]\n";
  out << "pedestrian_strength = " << format_double(f.pedestrian_strength) << "\n";
  out << "pedestrian_range = " << format_double(f.pedestrian_range) << "\n";
  out << "obstacle_strength = " << format_double(f.obstacle_strength) << "\n";
  out << "obstacle_range = " << format_double(f.obstacle_range) << "\n";
  out << "cutoff = " << format_double(f.cutoff) << "\n";
  out << "anisotropy = " << format_double(f.anisotropy) << "\n";
  out << "goal_tolerance = " << format_double(f.goal_tolerance) << "\n";
  out << "speed_limit_factor = " << format_double(f.speed_limit_factor) << "\n";

  out << "\n[conditions]\n";
  out << "time_of_day = " << format_time_of_day(s.conditions.time_of_day) << "\n";
  out << "weather = " << to_string(s.conditions.weather) << "\n";
  if (!s.conditions.notes.empty()) out << "notes = " << s.conditions.notes << "\n";

  for (const auto& c : s.cameras) {
    out << "\n[camera." << c.id << "]\n";
    const auto& r = c.rotation;
    out << "rotation = "
        << numbers_text({r(0, 0), r(0, 1), r(0, 2), r(1, 0), r(1, 1), r(1, 2), r(2, 0), r(2, 1), r(2, 2)})
        << "\n";
    out << "translation = " << numbers_text({c.translation.x(), c.translation.y(), c.translation.z()}) << "\n";
    out << "focal = " << numbers_text({c.fx, c.fy}) << "\n";
    out << "principal = " << numbers_text({c.cx, c.cy}) << "\n";
    out << "distortion = " << numbers_text({c.k1, c.k2}) << "\n";
    out << "resolution = " << c.width << ", " << c.height << "\n";
  }

  for (const auto& a : s.anomalies) {
    out << "\n[anomaly." << a.name << "]\n";
    out << "kind = " << to_string(a.kind) << "\n";
    out << "window = " << a.start << ", " << a.end << "\n";
    for (const auto& [k, v] : a.parameters) out << k << " = " << format_double(v) << "\n";
    for (const auto& z : a.zones) out << "zone = " << polygon_text(z) << "\n";
  }
  return out.str();
}

ValidationReport validate_scenario(const Scenario& s) {
  ValidationReport r;
  const auto add = [&r](std::string field, std::string msg) {
    r.violations.push_back({std::move(field), std::move(msg)});
  };

  if (s.tick_rate < 1) add("scenario.tick_rate", "tick_rate ≥ 1");
  if (s.duration < 1) add("scenario.duration", "duration ≥ 1");

  const auto& map = s.map;
  bool geometry_ok = true;
  const auto check_polygon = [&](const std::string& field, const Polygon& poly) {
    if (poly.size() < 3) {
      add(field, "polygon needs at least 3 vertices");
      geometry_ok = false;
    } else if (!all_finite(poly)) {
      add(field, "polygon vertices must be finite");
      geometry_ok = false;
    } else if (polygon_self_intersects(poly)) {
      add(field, "polygon self-intersects");
      geometry_ok = false;
    }
  };
  if (map.walkable.empty()) {
    add("environment.walkable", "at least one walkable polygon is required");
    geometry_ok = false;
  }
  for (const auto& w : map.walkable) check_polygon("environment.walkable." + w.name, w.polygon);
  for (const auto& o : map.obstacles) check_polygon("environment.obstacle." + o.name, o.polygon);
  for (const auto& a : map.spawn_areas) check_polygon("environment.spawn." + a.name, a.polygon);
  for (const auto& g : map.goal_areas) check_polygon("environment.goal." + g.name, g.polygon);

  std::set<std::string> names;
  const auto unique = [&](const std::string& prefix, const std::string& name) {
    if (!names.insert(prefix + name).second) add("environment." + prefix + name, "duplicate name");
  };
  for (const auto& w : map.walkable) unique("walkable.", w.name);
  for (const auto& o : map.obstacles) unique("obstacle.", o.name);
  for (const auto& a : map.spawn_areas) unique("spawn.", a.name);
  for (const auto& g : map.goal_areas) unique("goal.", g.name);

  if (map.goal_areas.empty()) add("environment.goal", "at least one goal area is required");

  if (geometry_ok) {
    for (const auto& a : map.spawn_areas) {
      if (!inside_any_walkable(map, a.polygon))
        add("environment.spawn." + a.name, "spawn area '" + a.name + "' is not inside the walkable region");
    }
    for (const auto& g : map.goal_areas) {
      if (!inside_any_walkable(map, g.polygon))
        add("environment.goal." + g.name, "goal area '" + g.name + "' is not inside the walkable region");
      for (const auto& o : map.obstacles) {
        if (polygons_overlap(g.polygon, o.polygon))
          add("environment.goal." + g.name,
              "goal area '" + g.name + "' overlaps obstacle '" + o.name + "'");
      }
    }
  }
  for (const auto& a : map.spawn_areas) {
    if (!std::isfinite(a.rate) || a.rate < 0)
      add("environment.spawn." + a.name + ".rate", "rate must be finite and ≥ 0");
    for (const auto& g : a.goals) {
      const bool known = std::any_of(map.goal_areas.begin(), map.goal_areas.end(),
                                     [&](const NamedPolygon& p) { return p.name == g; });
      if (!known) add("environment.spawn." + a.name + ".goals", "unknown goal area '" + g + "'");
    }
  }

  const auto& p = s.population;
  if (p.preset != DensityPreset::none && p.count != preset_count(p.preset))
    add("population.count", "preset " + std::string(to_string(p.preset)) + " requires " +
                                std::to_string(preset_count(p.preset)) + " agents");
  if (!finite_positive(p.preferred_speed)) add("population.speed", "distribution bounds must be positive and finite");
  if (!finite_positive(p.social_radius)) add("population.social_radius", "distribution bounds must be positive and finite");
  if (!finite_positive(p.body_height)) add("population.height", "distribution bounds must be positive and finite");
  if (!(p.relaxation_time > 0) || !std::isfinite(p.relaxation_time))
    add("population.relaxation_time", "relaxation_time must be > 0");
  if (!(p.anomaly_fraction >= 0 && p.anomaly_fraction <= 1))
    add("population.anomaly_fraction", "anomaly_fraction must lie in [0, 1]");
  if (p.anomaly_fraction > 0 && s.anomalies.empty())
    add("population.anomaly_fraction", "anomaly_fraction > 0 requires at least one anomaly section");
  const bool has_initial_area = std::any_of(map.spawn_areas.begin(), map.spawn_areas.end(),
                                            [](const SpawnArea& a) { return a.rate == 0.0; });
  if (p.count > 0 && !has_initial_area)
    add("population.count", "an initial population needs a spawn area without a rate");

  const auto& f = s.forces;
  const auto positive = [&](const char* name, double v) {
    if (!(v > 0) || !std::isfinite(v)) add(std::string("forces.") + name, std::string(name) + " must be > 0");
  };
  positive("pedestrian_strength", f.pedestrian_strength);
  positive("pedestrian_range", f.pedestrian_range);
  positive("obstacle_strength", f.obstacle_strength);
  positive("obstacle_range", f.obstacle_range);
  positive("cutoff", f.cutoff);
  positive("goal_tolerance", f.goal_tolerance);
  positive("speed_limit_factor", f.speed_limit_factor);
  if (!(f.anisotropy >= 0 && f.anisotropy <= 1)) add("forces.anisotropy", "anisotropy must lie in [0, 1]");

  if (s.conditions.time_of_day < 0 || s.conditions.time_of_day >= 1440)
    add("conditions.time_of_day", "time_of_day must lie in [0, 1440)");

  if (s.export_annotations && s.cameras.empty())
    add("cameras", "annotation export requires at least one camera");
  std::set<std::uint32_t> camera_ids;
  for (const auto& c : s.cameras) {
    const std::string field = "camera." + std::to_string(c.id);
    if (!camera_ids.insert(c.id).second) add(field, "duplicate camera id");
    if (!(c.fx > 0) || !(c.fy > 0)) add(field + ".focal", "focal lengths must be > 0");
    if (c.width < 1 || c.height < 1) add(field + ".resolution", "resolution must be positive");
    if (!(std::abs(c.k1) <= 1) || !(std::abs(c.k2) <= 1)) add(field + ".distortion", "|k1|, |k2| must be ≤ 1");
    const Eigen::Matrix3d should_be_identity = c.rotation * c.rotation.transpose();
    if (!c.rotation.allFinite() || !c.translation.allFinite() ||
        !should_be_identity.isApprox(Eigen::Matrix3d::Identity(), 1e-6) || c.rotation.determinant() < 0)
      add(field + ".rotation", "rotation must be a proper orthonormal matrix");
  }

  for (const auto& a : s.anomalies) {
    const std::string field = "anomaly." + a.name;
    if (a.start >= a.end || a.end > s.duration)
      add(field + ".window", "activation window must be non-empty and within the scenario duration");
    if (a.kind == AnomalyKind::forbidden_zone_entry) {
      if (a.zones.size() != 1) add(field + ".zone", "forbidden_zone_entry carries exactly one polygon");
      for (const auto& z : a.zones) check_polygon(field + ".zone", z);
    }
    if (a.kind == AnomalyKind::runner) {
      auto it = a.parameters.find("speed_multiplier");
      if (it == a.parameters.end() || !(it->second > 0))
        add(field + ".speed_multiplier", "speed_multiplier must be > 0");
    }
    if (a.kind == AnomalyKind::loiterer) {
      auto it = a.parameters.find("dwell");
      if (it == a.parameters.end() || !(it->second >= 0)) add(field + ".dwell", "dwell must be ≥ 0");
    }
  }

  if (r.ok()) {
    for (auto& msg : unreachable_goals(map, 0.25)) add("environment", msg);
  }
  return r;
}

std::vector<std::uint32_t> allowed_goals(const EnvironmentMap& map, const SpawnArea& area) {
  std::vector<std::uint32_t> ids;
  if (area.goals.empty()) {
    for (const auto& g : map.goal_areas) ids.push_back(g.id);
    return ids;
  }
  for (const auto& name : area.goals)
    for (const auto& g : map.goal_areas)
      if (g.name == name) ids.push_back(g.id);
  return ids;
}

std::vector<std::string> unreachable_goals(const EnvironmentMap& map, double cell_size) {
  std::vector<std::string> problems;
  if (map.walkable.empty()) return problems;
  Box2<double> box = bounding_box(map.walkable.front().polygon);
  for (const auto& w : map.walkable) {
    const auto b = bounding_box(w.polygon);
    box.min = box.min.cwiseMin(b.min);
    box.max = box.max.cwiseMax(b.max);
  }
  const Vec2 extent = box.max - box.min;
  // cap the raster at ~4M cells
  while ((extent.x() / cell_size + 1) * (extent.y() / cell_size + 1) > 4.0e6) cell_size *= 2;
  const int nx = static_cast<int>(std::ceil(extent.x() / cell_size)) + 1;
  const int ny = static_cast<int>(std::ceil(extent.y() / cell_size)) + 1;
  const auto center = [&](int i, int j) {
    return Vec2(box.min.x() + (i + 0.5) * cell_size, box.min.y() + (j + 0.5) * cell_size);
  };
  std::vector<std::uint8_t> free(static_cast<std::size_t>(nx) * ny, 0);
  for (int j = 0; j < ny; ++j) {
    for (int i = 0; i < nx; ++i) {
      const Vec2 c = center(i, j);
      bool ok = std::any_of(map.walkable.begin(), map.walkable.end(),
                            [&](const NamedPolygon& w) { return point_in_polygon(w.polygon, c); });
      if (ok)
        ok = std::none_of(map.obstacles.begin(), map.obstacles.end(),
                          [&](const NamedPolygon& o) { return point_in_polygon(o.polygon, c); });
      free[static_cast<std::size_t>(j) * nx + i] = ok;
    }
  }
  const auto cells_in = [&](const Polygon& poly) {
    std::vector<int> cells;
    for (int j = 0; j < ny; ++j)
      for (int i = 0; i < nx; ++i)
        if (free[static_cast<std::size_t>(j) * nx + i] && point_in_polygon(poly, center(i, j)))
          cells.push_back(j * nx + i);
    if (cells.empty()) {
      const Vec2 c = centroid(poly);
      const int i = std::clamp(static_cast<int>((c.x() - box.min.x()) / cell_size), 0, nx - 1);
      const int j = std::clamp(static_cast<int>((c.y() - box.min.y()) / cell_size), 0, ny - 1);
      if (free[static_cast<std::size_t>(j) * nx + i]) cells.push_back(j * nx + i);
    }
    return cells;
  };

  for (const auto& area : map.spawn_areas) {
    std::vector<std::uint8_t> seen(free.size(), 0);
    std::vector<int> stack = cells_in(area.polygon);
    for (int c : stack) seen[static_cast<std::size_t>(c)] = 1;
    while (!stack.empty()) {
      const int c = stack.back();
      stack.pop_back();
      const int i = c % nx;
      const int j = c / nx;
      const int nbr[4][2] = {{i + 1, j}, {i - 1, j}, {i, j + 1}, {i, j - 1}};
      for (const auto& n : nbr) {
        if (n[0] < 0 || n[1] < 0 || n[0] >= nx || n[1] >= ny) continue;
        const int k = n[1] * nx + n[0];
        if (!free[static_cast<std::size_t>(k)] || seen[static_cast<std::size_t>(k)]) continue;
        seen[static_cast<std::size_t>(k)] = 1;
        stack.push_back(k);
      }
    }
    for (auto id : allowed_goals(map, area)) {
      const auto* goal = map.goal(id);
      const auto cells = cells_in(goal->polygon);
      const bool reached = std::any_of(cells.begin(), cells.end(),
                                       [&](int c) { return seen[static_cast<std::size_t>(c)] != 0; });
      if (!reached)
        problems.push_back("goal area '" + goal->name + "' is not reachable from spawn area '" +
                           area.name + "'");
    }
  }
  return problems;
}

Vec2 sample_point_in(const Polygon& poly, RandomStream& stream) {
  const auto box = bounding_box(poly);
  for (int i = 0; i < 100000; ++i) {
    const Vec2 p(stream.uniform(box.min.x(), box.max.x()), stream.uniform(box.min.y(), box.max.y()));
    if (point_in_polygon(poly, p)) return p;
  }
  return centroid(poly);
}

std::optional<Agent> draw_agent(const AgentDraw& ctx, const SpawnArea& area, std::uint32_t id,
                                std::uint64_t ordinal, RandomStream& stream) {
  const auto& pop = ctx.scenario->population;
  Agent a;
  a.id = id;
  const auto draw = [&](const Distribution& d) {
    return stream.truncated_normal(d.mean, d.stddev, d.min, d.max);
  };
  a.preferred_speed = draw(pop.preferred_speed);
  a.social_radius = draw(pop.social_radius);
  a.height = draw(pop.body_height);
  a.relaxation_time = pop.relaxation_time;
  a.gait_phase = stream.uniform(0.0, 2.0 * std::numbers::pi);
  a.spawn_area = area.id;

  const auto goals = allowed_goals(*ctx.map, area);
  if (goals.empty()) return std::nullopt;
  a.goal_area = goals[ordinal % goals.size()];
  a.goal = sample_point_in(ctx.map->goal(a.goal_area)->polygon, stream);

  for (int attempt = 0; attempt < kPlacementRetries; ++attempt) {
    const Vec2 p = sample_point_in(area.polygon, stream);
    if (!disc_clear_of_obstacles(*ctx.map, p, a.social_radius)) continue;
    bool overlaps = false;
    for (const auto& other : *ctx.existing) {
      if (!other.active) continue;
      if ((other.position - p).norm() < other.social_radius + a.social_radius) {
        overlaps = true;
        break;
      }
    }
    if (overlaps) continue;
    a.position = p;
    return a;
  }
  return std::nullopt;
}

AgentSet sample_population(const Scenario& s, RandomStream& stream) {
  AgentSet agents;
  std::vector<const SpawnArea*> initial;
  for (const auto& a : s.map.spawn_areas)
    if (a.rate == 0.0) initial.push_back(&a);
  const std::uint32_t count = s.population.count;
  if (count == 0) return agents;
  if (initial.empty()) throw std::runtime_error("no initial-population spawn area");

  agents.reserve(count);
  std::vector<std::uint64_t> ordinal(initial.size(), 0);
  const AgentDraw ctx{&s, &s.map, &agents};
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t k = i % initial.size();
    auto agent = draw_agent(ctx, *initial[k], i + 1, ordinal[k]++, stream);
    if (!agent)
      throw std::runtime_error("spawn area '" + initial[k]->name + "' is too small to place " +
                               std::to_string(count) + " agents without overlap");
    agents.push_back(std::move(*agent));
  }

  const auto tagged = static_cast<std::size_t>(std::llround(s.population.anomaly_fraction * count));
  if (tagged > 0 && !s.anomalies.empty()) {
    std::vector<std::size_t> order(agents.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = 0; i < tagged; ++i) {
      const auto j = i + static_cast<std::size_t>(stream.below(order.size() - i));
      std::swap(order[i], order[j]);
    }
    std::sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(tagged));
    for (std::size_t i = 0; i < tagged; ++i) {
      const auto spec = static_cast<std::uint32_t>(i % s.anomalies.size());
      agents[order[i]].anomaly = make_anomaly_state(s.anomalies[spec], spec);
    }
  }
  return agents;
}

std::optional<AnomalyState> anomaly_for_spec(const Scenario& s, std::uint32_t index) {
  if (index >= s.anomalies.size()) return std::nullopt;
  return make_anomaly_state(s.anomalies[index], index);
}

}  // namespace crowd
