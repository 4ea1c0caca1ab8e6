#include "crowd/runner.hpp"
#include "crowd/errors.hpp"

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <thread>

#include <json.hpp>

namespace crowd {

namespace fs = std::filesystem;

std::string Condition::label() const {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%02d%02d_", time_of_day / 60 % 100, time_of_day % 60);
  return buf + std::string(to_string(density));
}

Scenario apply_condition(Scenario s, const Condition& c) {
  s.conditions.time_of_day = c.time_of_day;
  if (c.density != DensityPreset::none) {
    s.population.preset = c.density;
    s.population.count = preset_count(c.density);
  }
  return s;
}

FileChecksum checksum_file(const std::string& path, const std::string& name) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read " + path);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  std::uint64_t total = 0;
  char buf[1 << 16];
  while (f) {
    f.read(buf, sizeof(buf));
    const auto n = f.gcount();
    for (std::streamsize i = 0; i < n; ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
    total += static_cast<std::uint64_t>(n);
  }
  char hex[17];
  std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(h));
  return {name, total, hex};
}

std::optional<int> parse_time_of_day(const std::string& text) {
  int hours = 0, minutes = 0;
  const char* p = text.data();
  const char* end = p + text.size();
  const auto colon = text.find(':');
  if (colon != std::string::npos) {
    if (std::from_chars(p, p + colon, hours).ptr != p + colon) return std::nullopt;
    if (std::from_chars(p + colon + 1, end, minutes).ptr != end) return std::nullopt;
  } else if (text.size() == 4) {
    if (std::from_chars(p, p + 2, hours).ptr != p + 2 || std::from_chars(p + 2, end, minutes).ptr != end)
      return std::nullopt;
  } else {
    int total = 0;
    if (text.empty() || std::from_chars(p, end, total).ptr != end || total < 0 || total >= 1440) return std::nullopt;
    return total;
  }
  if (hours < 0 || hours > 23 || minutes < 0 || minutes > 59) return std::nullopt;
  return hours * 60 + minutes;
}

ConditionResult run_condition(const Scenario& base, const Condition& c, const RunManifest& m,
                              const std::string& directory) {
  const Scenario s = apply_condition(base, c);
  const ValidationReport report = validate_scenario(s);
  if (!report.ok()) throw ScenarioInvalid(report);

  fs::create_directories(directory);
  ConditionResult result;
  result.condition = c;
  result.directory = directory;

  WorldState w = make_world(s);
  w.record_trajectories = m.export_trajectories;
  result.initial_agents = w.agents.size();
  const std::uint64_t ticks = m.duration.value_or(s.duration);

  const bool frames_wanted = (m.export_coco && s.export_annotations) || static_cast<bool>(m.observer);
  std::vector<Rasterizer> rasterizers;
  if (frames_wanted)
    for (const auto& cam : s.cameras) rasterizers.emplace_back(cam);

  std::vector<std::unique_ptr<CocoWriter>> writers;
  std::unique_ptr<CocoWriter> merged;
  std::vector<std::string> coco_names;
  if (m.export_coco && s.export_annotations) {
    if (m.split_coco)
      for (const auto& cam : s.cameras) {
        coco_names.push_back(s.name + "_cam" + std::to_string(cam.id) + ".json");
        writers.push_back(std::make_unique<CocoWriter>((fs::path(directory) / coco_names.back()).string(), s));
      }
    coco_names.push_back(s.name + "_coco.json");
    merged = std::make_unique<CocoWriter>((fs::path(directory) / coco_names.back()).string(), s);
  }
  if (m.debug_images) fs::create_directories(fs::path(directory) / "debug");

  AnnotateOptions opts;
  opts.visibility_threshold = m.visibility_threshold;
  const std::size_t ncam = rasterizers.size();
  std::vector<RenderResult> renders(ncam);
  std::vector<FrameAnnotation> frames(ncam);
  std::vector<std::vector<std::string>> encoded(ncam);

  std::size_t spawned_before = w.next_id - 1;
  while (w.clock.tick < ticks) {
    step(w);
    if (!frames_wanted || ncam == 0) continue;
    std::vector<BodyModel> bodies;
    bodies.reserve(w.agents.size());
    for (const auto& a : w.agents) bodies.push_back(pose_skeleton(a));
    {
      std::vector<std::jthread> pool;
      pool.reserve(ncam);
      for (std::size_t k = 0; k < ncam; ++k)
        pool.emplace_back([&, k] {
          renders[k] = rasterizers[k].render(w.agents, bodies);
          frames[k] = annotate_frame(rasterizers[k].camera(), w, renders[k], opts);
          if (merged) {
            const CameraModel& cam = rasterizers[k].camera();
            encoded[k] = encode_annotations(frames[k], w.clock.tick * ncam + k + 1, cam.width, cam.height);
          }
        });
    }
    for (std::size_t k = 0; k < ncam; ++k) {
      const CameraModel& cam = rasterizers[k].camera();
      const std::uint64_t image_id = w.clock.tick * ncam + k + 1;
      const std::string file = frame_file_name(s.name, cam.id, w.clock.tick);
      if (merged) {
        if (!writers.empty()) writers[k]->add_frame(frames[k], image_id, file, cam.width, cam.height, encoded[k]);
        merged->add_frame(frames[k], image_id, file, cam.width, cam.height, encoded[k]);
      }
      if (m.observer) m.observer(cam, w, renders[k], frames[k]);
      if (m.debug_images) {
        const auto stem = (fs::path(directory) / "debug" / file).replace_extension("").string();
        write_instance_ppm(renders[k].buffers, stem + "_instance.ppm");
        write_depth_pgm(renders[k].buffers, stem + "_depth.pgm");
      }
      ++result.frames;
      result.annotations += frames[k].count;
    }
  }
  result.ticks = w.clock.tick;
  result.final_agents = w.agents.size();
  result.spawned = w.next_id - 1 - spawned_before;
  result.state_hash = state_hash(w);

  for (auto& wr : writers) wr->close();
  if (merged) merged->close();
  if (m.export_trajectories) {
    export_trajectories(w, (fs::path(directory) / "trajectories.csv").string());
    result.files.push_back(checksum_file((fs::path(directory) / "trajectories.csv").string(), "trajectories.csv"));
  }
  for (const auto& name : coco_names) result.files.push_back(checksum_file((fs::path(directory) / name).string(), name));
  if (!m.keep_outputs) fs::remove_all(directory);
  return result;
}

RunSummary run_matrix(const RunManifest& m) {
  Scenario base = load_scenario_file(m.scenario_path);
  if (m.seed) base.seed = *m.seed;
  RunSummary summary;
  summary.scenario = base.name;
  summary.seed = base.seed;
  const std::vector<int> times = m.times.empty() ? std::vector<int>{base.conditions.time_of_day} : m.times;
  const std::vector<DensityPreset> densities =
      m.densities.empty() ? std::vector<DensityPreset>{base.population.preset} : m.densities;
  const fs::path root = fs::path(m.output_root) / base.name;
  for (const int t : times)
    for (const auto d : densities) {
      const Condition c{t, d};
      summary.conditions.push_back(run_condition(base, c, m, (root / c.label()).string()));
    }
  fs::create_directories(root);
  std::ofstream f(root / "summary.json", std::ios::binary);
  if (!f) throw IoError("cannot write " + (root / "summary.json").string());
  f << summary_json(summary);
  f.close();
  if (!f) throw IoError("write failure on " + (root / "summary.json").string());
  return summary;
}

std::string summary_json(const RunSummary& s) {
  nlohmann::json conds = nlohmann::json::array();
  for (const auto& c : s.conditions) {
    nlohmann::json files = nlohmann::json::array();
    for (const auto& f : c.files) files.push_back({{"name", f.name}, {"bytes", f.bytes}, {"fnv1a64", f.fnv1a64}});
    char hash[17];
    std::snprintf(hash, sizeof(hash), "%016llx", static_cast<unsigned long long>(c.state_hash));
    conds.push_back({{"condition", c.condition.label()},
                     {"time_of_day", format_time_of_day(c.condition.time_of_day)},
                     {"density", std::string(to_string(c.condition.density))},
                     {"ticks", c.ticks},
                     {"initial_agents", c.initial_agents},
                     {"final_agents", c.final_agents},
                     {"spawned", c.spawned},
                     {"frames", c.frames},
                     {"annotations", c.annotations},
                     {"state_hash", hash},
                     {"files", files}});
  }
  nlohmann::json out = {{"scenario", s.scenario}, {"seed", s.seed}, {"conditions", conds}};
  return out.dump(2) + "\n";
}

}  // namespace crowd
