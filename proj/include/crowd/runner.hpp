#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "crowd/annotation.hpp"

namespace crowd {

struct Condition {
  int time_of_day = 12 * 60;
  DensityPreset density = DensityPreset::none;

  /// "HHMM_density", e.g. "0700_low".
  std::string label() const;
};

/// Called once per camera per exported frame, in (tick, camera) order.
using FrameObserver = std::function<void(const CameraModel&, const WorldState&, const RenderResult&,
                                         const FrameAnnotation&)>;

struct RunManifest {
  std::string scenario_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::uint64_t> duration;  // ticks
  std::string output_root = "out";
  bool export_coco = true;
  bool split_coco = false;                 // also write one COCO file per camera
  bool export_trajectories = true;
  bool debug_images = false;
  std::vector<int> times;                  // empty: the scenario's own time of day
  std::vector<DensityPreset> densities;    // empty: the scenario's own preset
  double visibility_threshold = 0.1;
  bool keep_outputs = true;                // false removes each condition directory after checksumming
  FrameObserver observer;
};

struct FileChecksum {
  std::string name;
  std::uint64_t bytes = 0;
  std::string fnv1a64;  // hex
};

struct ConditionResult {
  Condition condition;
  std::string directory;
  std::uint64_t ticks = 0;
  std::size_t initial_agents = 0;
  std::size_t final_agents = 0;
  std::size_t spawned = 0;
  std::size_t frames = 0;
  std::size_t annotations = 0;
  std::uint64_t state_hash = 0;
  std::vector<FileChecksum> files;
};

struct RunSummary {
  std::string scenario;
  std::uint64_t seed = 0;
  std::vector<ConditionResult> conditions;
};

/// Scenario with the condition's time of day and density applied.
Scenario apply_condition(Scenario s, const Condition& c);

/// Runs one condition to completion and writes its exports into `directory`.
ConditionResult run_condition(const Scenario& s, const Condition& c, const RunManifest& m,
                              const std::string& directory);

/// Every condition of the manifest matrix, plus `<root>/<scenario>/summary.json`.
RunSummary run_matrix(const RunManifest& m);

std::string summary_json(const RunSummary& s);

/// FNV-1a 64 of a file's bytes as 16 hex digits.
FileChecksum checksum_file(const std::string& path, const std::string& name);

/// "07:00" or "0700" or minutes.
std::optional<int> parse_time_of_day(const std::string& text);

}  // namespace crowd
