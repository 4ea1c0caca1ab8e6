// crowdsim: run, serve, eval and validate entry points.
//
// Exit codes: 0 success, 1 validation or argument error, 2 runtime error, 3 I/O error.

#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include <CLI11.hpp>

#include "crowd/annotation.hpp"
#include "crowd/behavior.hpp"
#include "crowd/errors.hpp"
#include "crowd/metrics.hpp"
#include "crowd/protocol.hpp"
#include "crowd/runner.hpp"
#include "crowd/scenario.hpp"

namespace fs = std::filesystem;

namespace {

enum Exit { kOk = 0, kValidation = 1, kRuntime = 2, kIo = 3 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string default_output_root() {
  const char* env = std::getenv("CROWDSIM_OUT");
  return env && *env ? env : "out";
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw crowd::IoError("cannot write " + path.string());
  f << text;
  f.close();
  if (!f) throw crowd::IoError("write failure on " + path.string());
}

struct RunArgs {
  std::string scenario;
  std::optional<std::uint64_t> seed;
  std::optional<std::uint64_t> duration;
  std::string out = default_output_root();
  std::string times;
  std::string densities;
  bool matrix = false;
  bool no_coco = false;
  bool split_coco = false;
  bool no_trajectories = false;
  bool debug_images = false;
  double visibility_threshold = 0.1;
};

int cmd_run(const RunArgs& a) {
  crowd::RunManifest m;
  m.scenario_path = a.scenario;
  m.seed = a.seed;
  m.duration = a.duration;
  m.output_root = a.out;
  m.export_coco = !a.no_coco;
  m.split_coco = a.split_coco;
  m.export_trajectories = !a.no_trajectories;
  m.debug_images = a.debug_images;
  m.visibility_threshold = a.visibility_threshold;
  std::string times = a.times;
  std::string densities = a.densities;
  if (a.matrix) {
    if (times.empty()) times = "07:00,12:00,18:30";
    if (densities.empty()) densities = "low,medium,high";
  }
  for (const auto& t : split_list(times)) {
    const auto minutes = crowd::parse_time_of_day(t);
    if (!minutes) throw UsageError("invalid time of day '" + t + "'");
    m.times.push_back(*minutes);
  }
  for (const auto& d : split_list(densities)) {
    const auto preset = crowd::density_preset_from_string(d);
    if (!preset || *preset == crowd::DensityPreset::none) throw UsageError("invalid density preset '" + d + "'");
    m.densities.push_back(*preset);
  }
  const crowd::RunSummary summary = crowd::run_matrix(m);
  for (const auto& c : summary.conditions)
    std::cout << c.directory << ": " << c.ticks << " ticks, " << c.frames << " frames, " << c.annotations
              << " annotations, " << c.final_agents << " agents at end\n";
  return kOk;
}

struct ServeArgs {
  std::string scenario;
  std::string host = "127.0.0.1";
  std::uint32_t port = crowd::wire::kDefaultPort;
  std::optional<double> accept_timeout;  // seconds
  bool headless_fallback = false;
  std::optional<std::uint64_t> ticks;
  std::optional<std::uint64_t> seed;
  std::string out = default_output_root();
};

int cmd_serve(const ServeArgs& a) {
  crowd::Scenario s = crowd::load_scenario_file(a.scenario);
  if (a.seed) s.seed = *a.seed;
  crowd::WorldState w = crowd::make_world(s);
  crowd::wire::ServeOptions opts;
  opts.host = a.host;
  opts.port = static_cast<std::uint16_t>(a.port);
  if (a.accept_timeout)
    opts.accept_timeout = std::chrono::milliseconds(static_cast<std::int64_t>(*a.accept_timeout * 1000.0));
  opts.headless_fallback = a.headless_fallback;
  opts.max_ticks = a.ticks;
  opts.on_listening = [](std::uint16_t port) { std::cerr << "listening on port " << port << "\n" << std::flush; };
  const crowd::wire::ServeResult r = crowd::wire::serve(w, opts);

  const fs::path dir = fs::path(a.out) / s.name / "serve";
  fs::create_directories(dir);
  crowd::export_trajectories(w, (dir / "trajectories.csv").string());
  std::cerr << (r.headless ? "headless run" : "session") << " ended at tick " << w.clock.tick << "\n";
  if (!r.error.empty()) {
    std::cerr << "error: " << r.error << "\n";
    return kRuntime;
  }
  return kOk;
}

struct EvalArgs {
  std::string gt;
  std::string det;
  std::string thresholds;
  std::string out = ".";
  bool masks = false;
};

int cmd_eval(const EvalArgs& a) {
  crowd::metrics::EvalOptions opts;
  opts.use_masks = a.masks;
  if (!a.thresholds.empty()) {
    opts.iou_thresholds.clear();
    for (const auto& t : split_list(a.thresholds)) {
      double v = 0;
      try {
        std::size_t used = 0;
        v = std::stod(t, &used);
        if (used != t.size()) throw std::invalid_argument(t);
      } catch (const std::exception&) {
        throw UsageError("invalid IoU threshold '" + t + "'");
      }
      if (!(v > 0.0 && v <= 1.0)) throw UsageError("IoU threshold out of (0, 1]: " + t);
      opts.iou_thresholds.push_back(v);
    }
  }
  const auto gt = crowd::metrics::load_ground_truth(a.gt);
  const auto det = crowd::metrics::load_detections(a.det);
  const auto report = crowd::metrics::evaluate(gt, det, opts);
  fs::create_directories(a.out);
  write_text(fs::path(a.out) / "report.json", crowd::metrics::report_json(report));
  write_text(fs::path(a.out) / "f1.csv", crowd::metrics::f1_csv(report));
  write_text(fs::path(a.out) / "confidence.csv", crowd::metrics::confidence_csv(report));
  for (std::size_t i = 0; i < report.iou_thresholds.size(); ++i)
    std::cout << "F1@" << report.iou_thresholds[i] << " = " << report.f1[i] << "\n";
  if (report.ap) std::cout << "AP = " << *report.ap << "\n";
  return kOk;
}

int cmd_validate(const std::string& path) {
  const crowd::Scenario s = crowd::read_scenario([&] {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw crowd::IoError("cannot read " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
  }());
  const crowd::ValidationReport report = crowd::validate_scenario(s);
  if (!report.ok()) {
    std::cerr << report.to_string();
    return kValidation;
  }
  std::cout << s.name << ": ok (" << s.cameras.size() << " cameras, " << s.map.spawn_areas.size()
            << " spawn areas, " << s.map.goal_areas.size() << " goal areas)\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deterministic crowd simulation and ground-truth generator"};
  app.require_subcommand(1);

  RunArgs run;
  auto* run_cmd = app.add_subcommand("run", "Run a scenario over a condition matrix and export ground truth");
  run_cmd->add_option("scenario", run.scenario, "Scenario file")->required();
  run_cmd->add_option("--seed", run.seed, "Override the scenario seed");
  run_cmd->add_option("--duration", run.duration, "Override the duration in ticks");
  run_cmd->add_option("--out", run.out, "Output root (env CROWDSIM_OUT, default out)");
  run_cmd->add_option("--times", run.times, "Comma-separated times of day, e.g. 07:00,12:00");
  run_cmd->add_option("--densities", run.densities, "Comma-separated presets: low, medium, high");
  run_cmd->add_flag("--matrix", run.matrix, "Full matrix 07:00,12:00,18:30 x low,medium,high");
  run_cmd->add_flag("--no-coco", run.no_coco, "Skip COCO export");
  run_cmd->add_flag("--split-coco", run.split_coco, "Also write one COCO file per camera");
  run_cmd->add_flag("--no-trajectories", run.no_trajectories, "Skip trajectory CSV export");
  run_cmd->add_flag("--debug-images", run.debug_images, "Write instance and depth dumps");
  run_cmd->add_option("--visibility-threshold", run.visibility_threshold,
                      "Minimum visible fraction for a record (default 0.1)")
      ->check(CLI::Range(0.0, 1.0));

  ServeArgs serve;
  auto* serve_cmd = app.add_subcommand("serve", "Stream ticks to one renderer client over TCP");
  serve_cmd->add_option("scenario", serve.scenario, "Scenario file")->required();
  serve_cmd->add_option("--host", serve.host, "Bind address (default 127.0.0.1)");
  serve_cmd->add_option("--port", serve.port, "TCP port (default 4580, 0 picks a free port)")
      ->check(CLI::Range(0u, 65535u));
  serve_cmd->add_option("--accept-timeout", serve.accept_timeout, "Seconds to wait for a client");
  serve_cmd->add_flag("--headless-fallback", serve.headless_fallback, "Run without a client after the timeout");
  serve_cmd->add_option("--ticks", serve.ticks, "Tick limit (default: scenario duration)");
  serve_cmd->add_option("--seed", serve.seed, "Override the scenario seed");
  serve_cmd->add_option("--out", serve.out, "Output root for the trajectory log");

  EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate detections against COCO ground truth");
  eval_cmd->add_option("gt", eval.gt, "Ground-truth COCO file")->required();
  eval_cmd->add_option("det", eval.det, "Detections JSON array")->required();
  eval_cmd->add_option("--thresholds", eval.thresholds, "IoU thresholds (default 0.4,0.5,0.6,0.7,0.8)");
  eval_cmd->add_option("--out", eval.out, "Directory for report.json, f1.csv, confidence.csv");
  eval_cmd->add_flag("--masks", eval.masks, "Match on mask IoU instead of boxes");

  std::string validate_path;
  auto* validate_cmd = app.add_subcommand("validate", "Check a scenario file");
  validate_cmd->add_option("scenario", validate_path, "Scenario file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kValidation;
  }

  try {
    if (*run_cmd) return cmd_run(run);
    if (*serve_cmd) return cmd_serve(serve);
    if (*eval_cmd) return cmd_eval(eval);
    if (*validate_cmd) return cmd_validate(validate_path);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const crowd::ScenarioError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const crowd::ScenarioInvalid& e) {
    std::cerr << "error: invalid scenario\n" << e.report().to_string();
    return kValidation;
  } catch (const crowd::metrics::InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const crowd::IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return kRuntime;
}
