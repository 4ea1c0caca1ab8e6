#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace fs = std::filesystem;

namespace {

const fs::path kScenarios = fs::path(CROWD_SOURCE_DIR) / "scenarios";

int crowdsim(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + " \"" CROWDSIM_EXE "\" " + args + " >/dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("argument errors exit with 1, help with 0") {
  CHECK(crowdsim("") == 1);
  CHECK(crowdsim("--help") == 0);
  CHECK(crowdsim("frobnicate") == 1);
  CHECK(crowdsim("run") == 1);
  CHECK(crowdsim("serve " + q(kScenarios / "plaza.scn") + " --port 70000") == 1);
  CHECK(crowdsim("run " + q(kScenarios / "plaza.scn") + " --visibility-threshold 2") == 1);
  CHECK(crowdsim("run " + q(kScenarios / "plaza.scn") + " --times 25:00") == 1);
  CHECK(crowdsim("run " + q(kScenarios / "plaza.scn") + " --densities huge") == 1);
}

TEST_CASE("validate") {
  TempDir dir("crowd_cli_validate");
  CHECK(crowdsim("validate " + q(kScenarios / "plaza.scn")) == 0);
  CHECK(crowdsim("validate " + q(kScenarios / "corridor.scn")) == 0);
  std::ofstream(dir.path / "bad.scn") << "[scenario]\nname = bad\nduration = 0\n";
  CHECK(crowdsim("validate " + q(dir.path / "bad.scn")) == 1);
  std::ofstream(dir.path / "syntax.scn") << "[scenario]\nname bad\n";
  CHECK(crowdsim("validate " + q(dir.path / "syntax.scn")) == 1);
  CHECK(crowdsim("validate " + q(dir.path / "missing.scn")) == 3);
}

TEST_CASE("run writes into --out or CROWDSIM_OUT") {
  TempDir dir("crowd_cli_run");
  CHECK(crowdsim("run " + q(kScenarios / "plaza.scn") + " --duration 2 --no-coco --out " + q(dir.path / "a")) == 0);
  CHECK(fs::exists(dir.path / "a" / "plaza" / "1200_high" / "trajectories.csv"));
  CHECK_FALSE(fs::exists(dir.path / "a" / "plaza" / "1200_high" / "plaza_coco.json"));

  CHECK(crowdsim("run " + q(kScenarios / "corridor.scn") + " --duration 2 --densities low,medium",
                 "CROWDSIM_OUT=" + q(dir.path / "env")) == 0);
  CHECK(fs::exists(dir.path / "env" / "corridor" / "0700_low" / "trajectories.csv"));
  CHECK(fs::exists(dir.path / "env" / "corridor" / "0700_medium" / "trajectories.csv"));
  CHECK(fs::exists(dir.path / "env" / "corridor" / "summary.json"));
}

TEST_CASE("serve falls back to a headless run") {
  TempDir dir("crowd_cli_serve");
  const std::string base = "serve " + q(kScenarios / "corridor.scn") + " --port 0 --accept-timeout 0.05 --ticks 5";
  CHECK(crowdsim(base + " --headless-fallback --out " + q(dir.path)) == 0);
  CHECK(fs::exists(dir.path / "corridor" / "serve" / "trajectories.csv"));
  CHECK(crowdsim(base + " --out " + q(dir.path)) == 2);
}

TEST_CASE("eval") {
  TempDir dir("crowd_cli_eval");
  std::ofstream(dir.path / "gt.json")
      << R"({"images":[{"id":1}],"annotations":[{"id":1,"image_id":1,"bbox":[0,0,10,10],"iscrowd":0}]})";
  std::ofstream(dir.path / "det.json") << R"([{"image_id":1,"bbox":[0,0,10,10],"score":0.8}])";
  std::ofstream(dir.path / "bad.json") << R"([{"image_id":1,"score":0.8}])";

  const std::string files = q(dir.path / "gt.json") + " " + q(dir.path / "det.json");
  CHECK(crowdsim("eval " + files + " --out " + q(dir.path / "report")) == 0);
  std::ifstream report(dir.path / "report" / "report.json");
  const auto doc = nlohmann::json::parse(report);
  CHECK(doc["f1"][0]["f1"] == 1.0);
  CHECK(fs::exists(dir.path / "report" / "f1.csv"));
  CHECK(fs::exists(dir.path / "report" / "confidence.csv"));

  CHECK(crowdsim("eval " + files + " --thresholds 0.5,1.5") == 1);
  CHECK(crowdsim("eval " + q(dir.path / "gt.json") + " " + q(dir.path / "bad.json")) == 1);
  CHECK(crowdsim("eval " + q(dir.path / "nope.json") + " " + q(dir.path / "det.json")) == 3);
}
