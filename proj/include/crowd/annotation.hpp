#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "crowd/behavior.hpp"
#include "crowd/camera.hpp"

namespace crowd {

/// Row-major binary mask.
struct BinaryMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> data;

  BinaryMask() = default;
  BinaryMask(int h, int w) : height(h), width(w), data(static_cast<std::size_t>(h) * w, 0) {}

  std::uint8_t& at(int row, int col) { return data[static_cast<std::size_t>(row) * width + col]; }
  std::uint8_t at(int row, int col) const { return data[static_cast<std::size_t>(row) * width + col]; }

  bool operator==(const BinaryMask&) const = default;
};

/// Column-major run lengths starting with the background run.
struct RleMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint32_t> counts;

  bool operator==(const RleMask&) const = default;
};

class MalformedRle : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

RleMask encode_rle(const BinaryMask& mask);
BinaryMask decode_rle(const RleMask& rle);

/// Pixel box as (x, y, w, h); w = h = 0 for an empty mask.
using PixelBox = std::array<int, 4>;

PixelBox tight_box(const BinaryMask& mask);

/// RLE of the pixels owned by `id`, built from the instance buffer within `cov`'s box.
RleMask instance_rle(const RenderBuffers& buffers, const Coverage& cov);

inline constexpr int kAbsent = 0;
inline constexpr int kOccluded = 1;
inline constexpr int kVisible = 2;

struct JointAnnotation {
  Vec2 pixel = Vec2::Zero();
  int visibility = kAbsent;
};

struct AgentRecord {
  std::uint32_t agent_id = 0;
  PixelBox bbox{0, 0, 0, 0};
  std::uint64_t area = 0;
  std::array<JointAnnotation, kJointCount> joints2d;
  std::array<Vec3, kJointCount> joints3d;
  RleMask mask;
  double visibility = 0.0;
  std::vector<AnomalyKind> anomalies;
  JointAnnotation head_point;
  int joint_margin = 0;  // pixels
};

struct FrameAnnotation {
  std::uint32_t camera_id = 0;
  std::uint64_t tick = 0;
  std::vector<AgentRecord> records;  // ascending agent id
  std::size_t count = 0;
  GlobalConditions conditions;
  DensityPreset preset = DensityPreset::none;
};

struct AnnotateOptions {
  double visibility_threshold = 0.1;
};

/// ceil(max(fx, fy) * max bone radius / nearest joint depth) + 1.
int joint_margin_px(const CameraModel& c, const BodyModel& body);

FrameAnnotation annotate_frame(const CameraModel& c, const WorldState& w, const RenderResult& render,
                               const AnnotateOptions& options = {});

/// `scenario_camID_tick.png`
std::string frame_file_name(const std::string& scenario, std::uint32_t camera_id, std::uint64_t tick);

/// Streams one COCO dataset file; annotations are written as frames arrive.
/// Annotation objects of a frame without their leading "id" member, one per record.
std::vector<std::string> encode_annotations(const FrameAnnotation& frame, std::uint64_t image_id, int width,
                                            int height);

class CocoWriter {
 public:
  CocoWriter(const std::string& path, const Scenario& s);
  ~CocoWriter();
  CocoWriter(const CocoWriter&) = delete;
  CocoWriter& operator=(const CocoWriter&) = delete;

  void add_frame(const FrameAnnotation& frame, std::uint64_t image_id, const std::string& file_name, int width,
                 int height);
  /// Same, with bodies from encode_annotations so several writers can share one encoding.
  void add_frame(const FrameAnnotation& frame, std::uint64_t image_id, const std::string& file_name, int width,
                 int height, const std::vector<std::string>& encoded);
  void close();

  std::size_t images() const { return images_.size(); }
  std::size_t annotations() const { return next_annotation_ - 1; }

 private:
  std::string path_;
  std::ofstream out_;
  std::vector<std::string> images_;
  std::string buffer_;
  std::uint64_t next_annotation_ = 1;
  bool closed_ = false;
};

/// `tick,agent_id,x,y,vx,vy,anomaly_flag`, six decimals, rows in log order.
void export_trajectories(const WorldState& w, std::ostream& out);
void export_trajectories(const WorldState& w, const std::string& path);

struct TrajectoryRow {
  std::uint64_t tick = 0;
  std::uint32_t agent_id = 0;
  double x = 0, y = 0, vx = 0, vy = 0;
  bool anomaly = false;
};

std::vector<TrajectoryRow> read_trajectories(std::istream& in);

}  // namespace crowd
