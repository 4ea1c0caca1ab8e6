#include "crowd/annotation.hpp"
#include "crowd/errors.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>

#include <json.hpp>

namespace crowd {

namespace {

using nlohmann::json;

class RunBuilder {
 public:
  void push(bool value, std::uint64_t n) {
    if (n == 0) return;
    if (value == current_) {
      run_ += n;
      return;
    }
    counts_.push_back(static_cast<std::uint32_t>(run_));
    current_ = value;
    run_ = n;
  }

  std::vector<std::uint32_t> finish() {
    counts_.push_back(static_cast<std::uint32_t>(run_));
    return std::move(counts_);
  }

 private:
  std::vector<std::uint32_t> counts_;
  bool current_ = false;
  std::uint64_t run_ = 0;
};


template <typename T>
void append_number(std::string& out, T v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, r.ptr);
}

// v rounded to `digits` decimals with trailing zeros dropped
void append_fixed(std::string& out, double v, int digits) {
  static constexpr double kScale[] = {1.0, 1e1, 1e2, 1e3, 1e4, 1e5, 1e6};
  const double scaled = std::round(v * kScale[digits]);
  if (!(std::abs(scaled) < 9e15)) {
    append_number(out, scaled / kScale[digits]);
    return;
  }
  long long k = static_cast<long long>(scaled);
  if (k < 0) {
    out += '-';
    k = -k;
  }
  long long unit = 1;
  for (int i = 0; i < digits; ++i) unit *= 10;
  append_number(out, k / unit);
  long long frac = k % unit;
  if (frac == 0) return;
  int width = digits;
  while (frac % 10 == 0) {
    frac /= 10;
    --width;
  }
  char buf[8];
  for (int i = width - 1; i >= 0; --i) {
    buf[i] = static_cast<char>('0' + frac % 10);
    frac /= 10;
  }
  out += '.';
  out.append(buf, static_cast<std::size_t>(width));
}

}  // namespace

RleMask encode_rle(const BinaryMask& mask) {
  RunBuilder runs;
  for (int col = 0; col < mask.width; ++col)
    for (int row = 0; row < mask.height; ++row) runs.push(mask.at(row, col) != 0, 1);
  return {mask.height, mask.width, runs.finish()};
}

BinaryMask decode_rle(const RleMask& rle) {
  if (rle.height < 0 || rle.width < 0) throw MalformedRle("negative RLE size");
  const std::uint64_t total = static_cast<std::uint64_t>(rle.height) * static_cast<std::uint64_t>(rle.width);
  std::uint64_t sum = 0;
  for (std::size_t i = 0; i < rle.counts.size(); ++i) {
    if (i > 0 && rle.counts[i] == 0) throw MalformedRle("zero-length run at index " + std::to_string(i));
    sum += rle.counts[i];
  }
  if (sum != total)
    throw MalformedRle("RLE counts sum to " + std::to_string(sum) + ", expected " + std::to_string(total));
  BinaryMask mask(rle.height, rle.width);
  std::uint64_t pos = 0;
  bool value = false;
  for (const auto n : rle.counts) {
    if (value)
      for (std::uint64_t k = pos; k < pos + n; ++k)
        mask.at(static_cast<int>(k % rle.height), static_cast<int>(k / rle.height)) = 1;
    pos += n;
    value = !value;
  }
  return mask;
}

PixelBox tight_box(const BinaryMask& mask) {
  int c0 = mask.width, r0 = mask.height, c1 = -1, r1 = -1;
  for (int row = 0; row < mask.height; ++row)
    for (int col = 0; col < mask.width; ++col)
      if (mask.at(row, col)) {
        c0 = std::min(c0, col);
        c1 = std::max(c1, col);
        r0 = std::min(r0, row);
        r1 = std::max(r1, row);
      }
  if (c1 < 0) return {0, 0, 0, 0};
  return {c0, r0, c1 - c0 + 1, r1 - r0 + 1};
}

RleMask instance_rle(const RenderBuffers& b, const Coverage& cov) {
  const auto H = static_cast<std::uint64_t>(b.height);
  RunBuilder runs;
  if (cov.visible_pixels == 0) {
    runs.push(false, H * static_cast<std::uint64_t>(b.width));
    return {b.height, b.width, runs.finish()};
  }
  runs.push(false, static_cast<std::uint64_t>(cov.min_col) * H);
  for (int col = cov.min_col; col <= cov.max_col; ++col) {
    runs.push(false, static_cast<std::uint64_t>(cov.min_row));
    for (int row = cov.min_row; row <= cov.max_row; ++row) runs.push(b.id_at(col, row) == cov.id, 1);
    runs.push(false, H - 1 - static_cast<std::uint64_t>(cov.max_row));
  }
  runs.push(false, static_cast<std::uint64_t>(b.width - 1 - cov.max_col) * H);
  return {b.height, b.width, runs.finish()};
}

int joint_margin_px(const CameraModel& c, const BodyModel& body) {
  double nearest = std::numeric_limits<double>::infinity();
  for (const auto& j : body.joints) {
    const double z = c.to_camera(j).z();
    if (z > kNearPlane) nearest = std::min(nearest, z);
  }
  nearest = std::max(nearest == std::numeric_limits<double>::infinity() ? kNearPlane : nearest, kNearPlane);
  return static_cast<int>(std::ceil(std::max(c.fx, c.fy) * body.max_radius() / nearest)) + 1;
}

namespace {

bool owns_near(const RenderBuffers& b, std::uint32_t id, int col, int row, int margin) {
  for (int r = std::max(0, row - margin); r <= std::min(b.height - 1, row + margin); ++r)
    for (int c = std::max(0, col - margin); c <= std::min(b.width - 1, col + margin); ++c)
      if (b.id_at(c, r) == id) return true;
  return false;
}

JointAnnotation annotate_joint(const CameraModel& cam, const RenderBuffers& b, std::uint32_t id, const Vec3& joint,
                               int margin) {
  JointAnnotation out;
  const Projection p = project_point(cam, joint);
  if (!p.in_front) return out;
  out.pixel = p.pixel;
  if (!(p.pixel.x() >= 0.0 && p.pixel.x() < cam.width && p.pixel.y() >= 0.0 && p.pixel.y() < cam.height))
    return out;
  const int col = static_cast<int>(p.pixel.x());
  const int row = static_cast<int>(p.pixel.y());
  const std::uint32_t owner = b.id_at(col, row);
  if (owner == id) out.visibility = kVisible;
  else if (owner != 0) out.visibility = kOccluded;
  else out.visibility = owns_near(b, id, col, row, margin) ? kVisible : kOccluded;
  return out;
}

}  // namespace

FrameAnnotation annotate_frame(const CameraModel& c, const WorldState& w, const RenderResult& render,
                               const AnnotateOptions& options) {
  FrameAnnotation frame;
  frame.camera_id = c.id;
  frame.tick = w.clock.tick;
  if (w.scenario) {
    frame.conditions = w.scenario->conditions;
    frame.preset = w.scenario->population.preset;
  }
  const auto flags = anomaly_flags_at(w, w.clock.tick);
  const RenderBuffers& b = render.buffers;
  for (const auto& cov : render.coverage) {
    if (cov.visible_pixels == 0) continue;
    const double vis = static_cast<double>(cov.visible_pixels) / static_cast<double>(cov.solo_pixels);
    if (vis < options.visibility_threshold) continue;
    const Agent* agent = w.find(cov.id);
    if (!agent) continue;
    const BodyModel& body = render.bodies[static_cast<std::size_t>(agent - w.agents.data())];

    AgentRecord rec;
    rec.agent_id = cov.id;
    rec.bbox = {cov.min_col, cov.min_row, cov.max_col - cov.min_col + 1, cov.max_row - cov.min_row + 1};
    rec.area = cov.visible_pixels;
    rec.visibility = std::min(1.0, vis);
    rec.mask = instance_rle(b, cov);
    rec.joint_margin = joint_margin_px(c, body);
    for (int k = 0; k < kJointCount; ++k) {
      rec.joints3d[k] = body.joints[k];
      rec.joints2d[k] = annotate_joint(c, b, cov.id, body.joints[k], rec.joint_margin);
    }
    rec.head_point = rec.joints2d[head];
    for (const auto& [id, kind] : flags)
      if (id == cov.id) rec.anomalies.push_back(kind);
    frame.records.push_back(std::move(rec));
  }
  frame.count = frame.records.size();
  return frame;
}

std::string frame_file_name(const std::string& scenario, std::uint32_t camera_id, std::uint64_t tick) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "_cam%u_%06llu.png", camera_id, static_cast<unsigned long long>(tick));
  return scenario + buf;
}

CocoWriter::CocoWriter(const std::string& path, const Scenario& s) : path_(path), out_(path, std::ios::binary) {
  if (!out_) throw IoError("cannot open " + path + " for writing");
  json info = {
      {"description", s.name + " synthetic crowd dataset"},
      {"version", "1.0"},
      {"scenario", s.name},
      {"seed", s.seed},
      {"tick_rate", s.tick_rate},
      {"duration_ticks", s.duration},
      {"conditions",
       {{"time_of_day", format_time_of_day(s.conditions.time_of_day)},
        {"weather", std::string(to_string(s.conditions.weather))},
        {"notes", s.conditions.notes}}},
      {"density", {{"preset", std::string(to_string(s.population.preset))}, {"agents", s.population.count}}},
  };
  json keypoints = json::array();
  for (int k = 0; k < kJointCount; ++k) keypoints.push_back(std::string(joint_name(k)));
  json skeleton = json::array();
  for (const auto& bone : pose_skeleton(Agent{}).bones) skeleton.push_back({bone.parent + 1, bone.child + 1});
  json categories = json::array(
      {{{"id", 1}, {"name", "person"}, {"supercategory", "person"}, {"keypoints", keypoints}, {"skeleton", skeleton}}});
  out_ << "{\"info\":" << info.dump() << ",\"categories\":" << categories.dump() << ",\"annotations\":[";
}

CocoWriter::~CocoWriter() {
  try {
    close();
  } catch (...) {
  }
}

std::vector<std::string> encode_annotations(const FrameAnnotation& frame, std::uint64_t image_id, int width,
                                            int height) {
  std::vector<std::string> out;
  out.reserve(frame.records.size());
  for (const auto& rec : frame.records) {
    if (rec.mask.height != height || rec.mask.width != width)
      throw std::runtime_error("mask resolution " + std::to_string(rec.mask.width) + "x" +
                               std::to_string(rec.mask.height) + " does not match camera " +
                               std::to_string(width) + "x" + std::to_string(height));
    std::string b = "\"image_id\":";
    append_number(b, image_id);
    b += ",\"category_id\":1,\"iscrowd\":0,\"bbox\":[";
    for (int k = 0; k < 4; ++k) {
      if (k) b += ',';
      append_number(b, rec.bbox[k]);
    }
    b += "],\"area\":";
    append_number(b, rec.area);
    b += ",\"segmentation\":{\"size\":[";
    append_number(b, rec.mask.height);
    b += ',';
    append_number(b, rec.mask.width);
    b += "],\"counts\":[";
    for (std::size_t k = 0; k < rec.mask.counts.size(); ++k) {
      if (k) b += ',';
      append_number(b, rec.mask.counts[k]);
    }
    b += "]},\"keypoints\":[";
    int labelled = 0;
    for (int k = 0; k < kJointCount; ++k) {
      const auto& j = rec.joints2d[k];
      if (k) b += ',';
      if (j.visibility == kAbsent) {
        b += "0,0,0";
        continue;
      }
      append_fixed(b, j.pixel.x(), 3);
      b += ',';
      append_fixed(b, j.pixel.y(), 3);
      b += ',';
      append_number(b, j.visibility);
      ++labelled;
    }
    b += "],\"num_keypoints\":";
    append_number(b, labelled);
    b += ",\"keypoints_3d\":[";
    for (int k = 0; k < kJointCount; ++k)
      for (int c = 0; c < 3; ++c) {
        if (k || c) b += ',';
        append_fixed(b, rec.joints3d[k][c], 6);
      }
    b += "],\"track_id\":";
    append_number(b, rec.agent_id);
    b += ",\"visibility\":";
    append_fixed(b, rec.visibility, 6);
    b += ",\"anomalies\":[";
    for (std::size_t k = 0; k < rec.anomalies.size(); ++k) {
      if (k) b += ',';
      b += '"';
      b += to_string(rec.anomalies[k]);
      b += '"';
    }
    b += "],\"head_point\":";
    if (rec.head_point.visibility == kAbsent) {
      b += "null";
    } else {
      b += '[';
      append_fixed(b, rec.head_point.pixel.x(), 3);
      b += ',';
      append_fixed(b, rec.head_point.pixel.y(), 3);
      b += ']';
    }
    b += '}';
    out.push_back(std::move(b));
  }
  return out;
}

void CocoWriter::add_frame(const FrameAnnotation& frame, std::uint64_t image_id, const std::string& file_name,
                           int width, int height) {
  add_frame(frame, image_id, file_name, width, height, encode_annotations(frame, image_id, width, height));
}

void CocoWriter::add_frame(const FrameAnnotation& frame, std::uint64_t image_id, const std::string& file_name,
                           int width, int height, const std::vector<std::string>& encoded) {
  if (closed_) throw std::logic_error("CocoWriter already closed");
  if (encoded.size() != frame.records.size()) throw std::invalid_argument("encoded annotation count mismatch");
  json image = {{"id", image_id},           {"file_name", file_name}, {"width", width},
                {"height", height},         {"camera_id", frame.camera_id}, {"tick", frame.tick},
                {"count", frame.count}};
  images_.push_back(image.dump());
  for (const auto& body : encoded) {
    std::string& b = buffer_;
    b.assign(next_annotation_ > 1 ? ",{\"id\":" : "{\"id\":");
    append_number(b, next_annotation_);
    b += ',';
    b += body;
    out_.write(b.data(), static_cast<std::streamsize>(b.size()));
    ++next_annotation_;
  }
  if (!out_) throw IoError("write failure on " + path_);
}

void CocoWriter::close() {
  if (closed_) return;
  closed_ = true;
  out_ << "],\"images\":[";
  for (std::size_t i = 0; i < images_.size(); ++i) {
    if (i) out_ << ',';
    out_ << images_[i];
  }
  out_ << "]}\n";
  out_.close();
  if (!out_) throw IoError("write failure on " + path_);
}

void export_trajectories(const WorldState& w, std::ostream& out) {
  out << "tick,agent_id,x,y,vx,vy,anomaly_flag\n";
  char buf[256];
  for (const auto& r : w.trajectory_log) {
    const int n = std::snprintf(buf, sizeof(buf), "%llu,%u,%.6f,%.6f,%.6f,%.6f,%d\n",
                                static_cast<unsigned long long>(r.tick), r.agent_id, r.position.x(),
                                r.position.y(), r.velocity.x(), r.velocity.y(), r.anomaly ? 1 : 0);
    out.write(buf, n);
  }
}

void export_trajectories(const WorldState& w, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path + " for writing");
  export_trajectories(w, f);
  f.close();
  if (!f) throw IoError("write failure on " + path);
}

std::vector<TrajectoryRow> read_trajectories(std::istream& in) {
  std::vector<TrajectoryRow> rows;
  std::string line;
  std::getline(in, line);
  if (line != "tick,agent_id,x,y,vx,vy,anomaly_flag") throw std::runtime_error("unexpected trajectory header");
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    TrajectoryRow row;
    const char* p = line.data();
    const char* end = line.data() + line.size();
    const auto field = [&](auto& value) {
      const auto [next, ec] = std::from_chars(p, end, value);
      if (ec != std::errc()) throw std::runtime_error("bad trajectory row at line " + std::to_string(line_no));
      p = next < end && *next == ',' ? next + 1 : next;
    };
    int flag = 0;
    field(row.tick);
    field(row.agent_id);
    field(row.x);
    field(row.y);
    field(row.vx);
    field(row.vy);
    field(flag);
    row.anomaly = flag != 0;
    rows.push_back(row);
  }
  return rows;
}

}  // namespace crowd
