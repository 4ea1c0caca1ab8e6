#include "crowd/metrics.hpp"
#include "crowd/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include <json.hpp>

namespace crowd::metrics {

namespace {

using nlohmann::json;

double score_of(const Detection& d) { return d.score; }

double overlap(const Detection& d, const GroundTruth& g, bool use_masks) {
  if (use_masks && d.mask && g.mask) return mask_iou(*d.mask, *g.mask);
  return iou(d.bbox, g.bbox);
}

/// Detection indices sorted by descending score, stable on input order.
std::vector<std::size_t> by_confidence(const std::vector<Detection>& det, const std::vector<std::size_t>& subset) {
  std::vector<std::size_t> order = subset;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return score_of(det[a]) > score_of(det[b]); });
  return order;
}

template <typename T>
std::map<std::uint64_t, std::vector<std::size_t>> group_by_image(const std::vector<T>& items) {
  std::map<std::uint64_t, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < items.size(); ++i) groups[items[i].image_id].push_back(i);
  return groups;
}

}  // namespace

double iou(const Box& a, const Box& b) {
  const double ix = std::max(0.0, std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x));
  const double iy = std::max(0.0, std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y));
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

double mask_iou(const RleMask& a, const RleMask& b) {
  if (a.height != b.height || a.width != b.width) throw std::invalid_argument("mask sizes differ");
  // walk both run sequences in lockstep
  std::size_t ia = 0, ib = 0;
  std::uint64_t ra = a.counts.empty() ? 0 : a.counts[0];
  std::uint64_t rb = b.counts.empty() ? 0 : b.counts[0];
  bool va = false, vb = false;
  std::uint64_t inter = 0, area_a = 0, area_b = 0;
  const auto advance = [](const RleMask& m, std::size_t& i, std::uint64_t& r, bool& v) {
    while (r == 0 && i + 1 < m.counts.size()) {
      ++i;
      r = m.counts[i];
      v = !v;
    }
  };
  advance(a, ia, ra, va);
  advance(b, ib, rb, vb);
  while (ra > 0 && rb > 0) {
    const std::uint64_t n = std::min(ra, rb);
    if (va && vb) inter += n;
    if (va) area_a += n;
    if (vb) area_b += n;
    ra -= n;
    rb -= n;
    advance(a, ia, ra, va);
    advance(b, ib, rb, vb);
  }
  const std::uint64_t uni = area_a + area_b - inter;
  return uni > 0 ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

Matching match_detections(const std::vector<Box>& gt, const std::vector<Detection>& det, double tau) {
  Matching m;
  std::vector<std::size_t> all(det.size());
  std::iota(all.begin(), all.end(), 0);
  std::vector<bool> taken(gt.size(), false);
  for (const std::size_t d : by_confidence(det, all)) {
    std::optional<std::size_t> best;
    double best_iou = 0.0;
    for (std::size_t g = 0; g < gt.size(); ++g) {
      if (taken[g]) continue;
      const double v = iou(det[d].bbox, gt[g]);
      if (v >= tau && (!best || v > best_iou)) {
        best = g;
        best_iou = v;
      }
    }
    if (best) {
      taken[*best] = true;
      m.true_positives.emplace_back(d, *best);
    } else {
      m.false_positives.push_back(d);
    }
  }
  for (std::size_t g = 0; g < gt.size(); ++g)
    if (!taken[g]) m.false_negatives.push_back(g);
  return m;
}

double Counts::precision() const { return tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0; }
double Counts::recall() const { return tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0; }
double Counts::f1() const {
  const double p = precision();
  const double r = recall();
  return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
}

Counts count_matches(const std::vector<GroundTruth>& gt, const std::vector<Detection>& det, double tau,
                     bool use_masks) {
  Counts c;
  const auto gt_groups = group_by_image(gt);
  const auto det_groups = group_by_image(det);
  std::map<std::uint64_t, bool> images;
  for (const auto& [id, v] : gt_groups) images[id] = true;
  for (const auto& [id, v] : det_groups) images[id] = true;
  for (const auto& [image, unused] : images) {
    const auto gi = gt_groups.find(image);
    const auto di = det_groups.find(image);
    const std::vector<std::size_t> gidx = gi == gt_groups.end() ? std::vector<std::size_t>{} : gi->second;
    const std::vector<std::size_t> didx = di == det_groups.end() ? std::vector<std::size_t>{} : di->second;
    std::vector<bool> taken(gidx.size(), false);
    std::size_t tp = 0;
    for (const std::size_t d : by_confidence(det, didx)) {
      std::optional<std::size_t> best;
      double best_iou = 0.0;
      for (std::size_t k = 0; k < gidx.size(); ++k) {
        if (taken[k]) continue;
        const double v = overlap(det[d], gt[gidx[k]], use_masks);
        if (v >= tau && (!best || v > best_iou)) {
          best = k;
          best_iou = v;
        }
      }
      if (best) {
        taken[*best] = true;
        ++tp;
      }
    }
    c.tp += tp;
    c.fp += didx.size() - tp;
    c.fn += gidx.size() - tp;
  }
  return c;
}

double f1_at(const std::vector<GroundTruth>& gt, const std::vector<Detection>& det, double tau) {
  return count_matches(gt, det, tau).f1();
}

std::optional<double> average_precision(const std::vector<GroundTruth>& gt, const std::vector<Detection>& det,
                                        double tau, AreaRange range, bool use_masks) {
  const auto in_range = [&](double area) { return area >= range.lo && area < range.hi; };
  const auto gt_groups = group_by_image(gt);
  const auto det_groups = group_by_image(det);

  struct Scored {
    double score;
    bool tp;
  };
  std::vector<Scored> scored;
  std::size_t positives = 0;
  for (const auto& g : gt)
    if (!g.crowd && in_range(g.area)) ++positives;
  if (positives == 0) return std::nullopt;

  for (const auto& [image, didx] : det_groups) {
    std::vector<std::size_t> gidx;
    if (const auto it = gt_groups.find(image); it != gt_groups.end()) gidx = it->second;
    // non-ignored ground truth first, then ignored, each in input order
    std::stable_sort(gidx.begin(), gidx.end(), [&](std::size_t a, std::size_t b) {
      const bool ia = gt[a].crowd || !in_range(gt[a].area);
      const bool ib = gt[b].crowd || !in_range(gt[b].area);
      return !ia && ib;
    });
    std::vector<bool> taken(gidx.size(), false);
    for (const std::size_t d : by_confidence(det, didx)) {
      std::optional<std::size_t> best;
      double best_iou = 0.0;
      bool best_ignored = false;
      for (std::size_t k = 0; k < gidx.size(); ++k) {
        const GroundTruth& g = gt[gidx[k]];
        const bool ignored = g.crowd || !in_range(g.area);
        if (taken[k] && !g.crowd) continue;
        if (best && !best_ignored && ignored) break;
        const double v = overlap(det[d], g, use_masks);
        if (v >= tau && (!best || v > best_iou)) {
          best = k;
          best_iou = v;
          best_ignored = ignored;
        }
      }
      if (best) {
        taken[*best] = true;
        if (!best_ignored) scored.push_back({det[d].score, true});
        continue;
      }
      const double det_area = use_masks && det[d].mask
                                  ? static_cast<double>([&] {
                                      std::uint64_t n = 0;
                                      for (std::size_t i = 1; i < det[d].mask->counts.size(); i += 2)
                                        n += det[d].mask->counts[i];
                                      return n;
                                    }())
                                  : det[d].bbox.area();
      if (in_range(det_area)) scored.push_back({det[d].score, false});
    }
  }

  std::stable_sort(scored.begin(), scored.end(), [](const Scored& a, const Scored& b) { return a.score > b.score; });
  std::vector<double> precision(scored.size());
  std::vector<double> recall(scored.size());
  std::size_t tp = 0;
  for (std::size_t i = 0; i < scored.size(); ++i) {
    if (scored[i].tp) ++tp;
    precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
    recall[i] = static_cast<double>(tp) / static_cast<double>(positives);
  }
  for (std::size_t i = scored.size(); i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double sum = 0.0;
  for (int k = 0; k <= 100; ++k) {
    const double r = static_cast<double>(k) / 100.0;
    const auto it = std::lower_bound(recall.begin(), recall.end(), r);
    if (it != recall.end()) sum += precision[static_cast<std::size_t>(it - recall.begin())];
  }
  return sum / 101.0;
}

std::optional<double> average_precision_coco(const std::vector<GroundTruth>& gt, const std::vector<Detection>& det,
                                             AreaRange range, bool use_masks) {
  double sum = 0.0;
  for (int k = 0; k < 10; ++k) {
    const auto ap = average_precision(gt, det, 0.5 + 0.05 * k, range, use_masks);
    if (!ap) return std::nullopt;
    sum += *ap;
  }
  return sum / 10.0;
}

ConfidenceCurve confidence_curve(const std::vector<Detection>& det, const std::vector<double>& thresholds) {
  ConfidenceCurve c;
  c.thresholds = thresholds;
  c.empty = det.empty();
  for (const double t : thresholds) {
    if (det.empty()) {
      c.fractions.push_back(0.0);
      continue;
    }
    const auto above = std::count_if(det.begin(), det.end(), [&](const Detection& d) { return d.score > t; });
    c.fractions.push_back(static_cast<double>(above) / static_cast<double>(det.size()));
  }
  return c;
}

std::vector<double> default_confidence_grid() {
  std::vector<double> grid;
  for (int k = 0; k <= 20; ++k) grid.push_back(static_cast<double>(k) / 20.0);
  return grid;
}

EvalReport evaluate(const std::vector<GroundTruth>& gt, const std::vector<Detection>& det, const EvalOptions& o) {
  EvalReport r;
  r.iou_thresholds = o.iou_thresholds;
  for (const double tau : o.iou_thresholds) {
    r.counts.push_back(count_matches(gt, det, tau, o.use_masks));
    r.f1.push_back(r.counts.back().f1());
  }
  r.ap = average_precision_coco(gt, det, kAllAreas, o.use_masks);
  r.ap50 = average_precision(gt, det, 0.5, kAllAreas, o.use_masks);
  r.ap75 = average_precision(gt, det, 0.75, kAllAreas, o.use_masks);
  r.ap_small = average_precision_coco(gt, det, kSmall, o.use_masks);
  r.ap_medium = average_precision_coco(gt, det, kMedium, o.use_masks);
  r.ap_large = average_precision_coco(gt, det, kLarge, o.use_masks);
  r.confidence = confidence_curve(det, o.confidence_thresholds);
  return r;
}

namespace {

const json& require(const json& obj, const char* key, const std::string& path) {
  if (!obj.is_object()) throw InputError(path, "expected an object");
  const auto it = obj.find(key);
  if (it == obj.end()) throw InputError(path + "." + key, "missing field");
  return *it;
}

double number(const json& v, const std::string& path) {
  if (!v.is_number()) throw InputError(path, "expected a number");
  const double d = v.get<double>();
  if (!std::isfinite(d)) throw InputError(path, "expected a finite number");
  return d;
}

std::uint64_t image_id(const json& v, const std::string& path) {
  if (!v.is_number_integer() || v.get<std::int64_t>() < 0) throw InputError(path, "expected a non-negative integer");
  return v.get<std::uint64_t>();
}

Box parse_box(const json& v, const std::string& path) {
  if (!v.is_array() || v.size() != 4) throw InputError(path, "expected [x, y, w, h]");
  Box b{number(v[0], path + "[0]"), number(v[1], path + "[1]"), number(v[2], path + "[2]"),
        number(v[3], path + "[3]")};
  if (b.w < 0 || b.h < 0) throw InputError(path, "negative width or height");
  return b;
}

std::optional<RleMask> parse_rle(const json& obj, const std::string& path) {
  const auto it = obj.find("segmentation");
  if (it == obj.end() || it->is_null()) return std::nullopt;
  const std::string p = path + ".segmentation";
  if (!it->is_object()) throw InputError(p, "expected an RLE object {size, counts}");
  const json& size = require(*it, "size", p);
  const json& counts = require(*it, "counts", p);
  if (!size.is_array() || size.size() != 2 || !size[0].is_number_integer() || !size[1].is_number_integer())
    throw InputError(p + ".size", "expected [height, width]");
  if (!counts.is_array()) throw InputError(p + ".counts", "expected an array of run lengths");
  RleMask m;
  m.height = size[0].get<int>();
  m.width = size[1].get<int>();
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (!counts[i].is_number_integer() || counts[i].get<std::int64_t>() < 0)
      throw InputError(p + ".counts[" + std::to_string(i) + "]", "expected a non-negative integer");
    m.counts.push_back(counts[i].get<std::uint32_t>());
  }
  try {
    (void)decode_rle(m);
  } catch (const MalformedRle& e) {
    throw InputError(p, e.what());
  }
  return m;
}

json parse_text(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw InputError("$", what + " is not valid JSON: " + e.what());
  }
}

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

std::vector<GroundTruth> parse_ground_truth(const std::string& text) {
  const json root = parse_text(text, "ground truth");
  const json& anns = require(root, "annotations", "$");
  if (!anns.is_array()) throw InputError("$.annotations", "expected an array");
  std::vector<GroundTruth> out;
  out.reserve(anns.size());
  for (std::size_t i = 0; i < anns.size(); ++i) {
    const std::string path = "$.annotations[" + std::to_string(i) + "]";
    const json& a = anns[i];
    GroundTruth g;
    g.image_id = image_id(require(a, "image_id", path), path + ".image_id");
    g.bbox = parse_box(require(a, "bbox", path), path + ".bbox");
    const auto area = a.find("area");
    g.area = area != a.end() ? number(*area, path + ".area") : g.bbox.area();
    const auto crowd = a.find("iscrowd");
    g.crowd = crowd != a.end() && crowd->is_number_integer() && crowd->get<int>() != 0;
    g.mask = parse_rle(a, path);
    out.push_back(std::move(g));
  }
  return out;
}

std::vector<Detection> parse_detections(const std::string& text) {
  const json root = parse_text(text, "detections");
  if (!root.is_array()) throw InputError("$", "expected an array of detections");
  std::vector<Detection> out;
  out.reserve(root.size());
  for (std::size_t i = 0; i < root.size(); ++i) {
    const std::string path = "$[" + std::to_string(i) + "]";
    const json& d = root[i];
    Detection det;
    det.image_id = image_id(require(d, "image_id", path), path + ".image_id");
    det.bbox = parse_box(require(d, "bbox", path), path + ".bbox");
    det.score = number(require(d, "score", path), path + ".score");
    if (det.score < 0.0 || det.score > 1.0) throw InputError(path + ".score", "confidence outside [0, 1]");
    det.mask = parse_rle(d, path);
    out.push_back(std::move(det));
  }
  return out;
}

std::vector<GroundTruth> load_ground_truth(const std::string& path) { return parse_ground_truth(read_file(path)); }
std::vector<Detection> load_detections(const std::string& path) { return parse_detections(read_file(path)); }

std::vector<Detection> as_detections(const std::vector<GroundTruth>& gt) {
  std::vector<Detection> out;
  out.reserve(gt.size());
  for (const auto& g : gt) out.push_back({g.image_id, g.bbox, 1.0, g.mask});
  return out;
}

std::string report_json(const EvalReport& r) {
  json f1 = json::array();
  for (std::size_t i = 0; i < r.iou_thresholds.size(); ++i)
    f1.push_back({{"iou", r.iou_thresholds[i]},
                  {"f1", r.f1[i]},
                  {"precision", r.counts[i].precision()},
                  {"recall", r.counts[i].recall()},
                  {"tp", r.counts[i].tp},
                  {"fp", r.counts[i].fp},
                  {"fn", r.counts[i].fn}});
  json curve = json::array();
  for (std::size_t i = 0; i < r.confidence.thresholds.size(); ++i)
    curve.push_back({{"threshold", r.confidence.thresholds[i]}, {"fraction", r.confidence.fractions[i]}});
  json out = {
      {"f1", f1},
      {"ap", optional_number(r.ap)},
      {"ap50", optional_number(r.ap50)},
      {"ap75", optional_number(r.ap75)},
      {"ap_small", optional_number(r.ap_small)},
      {"ap_medium", optional_number(r.ap_medium)},
      {"ap_large", optional_number(r.ap_large)},
      {"confidence_curve", curve},
      {"confidence_curve_empty", r.confidence.empty},
  };
  return out.dump(2) + "\n";
}

std::string f1_csv(const EvalReport& r) {
  std::string out = "iou_threshold,precision,recall,f1,tp,fp,fn\n";
  char buf[256];
  for (std::size_t i = 0; i < r.iou_thresholds.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.2f,%.6f,%.6f,%.6f,%zu,%zu,%zu\n", r.iou_thresholds[i],
                  r.counts[i].precision(), r.counts[i].recall(), r.f1[i], r.counts[i].tp, r.counts[i].fp,
                  r.counts[i].fn);
    out += buf;
  }
  return out;
}

std::string confidence_csv(const EvalReport& r) {
  std::string out = "threshold,fraction\n";
  char buf[128];
  for (std::size_t i = 0; i < r.confidence.thresholds.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.2f,%.6f\n", r.confidence.thresholds[i], r.confidence.fractions[i]);
    out += buf;
  }
  return out;
}

}  // namespace crowd::metrics
