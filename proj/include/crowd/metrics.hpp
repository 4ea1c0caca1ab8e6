#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "crowd/annotation.hpp"

namespace crowd::metrics {

struct Box {
  double x = 0, y = 0, w = 0, h = 0;
  double area() const { return w * h; }
  bool operator==(const Box&) const = default;
};

double iou(const Box& a, const Box& b);

/// Mask IoU computed on the run lengths; masks must share a size.
double mask_iou(const RleMask& a, const RleMask& b);

struct Detection {
  std::uint64_t image_id = 0;
  Box bbox;
  double score = 0.0;
  std::optional<RleMask> mask;
};

struct GroundTruth {
  std::uint64_t image_id = 0;
  Box bbox;
  double area = 0.0;  // bucket key; the mask pixel count for exported annotations
  bool crowd = false;
  std::optional<RleMask> mask;
};

struct Matching {
  std::vector<std::pair<std::size_t, std::size_t>> true_positives;  // (detection, ground truth)
  std::vector<std::size_t> false_positives;
  std::vector<std::size_t> false_negatives;
};

/// Greedy matching for one image in descending confidence; ties in IoU go to the lower gt index.
Matching match_detections(const std::vector<Box>& gt, const std::vector<Detection>& det, double tau);

struct Counts {
  std::size_t tp = 0, fp = 0, fn = 0;
  double precision() const;
  double recall() const;
  double f1() const;
};

/// TP/FP/FN summed over images at IoU threshold tau.
Counts count_matches(const std::vector<GroundTruth>& gt, const std::vector<Detection>& det, double tau,
                     bool use_masks = false);

double f1_at(const std::vector<GroundTruth>& gt, const std::vector<Detection>& det, double tau);

struct AreaRange {
  double lo = 0.0;
  double hi = 1e10;
};

inline constexpr AreaRange kAllAreas{0.0, 1e10};
inline constexpr AreaRange kSmall{0.0, 32.0 * 32.0};
inline constexpr AreaRange kMedium{32.0 * 32.0, 96.0 * 96.0};
inline constexpr AreaRange kLarge{96.0 * 96.0, 1e10};

/// 101-point interpolated AP at one IoU threshold; nullopt when no ground truth falls in the range.
std::optional<double> average_precision(const std::vector<GroundTruth>& gt, const std::vector<Detection>& det,
                                        double tau, AreaRange range = kAllAreas, bool use_masks = false);

/// Mean of average_precision over tau = 0.50, 0.55, ..., 0.95.
std::optional<double> average_precision_coco(const std::vector<GroundTruth>& gt, const std::vector<Detection>& det,
                                             AreaRange range = kAllAreas, bool use_masks = false);

struct ConfidenceCurve {
  std::vector<double> thresholds;
  std::vector<double> fractions;  // share of detections with score > threshold
  bool empty = false;
};

ConfidenceCurve confidence_curve(const std::vector<Detection>& det, const std::vector<double>& thresholds);

inline const std::vector<double> kDefaultIouGrid{0.4, 0.5, 0.6, 0.7, 0.8};

std::vector<double> default_confidence_grid();  // 0.00, 0.05, ..., 1.00

struct EvalOptions {
  std::vector<double> iou_thresholds = kDefaultIouGrid;
  std::vector<double> confidence_thresholds = default_confidence_grid();
  bool use_masks = false;
};

struct EvalReport {
  std::vector<double> iou_thresholds;
  std::vector<Counts> counts;  // parallel to iou_thresholds
  std::vector<double> f1;
  std::optional<double> ap, ap50, ap75, ap_small, ap_medium, ap_large;
  ConfidenceCurve confidence;
};

EvalReport evaluate(const std::vector<GroundTruth>& gt, const std::vector<Detection>& det,
                    const EvalOptions& options = {});

/// Schema problems in input files, with a JSON-path style location.
class InputError : public std::runtime_error {
 public:
  InputError(const std::string& path, const std::string& message)
      : std::runtime_error(path + ": " + message), path_(path) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

std::vector<GroundTruth> parse_ground_truth(const std::string& json_text);
std::vector<Detection> parse_detections(const std::string& json_text);
std::vector<GroundTruth> load_ground_truth(const std::string& path);
std::vector<Detection> load_detections(const std::string& path);

/// Ground truth re-expressed as confidence-1 detections.
std::vector<Detection> as_detections(const std::vector<GroundTruth>& gt);

std::string report_json(const EvalReport& r);
std::string f1_csv(const EvalReport& r);
std::string confidence_csv(const EvalReport& r);

}  // namespace crowd::metrics
