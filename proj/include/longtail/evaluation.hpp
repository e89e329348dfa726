#pragma once

#include <cstdint>
#include <vector>

#include "longtail/scene.hpp"

namespace longtail {

struct Detection {
  std::int64_t scene_id = 0;
  BoundingBox box;
  int label = 0;
  double confidence = 0.0;
};

struct GroundTruth {
  std::int64_t scene_id = 0;
  int label = 0;
  BoundingBox box;
};

struct MatchResult {
  std::vector<bool> detection_tp;  // per detection, in input order
  std::vector<bool> gt_matched;
};

// Greedy matching for one scene-and-label group: each detection takes the
// highest-IoU unmatched ground truth with IoU >= iou_thresh. Detections must
// arrive sorted by descending confidence.
MatchResult match_detections(const std::vector<Detection>& detections,
                             const std::vector<BoundingBox>& ground_truths,
                             double iou_thresh);

// Area under the precision-recall curve with all-points interpolation
// (precision envelope). Flags must be in descending-confidence order.
double average_precision(const std::vector<bool>& tp_flags, int total_gt);

struct SizeBins {
  double small_max_area = 0.0;   // small: area < small_max_area
  double medium_max_area = 0.0;  // medium: area in [small_max, medium_max)
};

// Scaled COCO-style defaults: 32^2 and 96^2 pixels on a 640-pixel canvas.
SizeBins default_size_bins(double canvas_w, double canvas_h);

struct EvalReport {
  double map = 0.0;    // mean over IoU thresholds 0.50:0.05:0.95
  double map50 = 0.0;
  double map75 = 0.0;
  double map_rare = 0.0;
  double map_common = 0.0;
  double map_frequent = 0.0;
  double map_small = 0.0;
  double map_medium = 0.0;
  double map_large = 0.0;
  int novel_clusters = 0;  // filled by the pipeline, not by map_summary
};

// Per-label AP averaged over the IoU threshold grid, with frequency-tier and
// object-size splits. Labels absent from both ground truth and detections are
// excluded from each mean. Throws when the ground truth is empty overall.
EvalReport map_summary(const std::vector<Detection>& detections,
                       const std::vector<GroundTruth>& ground_truths,
                       const std::vector<Tier>& category_tiers,
                       const SizeBins& bins);

}  // namespace longtail
