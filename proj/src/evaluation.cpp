#include "longtail/evaluation.hpp"

#include <algorithm>
#include <array>
#include <map>
#include <numeric>
#include <set>
#include <stdexcept>

namespace longtail {

MatchResult match_detections(const std::vector<Detection>& detections,
                             const std::vector<BoundingBox>& ground_truths,
                             double iou_thresh) {
  for (std::size_t i = 1; i < detections.size(); ++i)
    if (detections[i].confidence > detections[i - 1].confidence)
      throw std::invalid_argument(
          "detections must be sorted by descending confidence");

  MatchResult result;
  result.detection_tp.assign(detections.size(), false);
  result.gt_matched.assign(ground_truths.size(), false);
  for (std::size_t d = 0; d < detections.size(); ++d) {
    double best_iou = 0.0;
    std::size_t best_g = ground_truths.size();
    for (std::size_t g = 0; g < ground_truths.size(); ++g) {
      if (result.gt_matched[g]) continue;
      const double v = iou(detections[d].box, ground_truths[g]);
      if (v >= iou_thresh && v > best_iou) {
        best_iou = v;
        best_g = g;
      }
    }
    if (best_g != ground_truths.size()) {
      result.detection_tp[d] = true;
      result.gt_matched[best_g] = true;
    }
  }
  return result;
}

double average_precision(const std::vector<bool>& tp_flags, int total_gt) {
  if (total_gt <= 0) return 0.0;
  const std::size_t n = tp_flags.size();
  if (n == 0) return 0.0;

  std::vector<double> precision(n), recall(n);
  int tp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (tp_flags[i]) ++tp;
    precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
    recall[i] = static_cast<double>(tp) / static_cast<double>(total_gt);
  }
  // Precision envelope from the right.
  for (std::size_t i = n - 1; i-- > 0;)
    precision[i] = std::max(precision[i], precision[i + 1]);

  double ap = 0.0;
  double prev_recall = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ap += (recall[i] - prev_recall) * precision[i];
    prev_recall = recall[i];
  }
  return ap;
}

SizeBins default_size_bins(double canvas_w, double canvas_h) {
  // 32^2 / 96^2 thresholds on a 640-pixel reference canvas, scaled by area.
  const double scale = (canvas_w * canvas_h) / (640.0 * 640.0);
  return SizeBins{32.0 * 32.0 * scale, 96.0 * 96.0 * scale};
}

namespace {

constexpr double kThresholds[] = {0.50, 0.55, 0.60, 0.65, 0.70,
                                  0.75, 0.80, 0.85, 0.90, 0.95};
constexpr int kNumThresholds = 10;

// 0 = small, 1 = medium, 2 = large.
int size_bin_of(double area, const SizeBins& bins) {
  if (area < bins.small_max_area) return 0;
  if (area < bins.medium_max_area) return 1;
  return 2;
}

struct LabelEval {
  // AP per IoU threshold on the full ground truth.
  std::array<double, kNumThresholds> ap_full{};
  // Per size bin: AP per threshold, plus whether the label counts in the bin.
  std::array<std::array<double, kNumThresholds>, 3> ap_size{};
  std::array<bool, 3> present_in_size{};
};

}  // namespace

EvalReport map_summary(const std::vector<Detection>& detections,
                       const std::vector<GroundTruth>& ground_truths,
                       const std::vector<Tier>& category_tiers,
                       const SizeBins& bins) {
  if (ground_truths.empty())
    throw std::invalid_argument("map_summary needs ground truth");

  std::set<int> label_set;
  for (const auto& g : ground_truths) label_set.insert(g.label);
  for (const auto& d : detections) label_set.insert(d.label);

  // Global detection order: confidence descending, input index ascending.
  std::vector<std::size_t> det_order(detections.size());
  std::iota(det_order.begin(), det_order.end(), 0);
  std::stable_sort(det_order.begin(), det_order.end(),
                   [&](std::size_t a, std::size_t b) {
                     return detections[a].confidence > detections[b].confidence;
                   });

  std::map<int, LabelEval> evals;
  for (int label : label_set) {
    std::vector<const Detection*> dets;  // sorted desc confidence
    for (std::size_t idx : det_order)
      if (detections[idx].label == label) dets.push_back(&detections[idx]);
    std::vector<const GroundTruth*> gts;
    for (const auto& g : ground_truths)
      if (g.label == label) gts.push_back(&g);

    LabelEval ev;
    std::array<int, 3> gt_in_bin{};
    for (const auto* g : gts) ++gt_in_bin[size_bin_of(g->box.area(), bins)];

    for (int ti = 0; ti < kNumThresholds; ++ti) {
      const double thresh = kThresholds[ti];
      // Greedy match in confidence order against the full ground truth.
      std::vector<bool> gt_used(gts.size(), false);
      std::vector<int> matched_gt(dets.size(), -1);
      for (std::size_t d = 0; d < dets.size(); ++d) {
        double best_iou = 0.0;
        std::size_t best_g = gts.size();
        for (std::size_t g = 0; g < gts.size(); ++g) {
          if (gt_used[g] || gts[g]->scene_id != dets[d]->scene_id) continue;
          const double v = iou(dets[d]->box, gts[g]->box);
          if (v >= thresh && v > best_iou) {
            best_iou = v;
            best_g = g;
          }
        }
        if (best_g != gts.size()) {
          gt_used[best_g] = true;
          matched_gt[d] = static_cast<int>(best_g);
        }
      }

      std::vector<bool> flags(dets.size());
      for (std::size_t d = 0; d < dets.size(); ++d) flags[d] = matched_gt[d] >= 0;
      ev.ap_full[ti] = average_precision(flags, static_cast<int>(gts.size()));

      // Size splits: detections matched to an out-of-bin ground truth are
      // ignored; unmatched detections stay false positives in every bin.
      for (int bin = 0; bin < 3; ++bin) {
        std::vector<bool> bin_flags;
        for (std::size_t d = 0; d < dets.size(); ++d) {
          if (matched_gt[d] >= 0) {
            const int gbin =
                size_bin_of(gts[matched_gt[d]]->box.area(), bins);
            if (gbin == bin)
              bin_flags.push_back(true);
            // else: ignored
          } else {
            bin_flags.push_back(false);
          }
        }
        ev.ap_size[bin][ti] = average_precision(bin_flags, gt_in_bin[bin]);
        if (gt_in_bin[bin] > 0 || !bin_flags.empty())
          ev.present_in_size[bin] = true;
      }
    }
    evals[label] = ev;
  }

  auto mean_over = [](const std::vector<double>& values) {
    if (values.empty()) return 0.0;
    return std::accumulate(values.begin(), values.end(), 0.0) /
           static_cast<double>(values.size());
  };

  std::vector<double> all_map, all_map50, all_map75;
  std::map<Tier, std::vector<double>> tier_map;
  std::array<std::vector<double>, 3> size_map;
  for (const auto& [label, ev] : evals) {
    const double label_map =
        std::accumulate(ev.ap_full.begin(), ev.ap_full.end(), 0.0) /
        kNumThresholds;
    all_map.push_back(label_map);
    all_map50.push_back(ev.ap_full[0]);
    all_map75.push_back(ev.ap_full[5]);
    if (label >= 0 && label < static_cast<int>(category_tiers.size()))
      tier_map[category_tiers[label]].push_back(label_map);
    for (int bin = 0; bin < 3; ++bin)
      if (ev.present_in_size[bin])
        size_map[bin].push_back(
            std::accumulate(ev.ap_size[bin].begin(), ev.ap_size[bin].end(), 0.0) /
            kNumThresholds);
  }

  EvalReport report;
  report.map = mean_over(all_map);
  report.map50 = mean_over(all_map50);
  report.map75 = mean_over(all_map75);
  report.map_rare = mean_over(tier_map[Tier::kRare]);
  report.map_common = mean_over(tier_map[Tier::kCommon]);
  report.map_frequent = mean_over(tier_map[Tier::kFrequent]);
  report.map_small = mean_over(size_map[0]);
  report.map_medium = mean_over(size_map[1]);
  report.map_large = mean_over(size_map[2]);
  return report;
}

}  // namespace longtail
