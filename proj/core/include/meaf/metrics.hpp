#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "meaf/box.hpp"

namespace meaf {

/// True negatives are not meaningful for detection and are not tracked.
struct MatchCounts {
  int tp = 0;
  int fp = 0;
  int fn = 0;
};

struct ScoredOutcome {
  double score = 0;
  bool true_positive = false;
};

/// Outcome of greedy matching at a single IoU threshold.
struct MatchResult {
  std::vector<std::vector<bool>> detection_tp;  // per image, per detection
  std::vector<std::vector<bool>> gt_matched;    // per image, per ground-truth box
  std::vector<std::vector<ScoredOutcome>> per_class;  // score-descending
  std::vector<int> gt_per_class;
};

/// Per class, detections in descending score order are matched to the
/// unmatched same-class ground truth of highest IoU in their image, when that
/// IoU is >= iou_threshold.
MatchResult match_detections(const std::vector<std::vector<Detection>>& detections,
                             const std::vector<std::vector<LabeledBox>>& ground_truth, int num_classes,
                             double iou_threshold = 0.5);

/// Pr = TP/(TP+FP), Re = TP/(TP+FN). With no detections Pr = 1; with no
/// ground truth Re = 1.
std::pair<double, double> precision_recall(const MatchCounts& counts);

double f1_score(double precision, double recall);

struct PrPoint {
  double threshold = 0;
  double recall = 0;
  double precision = 0;
};

/// Points ordered by descending threshold (non-decreasing recall); one point
/// per distinct score.
struct PrCurve {
  std::vector<PrPoint> points;
  int num_gt = 0;
};

PrCurve build_pr_curve(const std::vector<ScoredOutcome>& outcomes, int num_gt);

/// All-points area under the right-interpolated PR curve; nullopt when the
/// class has no ground truth.
std::optional<double> average_precision(const PrCurve& curve);

/// Mean over defined APs. Throws ArgumentError if none is defined.
double map50(const std::vector<std::optional<double>>& per_class_ap);

struct ClassReport {
  int num_gt = 0;
  int num_detections = 0;
  std::optional<double> ap;
  double precision = 0;  // at the operating threshold
  double recall = 0;
  PrCurve curve;
};

struct F1Row {
  double threshold = 0;
  std::vector<double> per_class;
  double mean = 0;
};

struct EvalReport {
  std::vector<ClassReport> classes;
  std::optional<double> map50;
  double operating_threshold = 0;
  std::vector<F1Row> f1_table;  // thresholds 0.00 .. 1.00 step 0.01
};

EvalReport evaluate(const std::vector<std::vector<Detection>>& detections,
                    const std::vector<std::vector<LabeledBox>>& ground_truth, int num_classes,
                    double operating_threshold, double iou_threshold = 0.5);

/// Writes pr_<class>.csv and f1.csv under `out_dir`.
void export_curves(const EvalReport& report, const std::filesystem::path& out_dir);

/// Aligned text table: one column per class plus mAP50.
std::string format_report(const EvalReport& report);

}  // namespace meaf
