#include "meaf/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "meaf/errors.hpp"

namespace meaf {

MatchResult match_detections(const std::vector<std::vector<Detection>>& detections,
                             const std::vector<std::vector<LabeledBox>>& ground_truth, int num_classes,
                             double iou_threshold) {
  if (detections.size() != ground_truth.size()) {
    throw ArgumentError("match_detections: " + std::to_string(detections.size()) + " detection lists vs " +
                        std::to_string(ground_truth.size()) + " ground-truth lists");
  }
  MatchResult r;
  r.detection_tp.resize(detections.size());
  r.gt_matched.resize(ground_truth.size());
  r.per_class.resize(static_cast<std::size_t>(num_classes));
  r.gt_per_class.assign(static_cast<std::size_t>(num_classes), 0);

  struct Ref {
    std::size_t image, index;
    double score;
  };
  std::vector<std::vector<Ref>> by_class(static_cast<std::size_t>(num_classes));
  for (std::size_t img = 0; img < detections.size(); ++img) {
    r.detection_tp[img].assign(detections[img].size(), false);
    r.gt_matched[img].assign(ground_truth[img].size(), false);
    for (std::size_t i = 0; i < detections[img].size(); ++i) {
      const int c = detections[img][i].class_id;
      if (c < 0 || c >= num_classes) throw ArgumentError("match_detections: detection class out of range");
      by_class[static_cast<std::size_t>(c)].push_back(Ref{img, i, detections[img][i].score});
    }
    for (const LabeledBox& g : ground_truth[img]) {
      if (g.class_id < 0 || g.class_id >= num_classes) {
        throw ArgumentError("match_detections: ground-truth class out of range");
      }
      ++r.gt_per_class[static_cast<std::size_t>(g.class_id)];
    }
  }

  for (int c = 0; c < num_classes; ++c) {
    auto& refs = by_class[static_cast<std::size_t>(c)];
    std::stable_sort(refs.begin(), refs.end(), [](const Ref& a, const Ref& b) { return a.score > b.score; });
    auto& outcomes = r.per_class[static_cast<std::size_t>(c)];
    for (const Ref& ref : refs) {
      const Box& db = detections[ref.image][ref.index].box;
      const auto& gts = ground_truth[ref.image];
      double best = -1.0;
      std::size_t best_j = gts.size();
      for (std::size_t j = 0; j < gts.size(); ++j) {
        if (gts[j].class_id != c || r.gt_matched[ref.image][j]) continue;
        const double v = iou(db, gts[j].box);
        if (v > best) {
          best = v;
          best_j = j;
        }
      }
      const bool tp = best_j < gts.size() && best >= iou_threshold;
      if (tp) r.gt_matched[ref.image][best_j] = true;
      r.detection_tp[ref.image][ref.index] = tp;
      outcomes.push_back(ScoredOutcome{ref.score, tp});
    }
  }
  return r;
}

std::pair<double, double> precision_recall(const MatchCounts& counts) {
  const double pr = counts.tp + counts.fp == 0 ? 1.0 : static_cast<double>(counts.tp) / (counts.tp + counts.fp);
  const double re = counts.tp + counts.fn == 0 ? 1.0 : static_cast<double>(counts.tp) / (counts.tp + counts.fn);
  return {pr, re};
}

double f1_score(double precision, double recall) {
  const double s = precision + recall;
  return s > 0 ? 2 * precision * recall / s : 0.0;
}

PrCurve build_pr_curve(const std::vector<ScoredOutcome>& outcomes, int num_gt) {
  PrCurve curve;
  curve.num_gt = num_gt;
  std::vector<ScoredOutcome> sorted = outcomes;
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const ScoredOutcome& a, const ScoredOutcome& b) { return a.score > b.score; });
  int tp = 0, fp = 0;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    (sorted[i].true_positive ? tp : fp) += 1;
    // Equal scores enter together: emit a point only at the end of a tie group.
    if (i + 1 < sorted.size() && sorted[i + 1].score == sorted[i].score) continue;
    const auto [pr, re] = precision_recall(MatchCounts{tp, fp, num_gt - tp});
    curve.points.push_back(PrPoint{sorted[i].score, re, pr});
  }
  return curve;
}

std::optional<double> average_precision(const PrCurve& curve) {
  if (curve.num_gt <= 0) return std::nullopt;
  const auto& pts = curve.points;
  std::vector<double> interp(pts.size());
  double running = 0.0;
  for (std::size_t i = pts.size(); i-- > 0;) {
    running = std::max(running, pts[i].precision);
    interp[i] = running;
  }
  double ap = 0.0, prev_recall = 0.0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    ap += (pts[i].recall - prev_recall) * interp[i];
    prev_recall = pts[i].recall;
  }
  return ap;
}

double map50(const std::vector<std::optional<double>>& per_class_ap) {
  double s = 0.0;
  int n = 0;
  for (const auto& ap : per_class_ap) {
    if (ap) {
      s += *ap;
      ++n;
    }
  }
  if (n == 0) throw ArgumentError("mAP undefined: no class has ground truth");
  return s / n;
}

EvalReport evaluate(const std::vector<std::vector<Detection>>& detections,
                    const std::vector<std::vector<LabeledBox>>& ground_truth, int num_classes,
                    double operating_threshold, double iou_threshold) {
  const MatchResult m = match_detections(detections, ground_truth, num_classes, iou_threshold);
  EvalReport rep;
  rep.operating_threshold = operating_threshold;
  std::vector<std::optional<double>> aps;
  for (int c = 0; c < num_classes; ++c) {
    const auto& outcomes = m.per_class[static_cast<std::size_t>(c)];
    ClassReport cr;
    cr.num_gt = m.gt_per_class[static_cast<std::size_t>(c)];
    cr.num_detections = static_cast<int>(outcomes.size());
    cr.curve = build_pr_curve(outcomes, cr.num_gt);
    cr.ap = average_precision(cr.curve);
    MatchCounts counts;
    for (const auto& o : outcomes) {
      if (o.score < operating_threshold) continue;
      (o.true_positive ? counts.tp : counts.fp) += 1;
    }
    counts.fn = cr.num_gt - counts.tp;
    std::tie(cr.precision, cr.recall) = precision_recall(counts);
    aps.push_back(cr.ap);
    rep.classes.push_back(std::move(cr));
  }
  if (std::any_of(aps.begin(), aps.end(), [](const auto& a) { return a.has_value(); })) rep.map50 = map50(aps);

  for (int step = 0; step <= 100; ++step) {
    F1Row row;
    row.threshold = step / 100.0;
    double total = 0.0;
    int defined = 0;
    for (int c = 0; c < num_classes; ++c) {
      MatchCounts counts;
      for (const auto& o : m.per_class[static_cast<std::size_t>(c)]) {
        if (o.score < row.threshold) continue;
        (o.true_positive ? counts.tp : counts.fp) += 1;
      }
      const int gt = m.gt_per_class[static_cast<std::size_t>(c)];
      counts.fn = gt - counts.tp;
      const auto [pr, re] = precision_recall(counts);
      const double f1 = f1_score(pr, re);
      row.per_class.push_back(f1);
      if (gt > 0) {
        total += f1;
        ++defined;
      }
    }
    row.mean = defined > 0 ? total / defined : 0.0;
    rep.f1_table.push_back(std::move(row));
  }
  return rep;
}

namespace {

std::string fmt(double v, int precision = 6) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", precision, v);
  return buf;
}

std::ofstream open_for_write(const std::filesystem::path& p) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw DataError("cannot write " + p.string());
  return f;
}

}  // namespace

void export_curves(const EvalReport& report, const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  for (std::size_t c = 0; c < report.classes.size(); ++c) {
    auto f = open_for_write(out_dir / ("pr_" + std::to_string(c) + ".csv"));
    f << "threshold,recall,precision\n";
    const auto& pts = report.classes[c].curve.points;
    for (auto it = pts.rbegin(); it != pts.rend(); ++it) {
      f << fmt(it->threshold, 9) << ',' << fmt(it->recall) << ',' << fmt(it->precision) << '\n';
    }
    if (!f) throw DataError("write failed for PR curve of class " + std::to_string(c));
  }
  auto f = open_for_write(out_dir / "f1.csv");
  f << "threshold";
  for (std::size_t c = 0; c < report.classes.size(); ++c) f << ",f1_" << c;
  f << ",mean_f1\n";
  for (const F1Row& row : report.f1_table) {
    f << fmt(row.threshold, 2);
    for (double v : row.per_class) f << ',' << fmt(v);
    f << ',' << fmt(row.mean) << '\n';
  }
  if (!f) throw DataError("write failed for f1.csv");
}

std::string format_report(const EvalReport& report) {
  std::vector<std::string> header{"metric"};
  for (std::size_t c = 0; c < report.classes.size(); ++c) header.push_back("class" + std::to_string(c));
  header.push_back("mAP50");

  std::vector<std::vector<std::string>> rows;
  auto add_row = [&](const std::string& name, auto cell, std::string last) {
    std::vector<std::string> r{name};
    for (const ClassReport& cr : report.classes) r.push_back(cell(cr));
    r.push_back(std::move(last));
    rows.push_back(std::move(r));
  };
  add_row(
      "AP50", [](const ClassReport& cr) { return cr.ap ? fmt(*cr.ap, 4) : std::string("n/a"); },
      report.map50 ? fmt(*report.map50, 4) : "n/a");
  add_row("P@" + fmt(report.operating_threshold, 2), [](const ClassReport& cr) { return fmt(cr.precision, 4); }, "");
  add_row("R@" + fmt(report.operating_threshold, 2), [](const ClassReport& cr) { return fmt(cr.recall, 4); }, "");
  add_row("GT", [](const ClassReport& cr) { return std::to_string(cr.num_gt); }, "");
  add_row("dets", [](const ClassReport& cr) { return std::to_string(cr.num_detections); }, "");

  std::vector<std::size_t> width(header.size());
  for (std::size_t i = 0; i < header.size(); ++i) width[i] = header[i].size();
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < r.size(); ++i) width[i] = std::max(width[i], r[i].size());
  }
  std::ostringstream os;
  auto emit = [&](const std::vector<std::string>& r) {
    for (std::size_t i = 0; i < r.size(); ++i) {
      if (i) os << "  ";
      os << r[i] << std::string(width[i] - r[i].size(), ' ');
    }
    os << '\n';
  };
  emit(header);
  for (const auto& r : rows) emit(r);
  return os.str();
}

}  // namespace meaf
