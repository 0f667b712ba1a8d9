#pragma once

// Detection metrics at a fixed IoU threshold: greedy matching, P/R/F1,
// all-point AP, signal-to-clutter ratio and a temporal association score.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "spirit/feasibility.hpp"
#include "spirit/synthgen.hpp"

namespace spirit {

inline constexpr double kMatchIoU = 0.5;

inline double iou(const Box& a, const Box& b) {
  if (!a.valid() || !b.valid()) throw InvalidInput("iou: degenerate box");
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  return inter / (a.area() + b.area() - inter);
}

/// Indices of `dets` by descending score; ties keep input order.
inline std::vector<std::size_t> score_order(const std::vector<Detection>& dets) {
  std::vector<std::size_t> idx(dets.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });
  return idx;
}

inline std::vector<Detection> sort_by_score(std::vector<Detection> dets) {
  std::vector<Detection> out;
  out.reserve(dets.size());
  for (std::size_t i : score_order(dets)) out.push_back(dets[i]);
  return out;
}

struct MatchResult {
  std::size_t true_positives = 0;
  std::size_t false_positives = 0;
  std::size_t false_negatives = 0;
  std::vector<bool> matched;      // per detection, descending score order
  std::vector<double> scores;     // same order
  std::vector<int> assigned_gt;   // -1 when unmatched
};

/// Greedy score-ordered matching: each detection claims the unmatched ground
/// truth box of highest IoU, provided it reaches `threshold`.
inline MatchResult match_detections(const std::vector<Detection>& dets, const std::vector<Box>& gts,
                                    double threshold = kMatchIoU) {
  MatchResult r;
  std::vector<bool> taken(gts.size(), false);
  for (std::size_t di : score_order(dets)) {
    int best = -1;
    double best_iou = threshold;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (taken[g]) continue;
      const double v = iou(dets[di].box, gts[g]);
      if (v >= best_iou && (best < 0 || v > best_iou)) {
        best = static_cast<int>(g);
        best_iou = v;
      }
    }
    if (best >= 0) {
      taken[static_cast<std::size_t>(best)] = true;
      ++r.true_positives;
    } else {
      ++r.false_positives;
    }
    r.matched.push_back(best >= 0);
    r.scores.push_back(dets[di].score);
    r.assigned_gt.push_back(best);
  }
  r.false_negatives = gts.size() - r.true_positives;
  return r;
}

inline std::vector<Box> boxes_of(const std::vector<LabeledBox>& labeled) {
  std::vector<Box> out;
  out.reserve(labeled.size());
  for (const auto& l : labeled) out.push_back(l.box);
  return out;
}

struct PRF1 {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Empty conventions: no ground truth and no detections scores (1,1,1); any
/// ground truth with no detections scores P = 0.
inline PRF1 pr_f1(std::size_t tp, std::size_t fp, std::size_t fn) {
  PRF1 m;
  const std::size_t gt = tp + fn;
  const std::size_t det = tp + fp;
  if (gt == 0 && det == 0) return {1.0, 1.0, 1.0};
  m.precision = det == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(det);
  m.recall = gt == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(gt);
  m.f1 = (m.precision + m.recall) > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
  return m;
}

inline PRF1 pr_f1(const MatchResult& m) { return pr_f1(m.true_positives, m.false_positives, m.false_negatives); }

struct ImageResult {
  std::vector<Detection> detections;
  std::vector<Box> truth;
};

struct PRPoint {
  double score = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  // exact counts behind the two ratios
  std::size_t true_positives = 0;
  std::size_t ranked = 0;
  std::size_t total_gt = 0;
};

/// Precision/recall after each detection of the globally score-sorted list.
inline std::vector<PRPoint> pr_curve(const std::vector<ImageResult>& images, double threshold = kMatchIoU) {
  struct Hit {
    double score;
    bool tp;
  };
  std::vector<Hit> hits;
  std::size_t total_gt = 0;
  for (const auto& im : images) {
    const MatchResult m = match_detections(im.detections, im.truth, threshold);
    for (std::size_t i = 0; i < m.matched.size(); ++i) hits.push_back({m.scores[i], m.matched[i]});
    total_gt += im.truth.size();
  }
  if (total_gt == 0) throw InvalidInput("pr_curve: dataset has no ground truth");
  std::stable_sort(hits.begin(), hits.end(), [](const Hit& a, const Hit& b) { return a.score > b.score; });
  std::vector<PRPoint> curve;
  curve.reserve(hits.size());
  std::size_t tp = 0;
  for (std::size_t i = 0; i < hits.size(); ++i) {
    tp += hits[i].tp ? 1 : 0;
    curve.push_back({hits[i].score, static_cast<double>(tp) / static_cast<double>(i + 1),
                     static_cast<double>(tp) / static_cast<double>(total_gt), tp, i + 1, total_gt});
  }
  return curve;
}

/// All-point interpolated AP: sum over recall steps of the precision envelope.
/// Works from the integer counts in extended precision and rounds once, so
/// small rational cases come out exactly rounded.
inline double average_precision(const std::vector<PRPoint>& curve) {
  if (curve.empty()) return 0.0;
  std::vector<long double> envelope(curve.size());
  long double run = 0.0L;
  for (std::size_t i = curve.size(); i-- > 0;) {
    const long double p = static_cast<long double>(curve[i].true_positives) / static_cast<long double>(curve[i].ranked);
    run = std::max(run, p);
    envelope[i] = run;
  }
  long double sum = 0.0L;
  std::size_t prev_tp = 0;
  for (std::size_t i = 0; i < curve.size(); ++i) {
    if (curve[i].true_positives > prev_tp) sum += envelope[i] * static_cast<long double>(curve[i].true_positives - prev_tp);
    prev_tp = curve[i].true_positives;
  }
  return static_cast<double>(sum / static_cast<long double>(curve.front().total_gt));
}

inline double ap50(const std::vector<ImageResult>& images) { return average_precision(pr_curve(images, kMatchIoU)); }

inline constexpr double kAnnulusWidth = 10.0;

/// (mean inside box - mean of a 10 px surrounding annulus) / (annulus std + 1e-12).
/// A pixel belongs to a region when its centre does.
inline double scr(const Matrix& image, const Box& box) {
  if (!box.valid()) throw InvalidInput("scr: degenerate box");
  const auto inside = [](double px, double py, const Box& b) {
    return px >= b.x1 && px <= b.x2 && py >= b.y1 && py <= b.y2;
  };
  const Box outer{box.x1 - kAnnulusWidth, box.y1 - kAnnulusWidth, box.x2 + kAnnulusWidth, box.y2 + kAnnulusWidth};
  // Sums are taken relative to one pixel so a flat image gives exactly 0
  // rather than rounding noise over the 1e-12 floor.
  const double ref = image.rows() > 0 && image.cols() > 0 ? image(0, 0) : 0.0;
  double in_sum = 0.0, out_sum = 0.0, out_sq = 0.0;
  std::size_t in_n = 0, out_n = 0;
  for (std::size_t y = 0; y < image.rows(); ++y)
    for (std::size_t x = 0; x < image.cols(); ++x) {
      const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
      const double v = image(y, x) - ref;
      if (inside(px, py, box)) {
        in_sum += v;
        ++in_n;
      } else if (inside(px, py, outer)) {
        out_sum += v;
        out_sq += v * v;
        ++out_n;
      }
    }
  if (out_n == 0) throw InvalidInput("scr: empty background annulus");
  if (in_n == 0) throw InvalidInput("scr: box covers no pixel centre");
  const double mu_b = out_sum / static_cast<double>(out_n);
  const double var = std::max(0.0, out_sq / static_cast<double>(out_n) - mu_b * mu_b);
  return (in_sum / static_cast<double>(in_n) - mu_b) / (std::sqrt(var) + 1e-12);
}

struct AssociationCounts {
  std::size_t eligible = 0;
  std::size_t clean = 0;
  double accuracy() const { return eligible == 0 ? 0.0 : static_cast<double>(clean) / static_cast<double>(eligible); }
};

/// A frame (after the first) is clean when every target is matched and no
/// detection overlaps a distractor box at IoU >= 0.5.
inline AssociationCounts association_counts(const std::vector<std::vector<Detection>>& per_frame,
                                            const std::vector<GroundTruth>& truth) {
  if (per_frame.size() != truth.size()) throw InvalidInput("association: frame count mismatch");
  if (per_frame.size() < 2) throw InvalidInput("association: needs at least two frames");
  AssociationCounts c;
  for (std::size_t t = 1; t < per_frame.size(); ++t) {
    ++c.eligible;
    const MatchResult m = match_detections(per_frame[t], boxes_of(truth[t].targets));
    bool ok = m.false_negatives == 0;
    for (const auto& d : per_frame[t]) {
      if (!ok) break;
      for (const auto& dis : truth[t].distractors)
        if (iou(d.box, dis.box) >= kMatchIoU) {
          ok = false;
          break;
        }
    }
    c.clean += ok ? 1 : 0;
  }
  return c;
}

inline double association_accuracy(const std::vector<std::vector<Detection>>& per_frame,
                                   const std::vector<GroundTruth>& truth) {
  return association_counts(per_frame, truth).accuracy();
}

struct MetricReport {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double ap50 = 0.0;
  std::size_t true_positives = 0;
  std::size_t false_positives = 0;
  std::size_t false_negatives = 0;
  double scr_mean = 0.0;
  double scr_min = 0.0;
  std::size_t scr_count = 0;
  double association = 0.0;
  bool has_association = false;
};

inline MetricReport detection_report(const std::vector<ImageResult>& images) {
  MetricReport r;
  for (const auto& im : images) {
    const MatchResult m = match_detections(im.detections, im.truth);
    r.true_positives += m.true_positives;
    r.false_positives += m.false_positives;
    r.false_negatives += m.false_negatives;
  }
  const PRF1 p = pr_f1(r.true_positives, r.false_positives, r.false_negatives);
  r.precision = p.precision;
  r.recall = p.recall;
  r.f1 = p.f1;
  r.ap50 = ap50(images);
  return r;
}

}  // namespace spirit
