#pragma once

// Box regression and classification objectives, their 2:1:1 composite, and a
// coordinate-wise finite-difference tuner for a handful of scalars.

#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <thread>
#include <vector>

#include "spirit/eval.hpp"

namespace spirit {

inline double giou(const Box& a, const Box& b) {
  if (!a.valid() || !b.valid()) throw InvalidInput("giou: degenerate box");
  const double iw = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const double ih = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  const double enclose = (std::max(a.x2, b.x2) - std::min(a.x1, b.x1)) * (std::max(a.y2, b.y2) - std::min(a.y1, b.y1));
  return inter / uni - (enclose - uni) / enclose;
}

/// 1 - GIoU, in [0, 2).
inline double giou_loss(const Box& pred, const Box& gt) { return 1.0 - giou(pred, gt); }

/// d(giou_loss)/d(pred.x1, pred.y1, pred.x2, pred.y2), piecewise-analytic.
/// Undefined on configurations where an edge of `pred` coincides with an edge of `gt`.
inline std::array<double, 4> giou_loss_gradient(const Box& p, const Box& g) {
  if (!p.valid() || !g.valid()) throw InvalidInput("giou: degenerate box");
  const double iw_raw = std::min(p.x2, g.x2) - std::max(p.x1, g.x1);
  const double ih_raw = std::min(p.y2, g.y2) - std::max(p.y1, g.y1);
  const bool overlap = iw_raw > 0.0 && ih_raw > 0.0;
  const double iw = overlap ? iw_raw : 0.0, ih = overlap ? ih_raw : 0.0;
  const double inter = iw * ih;
  const double uni = p.area() + g.area() - inter;
  const double cw = std::max(p.x2, g.x2) - std::min(p.x1, g.x1);
  const double ch = std::max(p.y2, g.y2) - std::min(p.y1, g.y1);
  const double enclose = cw * ch;

  // Partial derivatives of the intersection extent, area and enclosing extent.
  const std::array<double, 4> d_iw{overlap && p.x1 > g.x1 ? -1.0 : 0.0, 0.0, overlap && p.x2 < g.x2 ? 1.0 : 0.0, 0.0};
  const std::array<double, 4> d_ih{0.0, overlap && p.y1 > g.y1 ? -1.0 : 0.0, 0.0, overlap && p.y2 < g.y2 ? 1.0 : 0.0};
  const std::array<double, 4> d_area{-p.height(), -p.width(), p.height(), p.width()};
  const std::array<double, 4> d_cw{p.x1 < g.x1 ? -1.0 : 0.0, 0.0, p.x2 > g.x2 ? 1.0 : 0.0, 0.0};
  const std::array<double, 4> d_ch{0.0, p.y1 < g.y1 ? -1.0 : 0.0, 0.0, p.y2 > g.y2 ? 1.0 : 0.0};

  std::array<double, 4> out{};
  for (std::size_t k = 0; k < 4; ++k) {
    const double di = d_iw[k] * ih + iw * d_ih[k];
    const double du = d_area[k] - di;
    const double dc = d_cw[k] * ch + cw * d_ch[k];
    const double dgiou = di / uni - inter * du / (uni * uni) + du / enclose - uni * dc / (enclose * enclose);
    out[k] = -dgiou;
  }
  return out;
}

/// Mean absolute coordinate difference, x normalized by width and y by height.
inline double bbox_l1(const Box& pred, const Box& gt, GridSize image_size) {
  const double w = static_cast<double>(image_size.width), h = static_cast<double>(image_size.height);
  return 0.25 * (std::abs(pred.x1 - gt.x1) / w + std::abs(pred.y1 - gt.y1) / h + std::abs(pred.x2 - gt.x2) / w +
                 std::abs(pred.y2 - gt.y2) / h);
}

struct ScoredLabel {
  double score = 0.0;
  bool matched = false;
};

inline constexpr double kScoreClamp = 1e-7;

/// Binary cross-entropy averaged over predictions; 0 for an empty list.
inline double cls_loss(const std::vector<ScoredLabel>& preds) {
  if (preds.empty()) return 0.0;
  double s = 0.0;
  for (const auto& p : preds) {
    const double c = std::clamp(p.score, kScoreClamp, 1.0 - kScoreClamp);
    s -= p.matched ? std::log(c) : std::log(1.0 - c);
  }
  return s / static_cast<double>(preds.size());
}

struct LossWeights {
  double bbox = 2.0;
  double cls = 1.0;
  double giou = 1.0;
};

struct LossBreakdown {
  double bbox = 0.0;
  double cls = 0.0;
  double giou = 0.0;
  double total = 0.0;
};

inline LossBreakdown combine(double bbox, double cls, double giou_term, const LossWeights& w = {}) {
  return {bbox, cls, giou_term, w.bbox * bbox + w.cls * cls + w.giou * giou_term};
}

/// How ground truth left unmatched enters the classification term.
enum class MissPolicy {
  Ignore,    // missed ground truth contributes nothing
  Penalize,  // each miss counts as a positive, scored by `miss_scores` (else the clamp floor)
};

/// Greedy IoU>=0.5 matching, then bbox/GIoU averaged over matches and BCE over
/// predictions, combined at 2:1:1.
/// `miss_scores`, when given, holds one score per ground-truth box (for example
/// the score map under it) used for that box if it goes unmatched.
inline LossBreakdown total_loss(const std::vector<Detection>& preds, const std::vector<Box>& gts, GridSize image_size,
                                MissPolicy misses = MissPolicy::Ignore,
                                const std::vector<double>* miss_scores = nullptr) {
  if (miss_scores != nullptr && miss_scores->size() != gts.size())
    throw InvalidInput("total_loss: miss_scores must have one entry per ground-truth box");
  const MatchResult m = match_detections(preds, gts, kMatchIoU);
  const std::vector<std::size_t> order = score_order(preds);
  double bbox = 0.0, gi = 0.0;
  std::vector<ScoredLabel> labels;
  labels.reserve(preds.size() + gts.size());
  for (std::size_t k = 0; k < order.size(); ++k) {
    const Detection& d = preds[order[k]];
    labels.push_back({d.score, m.matched[k]});
    if (m.matched[k]) {
      const Box& g = gts[static_cast<std::size_t>(m.assigned_gt[k])];
      bbox += bbox_l1(d.box, g, image_size);
      gi += giou_loss(d.box, g);
    }
  }
  if (m.true_positives > 0) {
    bbox /= static_cast<double>(m.true_positives);
    gi /= static_cast<double>(m.true_positives);
  }
  if (misses == MissPolicy::Penalize && m.false_negatives > 0) {
    std::vector<bool> hit(gts.size(), false);
    for (std::size_t k = 0; k < order.size(); ++k)
      if (m.matched[k]) hit[static_cast<std::size_t>(m.assigned_gt[k])] = true;
    for (std::size_t g = 0; g < gts.size(); ++g)
      if (!hit[g]) labels.push_back({miss_scores != nullptr ? (*miss_scores)[g] : 0.0, true});
  }
  return combine(bbox, cls_loss(labels), gi);
}

struct TuneOptions {
  std::size_t steps = 200;
  double fd_step = 1e-4;
  double step_size = 0.05;
  std::size_t jobs = 1;
};

struct TuneResult {
  std::vector<double> best;
  LossBreakdown best_loss;
  std::vector<LossBreakdown> trace;      // loss at the iterate of each step, then the final iterate
  std::vector<double> best_so_far;      // running minimum of trace totals
};

class TuneAborted : public Error {
 public:
  TuneAborted(const std::string& what, TuneResult partial) : Error(what), partial_(std::move(partial)) {}
  const TuneResult& partial() const noexcept { return partial_; }

 private:
  TuneResult partial_;
};

using Objective = std::function<LossBreakdown(const std::vector<double>&)>;

/// Central-difference gradient descent on objective(x).total. Probes of
/// different coordinates run on up to `jobs` threads; the update is applied
/// after all probes of a step finish. Returns the best iterate seen.
inline TuneResult tune_scalars(std::vector<double> x, const Objective& objective, const TuneOptions& opt) {
  TuneResult res;
  res.best = x;
  res.best_loss.total = std::numeric_limits<double>::infinity();

  const auto record = [&](const std::vector<double>& at, const LossBreakdown& l) {
    res.trace.push_back(l);
    if (!std::isfinite(l.total)) throw TuneAborted("tune: non-finite loss at step " + std::to_string(res.trace.size() - 1), res);
    if (l.total < res.best_loss.total) {
      res.best_loss = l;
      res.best = at;
    }
    res.best_so_far.push_back(res.best_loss.total);
  };

  const std::size_t n = x.size();
  std::vector<double> plus(n), minus(n);
  for (std::size_t step = 0; step < opt.steps; ++step) {
    record(x, objective(x));
    const auto probe = [&](std::size_t i) {
      std::vector<double> xp = x, xm = x;
      xp[i] += opt.fd_step;
      xm[i] -= opt.fd_step;
      plus[i] = objective(xp).total;
      minus[i] = objective(xm).total;
    };
    const std::size_t jobs = std::max<std::size_t>(1, std::min(opt.jobs, n));
    if (jobs == 1) {
      for (std::size_t i = 0; i < n; ++i) probe(i);
    } else {
      std::vector<std::jthread> workers;
      for (std::size_t w = 0; w < jobs; ++w)
        workers.emplace_back([&, w] {
          for (std::size_t i = w; i < n; i += jobs) probe(i);
        });
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (!std::isfinite(plus[i]) || !std::isfinite(minus[i])) {
        throw TuneAborted("tune: non-finite probe on coordinate " + std::to_string(i) + " at step " + std::to_string(step), res);
      }
    }
    for (std::size_t i = 0; i < n; ++i) x[i] -= opt.step_size * (plus[i] - minus[i]) / (2.0 * opt.fd_step);
  }
  record(x, objective(x));
  return res;
}

}  // namespace spirit
