#include <gtest/gtest.h>

#include <cmath>

#include "spirit/eval.hpp"
#include "support.hpp"

using namespace spirit;
using namespace spirit::testing;

TEST(Iou, Examples) {
  const Box a{0, 0, 2, 2};
  EXPECT_DOUBLE_EQ(iou(a, a), 1.0);
  EXPECT_DOUBLE_EQ(iou(a, {1, 0, 3, 2}), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(iou(a, {2, 0, 4, 2}), 0.0);
  EXPECT_DOUBLE_EQ(iou(a, {5, 5, 6, 6}), 0.0);
  EXPECT_DOUBLE_EQ(iou(a, {0, 0, 1, 1}), 0.25);
  EXPECT_THROW(iou(a, {1, 1, 1, 2}), InvalidInput);
}

TEST(Iou, SymmetricAndBounded) {
  SplitMix64 rng(1);
  for (int i = 0; i < 500; ++i) {
    const auto inst = random_matching_instance(rng);
    for (const auto& d : inst.dets)
      for (const auto& g : inst.gts) {
        const double v = iou(d.box, g);
        EXPECT_EQ(v, iou(g, d.box));
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
      }
  }
}

TEST(MatchDetections, Examples) {
  const Box g{0, 0, 10, 10};
  // duplicate detection: only the higher score matches
  const MatchResult m = match_detections({{{0, 0, 10, 10}, 0.5}, {{0, 0, 10, 9}, 0.9}}, {g});
  EXPECT_EQ(m.true_positives, 1u);
  EXPECT_EQ(m.false_positives, 1u);
  EXPECT_EQ(m.false_negatives, 0u);
  EXPECT_EQ(m.matched, (std::vector<bool>{true, false}));
  EXPECT_EQ(m.scores, (std::vector<double>{0.9, 0.5}));

  // IoU exactly 0.5 counts
  const MatchResult half = match_detections({{{0, 0, 10, 5}, 0.8}}, {g});
  EXPECT_EQ(half.true_positives, 1u);
  const MatchResult none = match_detections({}, {g, {20, 20, 30, 30}});
  EXPECT_EQ(none.false_negatives, 2u);
}

TEST(MatchDetections, PicksHighestIouOfFreeBoxes) {
  const MatchResult m = match_detections({{{0, 0, 10, 10}, 0.9}}, {{1, 1, 11, 11}, {0, 0, 10, 10.5}});
  ASSERT_EQ(m.assigned_gt.size(), 1u);
  EXPECT_EQ(m.assigned_gt[0], 1);
}

TEST(MatchDetections, AgreesWithExhaustiveMatching) {
  SplitMix64 rng(2024);
  int agree = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const auto inst = random_matching_instance(rng);
    std::vector<Box> boxes;
    for (const auto& d : inst.dets) boxes.push_back(d.box);
    const MatchResult m = match_detections(inst.dets, inst.gts);
    const std::size_t best = brute_force_matching(boxes, inst.gts, kMatchIoU);
    EXPECT_LE(m.true_positives, best);
    EXPECT_EQ(m.true_positives + m.false_positives, inst.dets.size());
    EXPECT_EQ(m.true_positives + m.false_negatives, inst.gts.size());
    agree += m.true_positives == best ? 1 : 0;
  }
  EXPECT_GE(agree, 950);
}

TEST(PrF1, Examples) {
  const PRF1 a = pr_f1(9, 1, 1);
  EXPECT_DOUBLE_EQ(a.precision, 0.9);
  EXPECT_DOUBLE_EQ(a.recall, 0.9);
  EXPECT_NEAR(a.f1, 0.9, 1e-15);
  const PRF1 b = pr_f1(1, 3, 0);
  EXPECT_DOUBLE_EQ(b.precision, 0.25);
  EXPECT_DOUBLE_EQ(b.recall, 1.0);
  EXPECT_DOUBLE_EQ(b.f1, 0.4);
}

TEST(PrF1, EmptyConventions) {
  const PRF1 empty = pr_f1(0, 0, 0);
  EXPECT_EQ(empty.f1, 1.0);
  const PRF1 missed = pr_f1(0, 0, 3);
  EXPECT_EQ(missed.precision, 0.0);
  EXPECT_EQ(missed.recall, 0.0);
  EXPECT_EQ(missed.f1, 0.0);
  const PRF1 spurious = pr_f1(0, 2, 0);
  EXPECT_EQ(spurious.precision, 0.0);
  EXPECT_EQ(spurious.f1, 0.0);
}

TEST(AveragePrecision, FiveSixthsExample) { EXPECT_EQ(ap50(five_sixths_example()), 5.0 / 6.0); }

TEST(AveragePrecision, PerfectAndZero) {
  const Box a{0, 0, 10, 10}, b{50, 50, 60, 60};
  EXPECT_DOUBLE_EQ(ap50({ImageResult{{{a, 0.9}, {b, 0.8}}, {a, b}}}), 1.0);
  EXPECT_DOUBLE_EQ(ap50({ImageResult{{{{20, 20, 30, 30}, 0.9}}, {a}}}), 0.0);
  EXPECT_DOUBLE_EQ(ap50({ImageResult{{}, {a}}}), 0.0);
  EXPECT_THROW(ap50({ImageResult{{{a, 0.9}}, {}}}), InvalidInput);
}

TEST(AveragePrecision, PooledAcrossImagesByScore) {
  const Box a{0, 0, 10, 10};
  // image 1: TP at 0.9; image 2: FP at 0.95, TP at 0.5
  const std::vector<ImageResult> images{ImageResult{{{a, 0.9}}, {a}},
                                        ImageResult{{{{30, 30, 40, 40}, 0.95}, {a, 0.5}}, {a}}};
  const auto curve = pr_curve(images);
  ASSERT_EQ(curve.size(), 3u);
  EXPECT_DOUBLE_EQ(curve[0].precision, 0.0);
  EXPECT_DOUBLE_EQ(curve[1].precision, 0.5);
  EXPECT_DOUBLE_EQ(curve[2].recall, 1.0);
  // envelope is 2/3 at both recall steps
  EXPECT_NEAR(ap50(images), 2.0 / 3.0, 1e-12);
}

TEST(AveragePrecision, RaisingATruePositiveScoreNeverLowersAp) {
  SplitMix64 rng(77);
  for (int trial = 0; trial < 200; ++trial) {
    auto inst = random_matching_instance(rng);
    if (inst.dets.empty()) continue;
    const std::vector<ImageResult> before{{inst.dets, inst.gts}};
    const MatchResult m = match_detections(inst.dets, inst.gts);
    // bump the best-scored true positive to the top; its match is unchanged
    const auto order = score_order(inst.dets);
    for (std::size_t k = 0; k < order.size(); ++k)
      if (m.matched[k]) {
        inst.dets[order[k]].score = 2.0;
        break;
      }
    EXPECT_GE(ap50({{inst.dets, inst.gts}}) + 1e-12, ap50(before));
  }
}

TEST(AveragePrecision, BoundedByRecall) {
  SplitMix64 rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    const auto inst = random_matching_instance(rng);
    const std::vector<ImageResult> images{{inst.dets, inst.gts}};
    const double ap = ap50(images);
    const MatchResult m = match_detections(inst.dets, inst.gts);
    EXPECT_GE(ap, 0.0);
    EXPECT_LE(ap, pr_f1(m).recall + 1e-12);
  }
}

TEST(Scr, ConstantImageIsZero) { EXPECT_EQ(scr(Matrix(64, 64, 0.4), {20, 20, 30, 30}), 0.0); }

TEST(Scr, MonteCarloMatchesSignalOverNoise) {
  // Flat 0.5 plus one blob plus N(0, s^2) noise: SCR ~ (mean blob inside box) / s.
  const double s = 0.05;
  const Blob blob{32.0, 32.0, 1.5, 0.4};
  Matrix clean(64, 64, 0.5);
  add_blob(clean, blob);
  const Box box = three_sigma_box(blob, {64, 64});
  double inside = 0.0;
  std::size_t n = 0;
  for (std::size_t y = 0; y < 64; ++y)
    for (std::size_t x = 0; x < 64; ++x) {
      const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
      if (px >= box.x1 && px <= box.x2 && py >= box.y1 && py <= box.y2) {
        inside += clean(y, x) - 0.5;
        ++n;
      }
    }
  const double expected = inside / static_cast<double>(n) / s;
  double mean = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    SplitMix64 rng(seed);
    Matrix img = clean;
    for (auto& v : img.data()) v += s * rng.normal();
    mean += scr(img, box);
  }
  mean /= 100.0;
  EXPECT_NEAR(mean / expected, 1.0, 0.05) << mean << " vs " << expected;
}

TEST(Scr, DoublingAmplitudeRaisesScr) {
  SplitMix64 rng(5);
  Matrix noise(64, 64);
  for (auto& v : noise.data()) v = 0.5 + 0.03 * rng.normal();
  Matrix a = noise, b = noise;
  add_blob(a, {30, 30, 1.5, 0.1});
  add_blob(b, {30, 30, 1.5, 0.2});
  const Box box = three_sigma_box({30, 30, 1.5, 0.1}, {64, 64});
  EXPECT_GT(scr(b, box), scr(a, box));
}

TEST(Scr, RejectsDegenerateBox) {
  EXPECT_THROW(scr(Matrix(8, 8), {3, 3, 3, 5}), InvalidInput);
  EXPECT_THROW(scr(Matrix(8, 8), {0, 0, 8, 8}), InvalidInput);
}

TEST(Association, Examples) {
  const Box t{0, 0, 10, 10}, d{40, 40, 50, 50};
  GroundTruth g;
  g.targets.push_back({0, t});
  g.distractors.push_back({0, d});
  const std::vector<GroundTruth> truth(6, g);
  std::vector<std::vector<Detection>> clean(6, {{t, 0.9}});
  EXPECT_DOUBLE_EQ(association_accuracy(clean, truth), 1.0);

  std::vector<std::vector<Detection>> fooled(6, {{d, 0.9}});
  EXPECT_DOUBLE_EQ(association_accuracy(fooled, truth), 0.0);

  // frame 0 never counts; one of five later frames locks onto the distractor
  std::vector<std::vector<Detection>> mixed = clean;
  mixed[0] = {};
  mixed[3].push_back({d, 0.95});
  EXPECT_DOUBLE_EQ(association_accuracy(mixed, truth), 0.8);
  mixed[5] = {};
  EXPECT_DOUBLE_EQ(association_accuracy(mixed, truth), 0.6);
}

TEST(Association, NeedsTwoAlignedFrames) {
  GroundTruth g;
  EXPECT_THROW(association_accuracy({{}}, {g}), InvalidInput);
  EXPECT_THROW(association_accuracy({{}, {}}, {g}), InvalidInput);
}

TEST(DetectionReport, PoolsCounts) {
  const Box a{0, 0, 10, 10};
  const MetricReport r = detection_report({ImageResult{{{a, 0.9}}, {a}}, ImageResult{{}, {a}}});
  EXPECT_EQ(r.true_positives, 1u);
  EXPECT_EQ(r.false_negatives, 1u);
  EXPECT_DOUBLE_EQ(r.recall, 0.5);
  EXPECT_DOUBLE_EQ(r.precision, 1.0);
  EXPECT_DOUBLE_EQ(r.ap50, 0.5);
}
