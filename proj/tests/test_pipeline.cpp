#include <gtest/gtest.h>

#include <cmath>

#include "spirit/experiments.hpp"
#include "spirit/pipeline.hpp"
#include "support.hpp"

using namespace spirit;

namespace {

std::vector<Matrix> benchmark_images(std::size_t frames = 6) {
  BenchmarkOptions opt;
  opt.sequences = 1;
  opt.frames = frames;
  return make_benchmark(opt).front().images;
}

Tensor3 decoder_input(double background) { return Tensor3(kFeatureChannels, 8, 8, background); }

void set_cell(Tensor3& t, std::size_t i, std::size_t j, double v) {
  for (std::size_t c = 0; c < t.channels(); ++c) t.at(c, i, j) = v;
}

PipelineConfig decode_config() { return PipelineConfig::defaults({64, 64}); }

}  // namespace

TEST(ExtractPyramid, ShapesAndStrides) {
  const Pyramid p = extract_pyramid(Matrix(64, 48, 0.2));
  ASSERT_EQ(p.stages.size(), 3u);
  EXPECT_EQ(p.strides, (std::vector<std::size_t>{4, 8, 16}));
  EXPECT_EQ(p.stages[0].height(), 16u);
  EXPECT_EQ(p.stages[0].width(), 12u);
  EXPECT_EQ(p.stages[2].height(), 4u);
  EXPECT_EQ(p.stages[2].width(), 3u);
  for (const auto& s : p.stages) EXPECT_EQ(s.channels(), kFeatureChannels);
}

TEST(ExtractPyramid, ConstantImage) {
  const double v = 0.37;
  const Pyramid p = extract_pyramid(Matrix(32, 32, v));
  for (const auto& s : p.stages)
    for (std::size_t i = 0; i < s.height(); ++i)
      for (std::size_t j = 0; j < s.width(); ++j) {
        EXPECT_NEAR(s.at(kMean, i, j), v, 1e-12);
        EXPECT_NEAR(s.at(kPeak, i, j), v, 1e-12);
        for (std::size_t c : {kGradX, kGradY, kLaplacian, kContrast, kTopHat, kDeviation})
          EXPECT_NEAR(s.at(c, i, j), 0.0, 1e-12) << "channel " << c;
      }
}

TEST(ExtractPyramid, BrightPixelHasContrastAtEveryStage) {
  Matrix img(32, 32);
  img(13, 18) = 1.0;
  const Pyramid p = extract_pyramid(img);
  for (std::size_t s = 0; s < 3; ++s) {
    const std::size_t stride = p.strides[s];
    EXPECT_GT(p.stages[s].at(kContrast, 13 / stride, 18 / stride), 0.0) << "stage " << s;
  }
}

TEST(ExtractPyramid, HorizontalMirrorSymmetry) {
  SplitMix64 rng(5);
  Matrix img(32, 32), flipped(32, 32);
  for (std::size_t y = 0; y < 32; ++y)
    for (std::size_t x = 0; x < 32; ++x) img(y, x) = rng.uniform();
  for (std::size_t y = 0; y < 32; ++y)
    for (std::size_t x = 0; x < 32; ++x) flipped(y, 31 - x) = img(y, x);
  const Pyramid a = extract_pyramid(img), b = extract_pyramid(flipped);
  for (std::size_t s = 0; s < 3; ++s) {
    const Tensor3& fa = a.stages[s];
    const Tensor3& fb = b.stages[s];
    for (std::size_t c = 0; c < fa.channels(); ++c)
      for (std::size_t i = 0; i < fa.height(); ++i)
        for (std::size_t j = 0; j < fa.width(); ++j)
          EXPECT_NEAR(fa.at(c, i, j), fb.at(c, i, fa.width() - 1 - j), 1e-12);
  }
}

TEST(ExtractPyramid, RejectsBadImages) {
  EXPECT_THROW(extract_pyramid(Matrix(0, 0)), InvalidInput);
  Matrix m(8, 8);
  m(1, 1) = NAN;
  EXPECT_THROW(extract_pyramid(m), InvalidInput);
}

TEST(DecodeDetections, FlatMapGivesNothing) {
  EXPECT_TRUE(decode_detections(decoder_input(0.0), decode_config()).empty());
}

TEST(DecodeDetections, SinglePeakWithinOneStride) {
  Tensor3 t = decoder_input(-4.0);
  set_cell(t, 3, 5, 4.0);
  const auto dets = decode_detections(t, decode_config());
  ASSERT_EQ(dets.size(), 1u);
  const Box& b = dets[0].box;
  const double cx = 0.5 * (b.x1 + b.x2), cy = 0.5 * (b.y1 + b.y2);
  // stride 8, cell (3, 5) centred at (44, 28)
  EXPECT_LE(std::abs(cx - 44.0), 8.0);
  EXPECT_LE(std::abs(cy - 28.0), 8.0);
  EXPECT_NEAR(dets[0].score, sigmoid(4.0), 1e-12);
}

TEST(DecodeDetections, OverlappingPeaksCollapseUnderNms) {
  Tensor3 t = decoder_input(-4.0);
  set_cell(t, 3, 3, 4.0);
  set_cell(t, 3, 4, 3.0);
  set_cell(t, 3, 5, 4.0);
  EXPECT_EQ(decode_detections(t, decode_config()).size(), 1u);
}

TEST(DecodeDetections, SeparatedPeaksBothSurvive) {
  Tensor3 t = decoder_input(-4.0);
  set_cell(t, 1, 1, 4.0);
  set_cell(t, 6, 6, 3.0);
  const auto dets = decode_detections(t, decode_config());
  ASSERT_EQ(dets.size(), 2u);
  EXPECT_GE(dets[0].score, dets[1].score);
}

TEST(DecodeDetections, MaxDetectionsCap) {
  Tensor3 t = decoder_input(-4.0);
  set_cell(t, 1, 1, 4.0);
  set_cell(t, 6, 6, 3.0);
  PipelineConfig c = decode_config();
  c.max_detections = 1;
  EXPECT_EQ(decode_detections(t, c).size(), 1u);
}

TEST(DetectFrame, AlphaZeroEqualsRefinementOff) {
  PipelineConfig on = benchmark_config();
  for (auto& p : on.pifr) p.alpha = 0.0;
  PipelineConfig off = on;
  off.pifr_enabled = false;
  for (const Matrix& img : benchmark_images(3)) EXPECT_EQ(detect_frame(img, on).detections, detect_frame(img, off).detections);
}

TEST(DetectFrame, EmptyBankEqualsStatelessPath) {
  const PipelineConfig c = benchmark_config();
  for (const Matrix& img : benchmark_images(3)) {
    const FrameResult a = detect_frame(img, c);
    const FrameResult b = detect_frame(img, c, MemoryBank(c.pgma.capacity));
    EXPECT_EQ(a.detections, b.detections);
    EXPECT_TRUE(a.state.empty());
    EXPECT_EQ(b.state.size(), 1u);
  }
}

TEST(DetectFrame, WrittenEntryCarriesNonUniformPrior) {
  const PipelineConfig c = benchmark_config();
  const auto images = benchmark_images(4);
  std::optional<MemoryBank> state = MemoryBank(c.pgma.capacity);
  bool saw_detection = false;
  for (const Matrix& img : images) {
    FrameResult r = detect_frame(img, c, std::move(state));
    const auto& priors = r.state.entries().back().priors;
    const bool uniform = std::all_of(priors.begin(), priors.end(), [](double v) { return v == 1.0; });
    EXPECT_EQ(uniform, r.detections.empty());
    saw_detection = saw_detection || !r.detections.empty();
    state = std::move(r.state);
  }
  EXPECT_TRUE(saw_detection);
}

TEST(TrackSequence, SingleFrameEqualsDetect) {
  const PipelineConfig c = benchmark_config();
  const Matrix img = benchmark_images(2).front();
  const auto tracked = track_sequence({img}, c);
  ASSERT_EQ(tracked.size(), 1u);
  EXPECT_EQ(tracked[0], detect_frame(img, c).detections);
}

TEST(TrackSequence, MatchesChainedDetectAndBankStaysBounded) {
  PipelineConfig c = benchmark_config();
  c.pgma.capacity = 3;
  const auto images = benchmark_images(c.pgma.capacity + 2);
  const auto tracked = track_sequence(images, c);
  std::optional<MemoryBank> state = MemoryBank(c.pgma.capacity);
  for (std::size_t t = 0; t < images.size(); ++t) {
    FrameResult r = detect_frame(images[t], c, std::move(state));
    EXPECT_LE(r.state.size(), c.pgma.capacity);
    EXPECT_EQ(r.state.size(), std::min(t + 1, c.pgma.capacity));
    EXPECT_EQ(r.detections, tracked[t]) << "frame " << t;
    state = std::move(r.state);
  }
}

TEST(TrackSequence, Deterministic) {
  const PipelineConfig c = benchmark_config();
  const auto images = benchmark_images(5);
  EXPECT_EQ(track_sequence(images, c), track_sequence(images, c));
}

TEST(TrackSequence, NoFusionMeansPerFrameDetection) {
  PipelineConfig c = benchmark_config();
  c.pgma.beta = 0.0;
  c.pgma.gamma = 0.0;
  const auto images = benchmark_images(5);
  const auto tracked = track_sequence(images, c);
  for (std::size_t t = 0; t < images.size(); ++t) EXPECT_EQ(tracked[t], detect_frame(images[t], c).detections);
}

TEST(TrackSequence, EmptySequenceRejected) { EXPECT_THROW(track_sequence({}, benchmark_config()), InvalidInput); }

TEST(TrackSequence, BoxesInsideImageWithPositiveArea) {
  const PipelineConfig c = benchmark_config();
  BenchmarkOptions opt;
  opt.sequences = 3;
  opt.frames = 6;
  std::size_t total = 0;
  for (const auto& seq : make_benchmark(opt))
    for (const auto& frame : track_sequence(seq.images, c))
      for (const auto& d : frame) {
        ++total;
        EXPECT_GE(d.box.x1, 0.0);
        EXPECT_GE(d.box.y1, 0.0);
        EXPECT_LE(d.box.x2, static_cast<double>(opt.size.width));
        EXPECT_LE(d.box.y2, static_cast<double>(opt.size.height));
        EXPECT_GT(d.box.area(), 0.0);
        EXPECT_GT(d.score, c.score_threshold);
        EXPECT_LE(d.score, 1.0);
      }
  EXPECT_GT(total, 0u);
}

TEST(PipelineConfig, Validation) {
  PipelineConfig c = benchmark_config();
  EXPECT_NO_THROW(c.validate());
  c.score_threshold = 1.0;
  EXPECT_THROW(c.validate(), InvalidInput);
  c = benchmark_config();
  c.decoder.weights.pop_back();
  EXPECT_THROW(c.validate(), InvalidInput);
  c = benchmark_config();
  c.kappa = 0.0;
  EXPECT_THROW(c.validate(), InvalidInput);
}
