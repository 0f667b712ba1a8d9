#pragma once

// Seeded synthetic benchmark, the four ablation variants, scalar tuning of
// each variant and the memory-length sweep.

#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

#include "spirit/eval.hpp"
#include "spirit/losses.hpp"
#include "spirit/pipeline.hpp"
#include "spirit/synthgen.hpp"

namespace spirit {

struct BenchmarkOptions {
  std::uint64_t seed = 7;
  std::size_t sequences = 10;
  std::size_t frames = 20;
  GridSize size{64, 64};
};

namespace bench_stream {
inline constexpr std::uint64_t kLayout = 0xB0;
inline constexpr std::uint64_t kScene = 0xB1;
}  // namespace bench_stream

/// One slow target and two target-like fast distractors over a rank 2..4
/// background, per sequence.
inline SequenceSpec benchmark_sequence(const BenchmarkOptions& opt, std::size_t index) {
  SplitMix64 rng(derive_seed(derive_seed(opt.seed, bench_stream::kLayout), index));
  SequenceSpec seq;
  seq.frames = opt.frames;
  SceneSpec& s = seq.scene;
  s.size = opt.size;
  s.seed = derive_seed(derive_seed(opt.seed, bench_stream::kScene), index);
  s.background_rank = 2 + static_cast<std::size_t>(rng.next() % 3);
  s.background_amplitude = rng.uniform(0.2, 0.4);
  s.noise_sigma = 0.02;
  const double w = static_cast<double>(opt.size.width), h = static_cast<double>(opt.size.height);
  const auto blob = [&] {
    Blob b;
    b.sigma = rng.uniform(1.2, 2.2);
    b.amplitude = rng.uniform(0.25, 0.4);
    b.cx = rng.uniform(0.15 * w, 0.85 * w);
    b.cy = rng.uniform(0.15 * h, 0.85 * h);
    return b;
  };
  const auto heading = [&](double lo, double hi) {
    const double a = rng.uniform(0.0, 2.0 * std::numbers::pi), v = rng.uniform(lo, hi);
    return Velocity{v * std::cos(a), v * std::sin(a)};
  };
  s.targets.push_back(blob());
  seq.target_velocities.push_back(heading(1.0, 2.0));
  for (int d = 0; d < 2; ++d) {
    s.distractors.push_back(blob());
    seq.distractor_velocities.push_back(heading(8.0, 12.0));
  }
  return seq;
}

struct Sequence {
  std::vector<Matrix> images;  // 8-bit quantized, as stored on disk
  std::vector<GroundTruth> truth;
};

inline std::vector<Sequence> make_benchmark(const BenchmarkOptions& opt) {
  if (opt.sequences < 1 || opt.frames < 2) throw InvalidInput("benchmark: needs >= 1 sequence of >= 2 frames");
  std::vector<Sequence> out;
  for (std::size_t i = 0; i < opt.sequences; ++i) {
    Sequence s;
    for (auto& f : gen_sequence(benchmark_sequence(opt, i))) {
      s.images.push_back(quantize8(std::move(f.image)));
      s.truth.push_back(std::move(f.truth));
    }
    out.push_back(std::move(s));
  }
  return out;
}

/// Working resolution and starting point of tuning on the synthetic benchmark.
/// The fuse scale starts at 1 so that a 200-step FD run can move it; the
/// decoder bias starts where a fused map of that scale has sparse peaks.
inline PipelineConfig benchmark_config() {
  PipelineConfig c = PipelineConfig::defaults({128, 128});
  c.pgma.position_weight = 40.0;
  c.pgma.gamma = 1.0;
  c.decoder.bias = -0.5;
  return c;
}

enum class Variant { Baseline, Pifr, Pgma, Both };

inline constexpr std::array<Variant, 4> kVariants{Variant::Baseline, Variant::Pifr, Variant::Pgma, Variant::Both};

inline std::string variant_name(Variant v) {
  switch (v) {
    case Variant::Baseline: return "baseline";
    case Variant::Pifr: return "+pifr";
    case Variant::Pgma: return "+pgma";
    case Variant::Both: return "+pifr+pgma";
  }
  return "?";
}

inline Variant parse_variant(const std::string& s) {
  for (Variant v : kVariants)
    if (variant_name(v) == s) return v;
  if (s == "pifr") return Variant::Pifr;
  if (s == "pgma") return Variant::Pgma;
  if (s == "both") return Variant::Both;
  throw InvalidInput("unknown variant '" + s + "' (baseline, pifr, pgma, both)");
}

inline bool uses_pifr(Variant v) { return v == Variant::Pifr || v == Variant::Both; }
inline bool uses_memory(Variant v) { return v == Variant::Pgma || v == Variant::Both; }

/// Scalars exposed to the tuner for a variant, in a fixed order.
struct TunableSet {
  Variant variant;
  std::vector<std::string> names;

  explicit TunableSet(Variant v) : variant(v) {
    names.push_back("decoder.bias");
    if (uses_pifr(v))
      for (const char* n : {"pifr2.rho", "pifr2.alpha", "pifr3.rho", "pifr3.alpha"}) names.push_back(n);
    if (uses_memory(v))
      for (const char* n : {"pgma.beta", "pgma.gamma", "pgma.theta_lambda"}) names.push_back(n);
  }

  std::vector<double> read(const PipelineConfig& c) const {
    std::vector<double> x;
    for (const auto& n : names) x.push_back(ref(const_cast<PipelineConfig&>(c), n));
    return x;
  }

  PipelineConfig apply(PipelineConfig c, const std::vector<double>& x) const {
    if (x.size() != names.size()) throw InvalidInput("tunable vector has the wrong length");
    for (std::size_t i = 0; i < x.size(); ++i) ref(c, names[i]) = x[i];
    c.pifr_enabled = uses_pifr(variant);
    return c;
  }

 private:
  static double& ref(PipelineConfig& c, const std::string& n) {
    if (n == "decoder.bias") return c.decoder.bias;
    if (n == "pifr2.rho") return c.pifr[0].rho;
    if (n == "pifr2.alpha") return c.pifr[0].alpha;
    if (n == "pifr3.rho") return c.pifr[1].rho;
    if (n == "pifr3.alpha") return c.pifr[1].alpha;
    if (n == "pgma.beta") return c.pgma.beta;
    if (n == "pgma.gamma") return c.pgma.gamma;
    if (n == "pgma.theta_lambda") return c.pgma.theta_lambda;
    throw InvalidInput("unknown tunable " + n);
  }
};

/// Benchmark with the parameter-independent per-frame work done once.
struct PreparedBenchmark {
  std::vector<std::vector<FrameFeatures>> frames;
  std::vector<std::vector<GroundTruth>> truth;
  GridSize source_size;
};

inline PreparedBenchmark prepare_benchmark(const std::vector<Sequence>& seqs, const PipelineConfig& config) {
  PreparedBenchmark p;
  for (const auto& s : seqs) {
    std::vector<FrameFeatures> ff;
    for (const auto& img : s.images) ff.push_back(prepare_frame(img, config));
    p.frames.push_back(std::move(ff));
    p.truth.push_back(s.truth);
    p.source_size = {s.images.front().rows(), s.images.front().cols()};
  }
  return p;
}

struct SequenceRun {
  std::vector<std::vector<Detection>> detections;
  std::vector<Matrix> scores;
};

inline SequenceRun run_sequence(const std::vector<FrameFeatures>& frames, const PipelineConfig& config, bool memory) {
  config.validate();
  SequenceRun r;
  MemoryBank bank(config.pgma.capacity);
  for (const auto& f : frames) {
    FrameOutput o = run_frame_detailed(f, config, memory ? &bank : nullptr);
    r.detections.push_back(std::move(o.detections));
    r.scores.push_back(std::move(o.scores));
  }
  return r;
}

/// Score-map value under the centre of each box (source coordinates).
inline std::vector<double> scores_under(const Matrix& scores, const std::vector<Box>& boxes, GridSize source) {
  std::vector<double> out;
  for (const auto& b : boxes) {
    const auto cell = [](double v, double extent, std::size_t n) {
      const auto i = static_cast<std::ptrdiff_t>(std::floor(v / extent * static_cast<double>(n)));
      return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(i, 0, static_cast<std::ptrdiff_t>(n) - 1));
    };
    out.push_back(scores(cell(b.center_y(), static_cast<double>(source.height), scores.rows()),
                         cell(b.center_x(), static_cast<double>(source.width), scores.cols())));
  }
  return out;
}

/// Mean per-frame composite loss; a missed target counts as a positive scored
/// by the map under it, so suppressing everything is never free.
inline LossBreakdown benchmark_loss(const PreparedBenchmark& bench, const PipelineConfig& config, bool memory) {
  LossBreakdown acc;
  std::size_t n = 0;
  for (std::size_t s = 0; s < bench.frames.size(); ++s) {
    const SequenceRun r = run_sequence(bench.frames[s], config, memory);
    for (std::size_t t = 0; t < r.detections.size(); ++t) {
      const std::vector<Box> gts = boxes_of(bench.truth[s][t].targets);
      const std::vector<double> miss = scores_under(r.scores[t], gts, bench.source_size);
      const LossBreakdown l = total_loss(r.detections[t], gts, bench.source_size, MissPolicy::Penalize, &miss);
      acc.bbox += l.bbox;
      acc.cls += l.cls;
      acc.giou += l.giou;
      acc.total += l.total;
      ++n;
    }
  }
  const double inv = 1.0 / static_cast<double>(n);
  return {acc.bbox * inv, acc.cls * inv, acc.giou * inv, acc.total * inv};
}

struct VariantMetrics {
  MetricReport report;
  double association = 0.0;
  double association_lambda0 = 0.0;
};

inline double pooled_association(const PreparedBenchmark& bench, const PipelineConfig& config, bool memory) {
  AssociationCounts total;
  for (std::size_t s = 0; s < bench.frames.size(); ++s) {
    const AssociationCounts c = association_counts(run_sequence(bench.frames[s], config, memory).detections, bench.truth[s]);
    total.eligible += c.eligible;
    total.clean += c.clean;
  }
  return total.accuracy();
}

inline VariantMetrics evaluate_variant(const PreparedBenchmark& bench, const PipelineConfig& config, Variant v) {
  const bool memory = uses_memory(v);
  std::vector<ImageResult> images;
  AssociationCounts assoc;
  for (std::size_t s = 0; s < bench.frames.size(); ++s) {
    const SequenceRun r = run_sequence(bench.frames[s], config, memory);
    for (std::size_t t = 0; t < r.detections.size(); ++t)
      images.push_back({r.detections[t], boxes_of(bench.truth[s][t].targets)});
    const AssociationCounts c = association_counts(r.detections, bench.truth[s]);
    assoc.eligible += c.eligible;
    assoc.clean += c.clean;
  }
  VariantMetrics m;
  m.report = detection_report(images);
  m.association = assoc.accuracy();
  PipelineConfig off = config;
  off.pgma.lambda_override = 0.0;
  m.association_lambda0 = memory ? pooled_association(bench, off, true) : m.association;
  return m;
}

struct VariantTuning {
  PipelineConfig config;
  TuneResult result;
};

inline VariantTuning tune_variant(const PreparedBenchmark& bench, const PipelineConfig& start, Variant v,
                                  const TuneOptions& opt) {
  const TunableSet set(v);
  const bool memory = uses_memory(v);
  const Objective objective = [&](const std::vector<double>& x) {
    return benchmark_loss(bench, set.apply(start, x), memory);
  };
  VariantTuning out;
  out.result = tune_scalars(set.read(start), objective, opt);
  out.config = set.apply(start, out.result.best);
  return out;
}

}  // namespace spirit
