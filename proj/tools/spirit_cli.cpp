// spirit: generate synthetic scenes, detect, track, tune, evaluate, ablate,
// sweep the memory length.
//
// Exit status: 0 success, 1 i/o failure, 2 usage error, 3 invariant violation.

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "spirit/experiments.hpp"
#include "spirit/io.hpp"

namespace {

using namespace spirit;

// ---- logging ------------------------------------------------------------

enum class Level { Error = 0, Warn = 1, Info = 2, Debug = 3 };

Level log_level() {
  static const Level level = [] {
    const char* env = std::getenv("SPIRIT_LOG");
    const std::string v = env ? env : "warn";
    if (v == "error") return Level::Error;
    if (v == "info") return Level::Info;
    if (v == "debug") return Level::Debug;
    return Level::Warn;
  }();
  return level;
}

std::mutex log_mutex;

void log(Level l, const std::string& msg) {
  if (static_cast<int>(l) > static_cast<int>(log_level())) return;
  static const char* tags[] = {"error", "warn", "info", "debug"};
  std::lock_guard lock(log_mutex);
  std::cerr << "[" << tags[static_cast<int>(l)] << "] " << msg << "\n";
}

class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what) : Error(what) {}
};

// ---- run configuration --------------------------------------------------

struct RunConfig {
  std::string command;
  std::optional<std::string> config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> params;
  std::string out;
  std::string input;
  std::size_t jobs = 1;
  std::optional<std::size_t> k;
  std::optional<double> kappa;
  std::optional<double> score_threshold;
  std::size_t sequences = 10;
  std::size_t frames = 20;
  std::size_t size = 64;
  std::optional<std::size_t> steps;
  std::string variant = "+pifr+pgma";
};

/// Values from the --config file fill fields the command line left unset.
void overlay_config_file(RunConfig& rc, const CLI::App& app) {
  if (!rc.config_path) return;
  const json j = parse_json(read_file(*rc.config_path), *rc.config_path);
  if (!j.is_object()) throw InvalidInput(*rc.config_path + ": config must be a JSON object");
  const auto unset = [&](const char* flag) { return app.count(flag) == 0; };
  try {
    if (j.contains("seed") && unset("--seed")) rc.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("params") && unset("--params")) rc.params = j.at("params").get<std::string>();
    if (j.contains("out") && unset("--out")) rc.out = j.at("out").get<std::string>();
    if (j.contains("input") && unset("--input")) rc.input = j.at("input").get<std::string>();
    if (j.contains("jobs") && unset("--jobs")) rc.jobs = j.at("jobs").get<std::size_t>();
    if (j.contains("k") && unset("--k")) rc.k = j.at("k").get<std::size_t>();
    if (j.contains("kappa") && unset("--kappa")) rc.kappa = j.at("kappa").get<double>();
    if (j.contains("score_threshold") && unset("--score-threshold"))
      rc.score_threshold = j.at("score_threshold").get<double>();
    if (j.contains("sequences") && unset("--sequences")) rc.sequences = j.at("sequences").get<std::size_t>();
    if (j.contains("frames") && unset("--frames")) rc.frames = j.at("frames").get<std::size_t>();
    if (j.contains("size") && unset("--size")) rc.size = j.at("size").get<std::size_t>();
    if (j.contains("steps") && unset("--steps")) rc.steps = j.at("steps").get<std::size_t>();
    if (j.contains("variant") && unset("--variant")) rc.variant = j.at("variant").get<std::string>();
  } catch (const json::exception& e) {
    throw InvalidInput(*rc.config_path + ": " + e.what());
  }
}

void require(bool ok, const std::string& what) {
  if (!ok) throw UsageError(what);
}

std::uint64_t need_seed(const RunConfig& rc) {
  require(rc.seed.has_value(), rc.command + ": --seed is required");
  return *rc.seed;
}

/// --params names a parameter JSON; the literal "default" selects the built-in
/// benchmark starting point. Flag overrides are applied on top.
PipelineConfig load_pipeline(const RunConfig& rc) {
  require(rc.params.has_value(), rc.command + ": --params is required (a file or 'default')");
  PipelineConfig c = benchmark_config();
  if (*rc.params != "default") apply_params(c, parse_json(read_file(*rc.params), *rc.params));
  if (rc.k) c.pgma.capacity = *rc.k;
  if (rc.kappa) c.kappa = *rc.kappa;
  if (rc.score_threshold) c.score_threshold = *rc.score_threshold;
  c.validate();
  return c;
}

BenchmarkOptions benchmark_options(const RunConfig& rc) {
  BenchmarkOptions o;
  o.seed = need_seed(rc);
  o.sequences = rc.sequences;
  o.frames = rc.frames;
  o.size = {rc.size, rc.size};
  return o;
}

fs::path out_dir(const RunConfig& rc) {
  require(!rc.out.empty(), rc.command + ": --out is required");
  std::error_code ec;
  fs::create_directories(rc.out, ec);
  if (ec) throw IoError("cannot create " + rc.out + ": " + ec.message());
  return rc.out;
}

// ---- checked artifact writers --------------------------------------------

void write_json(const fs::path& path, const json& j) {
  write_atomic(path, dump(j));
  if (parse_json(read_file(path), path.string()) != j) throw IoError(path.string() + ": read-back mismatch");
  log(Level::Debug, "wrote " + path.string());
}

void write_csv(const fs::path& path, const CsvTable& t) {
  write_atomic(path, t.text());
  const auto rows = parse_csv(read_file(path));
  if (rows.size() != t.data_rows() + 1) throw IoError(path.string() + ": read-back mismatch");
  log(Level::Debug, "wrote " + path.string());
}

/// Runs body(i) for i in [0, n) on up to `jobs` threads.
template <class F>
void parallel_for(std::size_t n, std::size_t jobs, F body) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex m;
  {
    std::vector<std::jthread> workers;
    for (std::size_t w = 0; w < jobs; ++w)
      workers.emplace_back([&] {
        for (std::size_t i; (i = next.fetch_add(1)) < n;) {
          try {
            body(i);
          } catch (...) {
            std::lock_guard lock(m);
            if (!failure) failure = std::current_exception();
          }
        }
      });
  }
  if (failure) std::rethrow_exception(failure);
}

// ---- commands -------------------------------------------------------------

int cmd_generate(const RunConfig& rc) {
  const BenchmarkOptions opt = benchmark_options(rc);
  const fs::path out = out_dir(rc);
  const std::vector<Sequence> seqs = make_benchmark(opt);
  parallel_for(seqs.size(), rc.jobs, [&](std::size_t s) {
    const fs::path dir = out / sequence_name(s);
    fs::create_directories(dir);
    write_sequence(dir, seqs[s].images, seqs[s].truth);
    for (std::size_t t = 0; t < seqs[s].images.size(); ++t)
      if (read_pgm(dir / frame_name(t, ".pgm")) != seqs[s].images[t])
        throw IoError((dir / frame_name(t, ".pgm")).string() + ": read-back mismatch");
  });
  log(Level::Info, "generated " + std::to_string(seqs.size()) + " sequences in " + out.string());
  return 0;
}

std::vector<fs::path> input_images(const RunConfig& rc) {
  require(!rc.input.empty(), rc.command + ": --input is required");
  std::error_code ec;
  if (fs::is_regular_file(rc.input, ec)) return {fs::path(rc.input)};
  auto images = list_images(rc.input);
  if (images.empty()) throw IoError("no .pgm images in " + rc.input);
  return images;
}

void write_frame_detections(const fs::path& out, const fs::path& image, std::size_t frame,
                            const std::vector<Detection>& dets) {
  fs::path name = image.filename();
  name.replace_extension(".json");
  write_json(out / name, detections_json(frame, dets));
}

int cmd_detect(const RunConfig& rc) {
  const PipelineConfig c = load_pipeline(rc);
  const auto images = input_images(rc);
  const fs::path out = out_dir(rc);
  parallel_for(images.size(), rc.jobs, [&](std::size_t i) {
    write_frame_detections(out, images[i], i, detect_frame(read_pgm(images[i]), c).detections);
  });
  log(Level::Info, "detect: " + std::to_string(images.size()) + " images");
  return 0;
}

int cmd_track(const RunConfig& rc) {
  const PipelineConfig c = load_pipeline(rc);
  const auto images = input_images(rc);
  const fs::path out = out_dir(rc);
  std::vector<Matrix> frames;
  for (const auto& p : images) frames.push_back(read_pgm(p));
  const auto dets = track_sequence(frames, c);
  for (std::size_t t = 0; t < images.size(); ++t) write_frame_detections(out, images[t], t, dets[t]);
  log(Level::Info, "track: " + std::to_string(images.size()) + " frames");
  return 0;
}

CsvTable loss_table(const TuneResult& r) {
  CsvTable t({"step", "bbox", "cls", "giou", "total"});
  for (std::size_t i = 0; i < r.trace.size(); ++i) {
    const auto& l = r.trace[i];
    t.add({std::to_string(i), fmt(l.bbox), fmt(l.cls), fmt(l.giou), fmt(l.total)});
  }
  return t;
}

TuneOptions tune_options(const RunConfig& rc, std::size_t default_steps) {
  TuneOptions o;
  o.steps = rc.steps.value_or(default_steps);
  require(o.steps >= 1 && o.steps <= 200, rc.command + ": --steps must be in [1, 200]");
  o.jobs = rc.jobs;
  return o;
}

Variant variant_flag(const RunConfig& rc) {
  try {
    return parse_variant(rc.variant);
  } catch (const InvalidInput& e) {
    throw UsageError(e.what());
  }
}

int cmd_tune(const RunConfig& rc) {
  const PipelineConfig start = load_pipeline(rc);
  const Variant v = variant_flag(rc);
  const TuneOptions opt = tune_options(rc, 60);
  const fs::path out = out_dir(rc);
  const PreparedBenchmark bench = prepare_benchmark(make_benchmark(benchmark_options(rc)), start);
  const VariantTuning tuned = tune_variant(bench, start, v, opt);
  write_json(out / "params.json", params_json(tuned.config));
  write_csv(out / "loss.csv", loss_table(tuned.result));
  log(Level::Info, "tune " + variant_name(v) + ": loss " + fmt(tuned.result.trace.front().total) + " -> " +
                       fmt(tuned.result.best_loss.total));
  return 0;
}

struct EvalSequence {
  std::vector<Matrix> images;
  std::vector<GroundTruth> truth;
};

std::vector<EvalSequence> load_sequences(const RunConfig& rc) {
  std::vector<EvalSequence> out;
  if (rc.input.empty()) {
    for (auto& s : make_benchmark(benchmark_options(rc))) out.push_back({std::move(s.images), std::move(s.truth)});
    return out;
  }
  std::vector<fs::path> dirs;
  std::error_code ec;
  if (fs::exists(fs::path(rc.input) / "gt.json", ec)) {
    dirs.push_back(rc.input);
  } else {
    if (!fs::is_directory(rc.input, ec)) throw IoError("not a directory: " + rc.input);
    for (const auto& e : fs::directory_iterator(rc.input))
      if (e.is_directory() && fs::exists(e.path() / "gt.json")) dirs.push_back(e.path());
    std::sort(dirs.begin(), dirs.end());
  }
  if (dirs.empty()) throw IoError("no sequences (directories with gt.json) under " + rc.input);
  for (const auto& d : dirs) {
    EvalSequence s;
    for (const auto& p : list_images(d)) s.images.push_back(read_pgm(p));
    s.truth = read_truth(d / "gt.json");
    if (s.truth.size() != s.images.size())
      throw InvalidInput(d.string() + ": gt.json has " + std::to_string(s.truth.size()) + " frames, found " +
                         std::to_string(s.images.size()) + " images");
    out.push_back(std::move(s));
  }
  return out;
}

int cmd_eval(const RunConfig& rc) {
  const PipelineConfig c = load_pipeline(rc);
  const auto seqs = load_sequences(rc);
  const fs::path out = out_dir(rc);
  std::vector<std::vector<std::vector<Detection>>> per_seq(seqs.size());
  parallel_for(seqs.size(), rc.jobs, [&](std::size_t s) { per_seq[s] = track_sequence(seqs[s].images, c); });

  std::vector<ImageResult> images;
  AssociationCounts assoc;
  double scr_sum = 0.0, scr_min = std::numeric_limits<double>::infinity();
  std::size_t scr_n = 0;
  for (std::size_t s = 0; s < seqs.size(); ++s) {
    for (std::size_t t = 0; t < seqs[s].images.size(); ++t) {
      images.push_back({per_seq[s][t], boxes_of(seqs[s].truth[t].targets)});
      for (const auto& g : seqs[s].truth[t].targets) {
        const double v = scr(seqs[s].images[t], g.box);
        scr_sum += v;
        scr_min = std::min(scr_min, v);
        ++scr_n;
      }
    }
    if (seqs[s].images.size() >= 2) {
      const AssociationCounts a = association_counts(per_seq[s], seqs[s].truth);
      assoc.eligible += a.eligible;
      assoc.clean += a.clean;
    }
  }
  MetricReport r = detection_report(images);
  r.scr_count = scr_n;
  r.scr_mean = scr_n ? scr_sum / static_cast<double>(scr_n) : 0.0;
  r.scr_min = scr_n ? scr_min : 0.0;
  if (assoc.eligible > 0) {
    r.has_association = true;
    r.association = assoc.accuracy();
  }
  write_json(out / "metrics.json", metrics_json(r));
  CsvTable pr({"score", "precision", "recall"});
  for (const auto& p : pr_curve(images)) pr.add({fmt(p.score), fmt(p.precision), fmt(p.recall)});
  write_csv(out / "pr.csv", pr);
  log(Level::Info, "eval: f1 " + fmt(r.f1) + " ap50 " + fmt(r.ap50));
  return 0;
}

std::vector<std::string> metric_cells(const VariantMetrics& m) {
  return {fmt(m.report.precision), fmt(m.report.recall), fmt(m.report.f1), fmt(m.report.ap50),
          fmt(m.association), fmt(m.association_lambda0)};
}

std::string file_tag(Variant v) {
  switch (v) {
    case Variant::Baseline: return "baseline";
    case Variant::Pifr: return "pifr";
    case Variant::Pgma: return "pgma";
    case Variant::Both: return "both";
  }
  return "x";
}

int cmd_ablate(const RunConfig& rc) {
  const PipelineConfig start = load_pipeline(rc);
  TuneOptions opt = tune_options(rc, 30);
  const fs::path out = out_dir(rc);
  const PreparedBenchmark bench = prepare_benchmark(make_benchmark(benchmark_options(rc)), start);
  // Variants fan out; FD probes inside each stay sequential.
  const std::size_t outer = std::min<std::size_t>(rc.jobs, kVariants.size());
  opt.jobs = std::max<std::size_t>(1, rc.jobs / std::max<std::size_t>(1, outer));
  std::vector<VariantTuning> tuned(kVariants.size());
  std::vector<VariantMetrics> metrics(kVariants.size());
  parallel_for(kVariants.size(), outer, [&](std::size_t i) {
    tuned[i] = tune_variant(bench, start, kVariants[i], opt);
    metrics[i] = evaluate_variant(bench, tuned[i].config, kVariants[i]);
    log(Level::Info, "ablate " + variant_name(kVariants[i]) + ": f1 " + fmt(metrics[i].report.f1));
  });
  CsvTable t({"variant", "precision", "recall", "f1", "ap50", "association", "association_lambda0"});
  for (std::size_t i = 0; i < kVariants.size(); ++i) {
    std::vector<std::string> row{variant_name(kVariants[i])};
    for (auto& cell : metric_cells(metrics[i])) row.push_back(cell);
    t.add(row);
    write_json(out / ("params_" + file_tag(kVariants[i]) + ".json"), params_json(tuned[i].config));
    write_csv(out / ("loss_" + file_tag(kVariants[i]) + ".csv"), loss_table(tuned[i].result));
  }
  write_csv(out / "ablation.csv", t);
  return 0;
}

inline constexpr std::array<std::size_t, 5> kSweepK{1, 3, 5, 7, 9};

int cmd_sweep_k(const RunConfig& rc) {
  require(!rc.k, "sweep-k: --k is not accepted; K runs over 1,3,5,7,9");
  const PipelineConfig start = load_pipeline(rc);
  const Variant v = variant_flag(rc);
  require(uses_memory(v), "sweep-k: the variant must use memory");
  const std::size_t steps = rc.steps.value_or(0);
  const fs::path out = out_dir(rc);
  const PreparedBenchmark bench = prepare_benchmark(make_benchmark(benchmark_options(rc)), start);
  std::vector<VariantMetrics> metrics(kSweepK.size());
  parallel_for(kSweepK.size(), rc.jobs, [&](std::size_t i) {
    PipelineConfig c = start;
    c.pgma.capacity = kSweepK[i];
    if (steps > 0) {
      TuneOptions opt = tune_options(rc, steps);
      opt.jobs = 1;
      c = tune_variant(bench, c, v, opt).config;
    } else {
      c = TunableSet(v).apply(c, TunableSet(v).read(c));
    }
    metrics[i] = evaluate_variant(bench, c, v);
    log(Level::Info, "sweep-k K=" + std::to_string(kSweepK[i]) + ": f1 " + fmt(metrics[i].report.f1));
  });
  CsvTable t({"K", "precision", "recall", "f1", "ap50", "association", "association_lambda0"});
  for (std::size_t i = 0; i < kSweepK.size(); ++i) {
    std::vector<std::string> row{std::to_string(kSweepK[i])};
    for (auto& cell : metric_cells(metrics[i])) row.push_back(cell);
    t.add(row);
  }
  write_csv(out / "sweep_k.csv", t);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  RunConfig rc;
  CLI::App app{"spirit: infrared small-target detection toolkit"};
  app.require_subcommand(1, 1);
  app.fallthrough();
  app.add_option("--config", rc.config_path, "JSON run configuration; flags override its values");
  app.add_option("--seed", rc.seed, "64-bit seed of the synthetic benchmark");
  app.add_option("--params", rc.params, "parameter JSON, or 'default'");
  app.add_option("--out", rc.out, "output directory");
  app.add_option("--input", rc.input, "input image, image directory or sequence directory");
  app.add_option("--jobs", rc.jobs, "worker threads")->check(CLI::PositiveNumber);
  app.add_option("--k", rc.k, "memory length K")->check(CLI::PositiveNumber);
  app.add_option("--kappa", rc.kappa, "feasibility spread factor");
  app.add_option("--score-threshold", rc.score_threshold, "decoder score threshold");
  app.add_option("--sequences", rc.sequences, "synthetic sequences")->check(CLI::PositiveNumber);
  app.add_option("--frames", rc.frames, "frames per synthetic sequence")->check(CLI::Range(2, 100000));
  app.add_option("--size", rc.size, "synthetic frame side in pixels")->check(CLI::PositiveNumber);
  app.add_option("--steps", rc.steps, "finite-difference steps (1..200)");
  app.add_option("--variant", rc.variant, "baseline, pifr, pgma or both");

  const std::vector<std::pair<std::string, std::string>> commands{
      {"generate", "write seeded synthetic sequences (PGM frames + gt.json)"},
      {"detect", "single-frame detection per image"},
      {"track", "stateful detection over an ordered frame directory"},
      {"tune", "finite-difference tuning on the synthetic benchmark"},
      {"eval", "precision/recall/F1/AP50/SCR/association over sequences"},
      {"ablate", "tune and evaluate baseline, +pifr, +pgma, +pifr+pgma"},
      {"sweep-k", "metrics for memory length K in 1,3,5,7,9"}};
  for (const auto& [name, help] : commands) app.add_subcommand(name, help);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }
  rc.command = app.get_subcommands().front()->get_name();

  try {
    overlay_config_file(rc, app);
    if (rc.command == "generate") return cmd_generate(rc);
    if (rc.command == "detect") return cmd_detect(rc);
    if (rc.command == "track") return cmd_track(rc);
    if (rc.command == "tune") return cmd_tune(rc);
    if (rc.command == "eval") return cmd_eval(rc);
    if (rc.command == "ablate") return cmd_ablate(rc);
    if (rc.command == "sweep-k") return cmd_sweep_k(rc);
    throw UsageError("unknown command " + rc.command);
  } catch (const UsageError& e) {
    log(Level::Error, std::string("usage: ") + e.what());
    return 2;
  } catch (const IoError& e) {
    log(Level::Error, e.what());
    return 1;
  } catch (const fs::filesystem_error& e) {
    log(Level::Error, std::string("i/o error: ") + e.what());
    return 1;
  } catch (const Error& e) {
    log(Level::Error, std::string("invariant violated: ") + e.what());
    return 3;
  }
}
