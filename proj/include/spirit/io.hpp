#pragma once

// File formats: binary 8-bit PGM, detection / ground-truth / parameter /
// metrics JSON, CSV tables. All writes go through a temp file and a rename.

#include <charconv>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include <json.hpp>

#include "spirit/eval.hpp"
#include "spirit/pipeline.hpp"
#include "spirit/synthgen.hpp"

namespace spirit {

using json = nlohmann::json;
namespace fs = std::filesystem;

/// Unreadable or unwritable files.
class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error("i/o error: " + what) {}
};

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("read failed for " + path.string());
  return ss.str();
}

inline void write_atomic(const fs::path& path, const std::string& bytes) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

// ---- PGM ----------------------------------------------------------------

inline std::string encode_pgm(const Matrix& img) {
  std::string out = "P5\n" + std::to_string(img.cols()) + " " + std::to_string(img.rows()) + "\n255\n";
  out.reserve(out.size() + img.rows() * img.cols());
  for (double v : img.data()) {
    if (!std::isfinite(v)) throw InvalidInput("pgm: non-finite pixel");
    out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0))));
  }
  return out;
}

inline Matrix decode_pgm(const std::string& bytes, const std::string& name = "pgm") {
  std::size_t pos = 0;
  const auto token = [&]() -> std::string {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
    const std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos])) && bytes[pos] != '#') ++pos;
    return bytes.substr(start, pos - start);
  };
  if (token() != "P5") throw IoError(name + ": not a binary PGM (P5)");
  const auto number = [&](const char* what) {
    const std::string t = token();
    std::size_t v = 0;
    const auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc() || p != t.data() + t.size() || t.empty()) throw IoError(name + ": bad " + std::string(what));
    return v;
  };
  const std::size_t w = number("width"), h = number("height"), maxval = number("maxval");
  if (w == 0 || h == 0) throw IoError(name + ": empty image");
  if (maxval == 0 || maxval > 255) throw IoError(name + ": only 8-bit PGM is supported");
  ++pos;  // single whitespace after maxval
  if (bytes.size() < pos + w * h) throw IoError(name + ": truncated pixel data");
  Matrix img(h, w);
  for (std::size_t i = 0; i < w * h; ++i)
    img.data()[i] = static_cast<double>(static_cast<unsigned char>(bytes[pos + i])) / static_cast<double>(maxval);
  return img;
}

inline Matrix read_pgm(const fs::path& path) { return decode_pgm(read_file(path), path.string()); }
inline void write_pgm(const fs::path& path, const Matrix& img) { write_atomic(path, encode_pgm(img)); }

/// Sorted *.pgm files of a directory.
inline std::vector<fs::path> list_images(const fs::path& dir) {
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) throw IoError("not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".pgm") out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

// ---- JSON ---------------------------------------------------------------

inline std::string dump(const json& j) { return j.dump(2) + "\n"; }

inline json parse_json(const std::string& text, const std::string& name) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw IoError(name + ": " + e.what());
  }
}

inline json box_json(const Box& b) { return json::array({b.x1, b.y1, b.x2, b.y2}); }

inline Box box_from(const json& j) {
  if (!j.is_array() || j.size() != 4) throw InvalidInput("box must be [x1,y1,x2,y2]");
  const Box b{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
  if (!b.valid()) throw InvalidInput("box must satisfy x1<x2, y1<y2");
  return b;
}

inline json detections_json(std::size_t frame, const std::vector<Detection>& dets) {
  json arr = json::array();
  for (const auto& d : dets) arr.push_back({{"box", box_json(d.box)}, {"score", d.score}});
  return {{"frame", frame}, {"detections", arr}};
}

struct FrameDetections {
  std::size_t frame = 0;
  std::vector<Detection> detections;
  bool operator==(const FrameDetections&) const = default;
};

inline FrameDetections detections_from(const json& j) {
  FrameDetections f;
  f.frame = j.at("frame").get<std::size_t>();
  for (const auto& d : j.at("detections")) {
    const double s = d.at("score").get<double>();
    if (!(s >= 0.0 && s <= 1.0)) throw InvalidInput("detection score outside [0,1]");
    f.detections.push_back({box_from(d.at("box")), s});
  }
  return f;
}

inline json truth_json(std::size_t frame, const GroundTruth& gt) {
  const auto list = [](const std::vector<LabeledBox>& boxes) {
    json arr = json::array();
    for (const auto& b : boxes) arr.push_back({{"id", b.id}, {"box", box_json(b.box)}});
    return arr;
  };
  return {{"frame", frame}, {"detections", list(gt.targets)}, {"distractors", list(gt.distractors)}};
}

inline GroundTruth truth_from(const json& j) {
  GroundTruth gt;
  const auto list = [](const json& arr, std::vector<LabeledBox>& out) {
    for (const auto& b : arr) out.push_back({b.at("id").get<int>(), box_from(b.at("box"))});
  };
  list(j.at("detections"), gt.targets);
  if (j.contains("distractors")) list(j.at("distractors"), gt.distractors);
  return gt;
}

inline json matrix_json(const Matrix& m) {
  json rows = json::array();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (std::size_t c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(row);
  }
  return rows;
}

inline Matrix matrix_from(const json& j, std::size_t rows, std::size_t cols, const std::string& what) {
  if (!j.is_array() || j.size() != rows) throw InvalidInput(what + " must have " + std::to_string(rows) + " rows");
  Matrix m(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    if (!j[r].is_array() || j[r].size() != cols)
      throw InvalidInput(what + " must have " + std::to_string(cols) + " columns");
    for (std::size_t c = 0; c < cols; ++c) m(r, c) = j[r][c].get<double>();
  }
  return m;
}

inline json pifr_json(const PIFRParams& p, std::size_t stage) {
  return {{"stage", stage},
          {"r", p.rank},
          {"delta", p.delta},
          {"rho", p.rho},
          {"eps", p.eps},
          {"alpha", p.alpha},
          {"phi", matrix_json(p.phi)},
          {"gate_kernel", matrix_json(p.gate_kernel)},
          {"gate_bias", p.gate_bias}};
}

inline void pifr_from(const json& j, PIFRParams& p, std::size_t channels) {
  if (j.contains("r")) p.rank = j.at("r").get<std::size_t>();
  if (j.contains("delta")) p.delta = j.at("delta").get<double>();
  if (j.contains("rho")) p.rho = j.at("rho").get<double>();
  if (j.contains("eps")) p.eps = j.at("eps").get<double>();
  if (j.contains("alpha")) p.alpha = j.at("alpha").get<double>();
  if (j.contains("phi")) p.phi = matrix_from(j.at("phi"), channels, channels, "pifr.phi");
  if (j.contains("gate_kernel")) p.gate_kernel = matrix_from(j.at("gate_kernel"), 3, 3, "pifr.gate_kernel");
  if (j.contains("gate_bias")) p.gate_bias = j.at("gate_bias").get<double>();
}

inline json pgma_json(const PGMAParams& p) {
  json j{{"beta", p.beta},
         {"gamma", p.gamma},
         {"theta_lambda", p.theta_lambda},
         {"lambda_max", p.lambda_max},
         {"eps_pi", p.eps_pi},
         {"Wq", matrix_json(p.wq)},
         {"Wk", matrix_json(p.wk)},
         {"Wv", matrix_json(p.wv)},
         {"gate_kernel", matrix_json(p.gate_kernel)},
         {"gate_bias", p.gate_bias},
         {"K", p.capacity},
         {"position_weight", p.position_weight}};
  if (p.lambda_override) j["lambda_override"] = *p.lambda_override;
  return j;
}

inline void pgma_from(const json& j, PGMAParams& p, std::size_t channels) {
  if (j.contains("beta")) p.beta = j.at("beta").get<double>();
  if (j.contains("gamma")) p.gamma = j.at("gamma").get<double>();
  if (j.contains("theta_lambda")) p.theta_lambda = j.at("theta_lambda").get<double>();
  if (j.contains("lambda_max")) p.lambda_max = j.at("lambda_max").get<double>();
  if (j.contains("eps_pi")) p.eps_pi = j.at("eps_pi").get<double>();
  if (j.contains("Wq")) p.wq = matrix_from(j.at("Wq"), channels, channels, "pgma.Wq");
  if (j.contains("Wk")) p.wk = matrix_from(j.at("Wk"), channels, channels, "pgma.Wk");
  if (j.contains("Wv")) p.wv = matrix_from(j.at("Wv"), channels, channels, "pgma.Wv");
  if (j.contains("gate_kernel")) p.gate_kernel = matrix_from(j.at("gate_kernel"), 3, 3, "pgma.gate_kernel");
  if (j.contains("gate_bias")) p.gate_bias = j.at("gate_bias").get<double>();
  if (j.contains("K")) p.capacity = j.at("K").get<std::size_t>();
  if (j.contains("position_weight")) p.position_weight = j.at("position_weight").get<double>();
  if (j.contains("lambda_override")) p.lambda_override = j.at("lambda_override").get<double>();
}

/// Learnable state of the pipeline: per-stage refinement, memory attention,
/// decoder head.
inline json params_json(const PipelineConfig& c) {
  return {{"pipeline",
           {{"image_size", json::array({c.image_size.height, c.image_size.width})},
            {"score_threshold", c.score_threshold},
            {"nms_iou", c.nms_iou},
            {"max_detections", c.max_detections},
            {"kappa", c.kappa}}},
          {"pifr_enabled", c.pifr_enabled},
          {"pifr", json::array({pifr_json(c.pifr[0], 2), pifr_json(c.pifr[1], 3)})},
          {"pgma", pgma_json(c.pgma)},
          {"decoder", {{"weights", c.decoder.weights}, {"bias", c.decoder.bias}}}};
}

/// Overlays a parameter document onto `c`. "pifr" is either one object
/// (applied to both refined stages) or an array of objects tagged by "stage".
inline void apply_params(PipelineConfig& c, const json& j) {
  if (!j.is_object()) throw InvalidInput("parameter file must hold a JSON object");
  try {
    if (j.contains("pipeline")) {
      const json& p = j.at("pipeline");
      if (p.contains("image_size")) {
        const json& sz = p.at("image_size");
        if (!sz.is_array() || sz.size() != 2) throw InvalidInput("image_size must be [height, width]");
        c.image_size = {sz[0].get<std::size_t>(), sz[1].get<std::size_t>()};
      }
      if (p.contains("score_threshold")) c.score_threshold = p.at("score_threshold").get<double>();
      if (p.contains("nms_iou")) c.nms_iou = p.at("nms_iou").get<double>();
      if (p.contains("max_detections")) c.max_detections = p.at("max_detections").get<std::size_t>();
      if (p.contains("kappa")) c.kappa = p.at("kappa").get<double>();
    }
    if (j.contains("pifr_enabled")) c.pifr_enabled = j.at("pifr_enabled").get<bool>();
    if (j.contains("pifr")) {
      const json& p = j.at("pifr");
      if (p.is_object()) {
        pifr_from(p, c.pifr[0], kFeatureChannels);
        pifr_from(p, c.pifr[1], kFeatureChannels);
      } else if (p.is_array()) {
        for (const auto& s : p) {
          const std::size_t stage = s.at("stage").get<std::size_t>();
          if (stage != 2 && stage != 3) throw InvalidInput("pifr stage must be 2 or 3");
          pifr_from(s, c.pifr[stage - 2], kFeatureChannels);
        }
      } else {
        throw InvalidInput("pifr must be an object or an array");
      }
    }
    if (j.contains("pgma")) pgma_from(j.at("pgma"), c.pgma, kFeatureChannels);
    if (j.contains("decoder")) {
      const json& d = j.at("decoder");
      if (d.contains("weights")) c.decoder.weights = d.at("weights").get<std::vector<double>>();
      if (d.contains("bias")) c.decoder.bias = d.at("bias").get<double>();
    }
  } catch (const json::exception& e) {
    throw InvalidInput(std::string("parameter file: ") + e.what());
  }
  c.validate();
}

inline json metrics_json(const MetricReport& r) {
  json j{{"precision", r.precision},
         {"recall", r.recall},
         {"f1", r.f1},
         {"ap50", r.ap50},
         {"true_positives", r.true_positives},
         {"false_positives", r.false_positives},
         {"false_negatives", r.false_negatives},
         {"scr_mean", r.scr_mean},
         {"scr_min", r.scr_min},
         {"scr_count", r.scr_count}};
  if (r.has_association) j["association_accuracy"] = r.association;
  return j;
}

// ---- CSV ----------------------------------------------------------------

/// Shortest decimal text that parses back to the same double.
inline std::string fmt(double v) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return ec == std::errc() ? std::string(buf, p) : std::string("nan");
}

class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header) : width_(header.size()) { add(std::move(header)); }

  void add(std::vector<std::string> row) {
    if (row.size() != width_) throw InvalidInput("csv row width mismatch");
    for (std::size_t i = 0; i < row.size(); ++i) text_ += (i ? "," : "") + row[i];
    text_ += "\n";
    ++rows_;
  }

  const std::string& text() const noexcept { return text_; }
  std::size_t data_rows() const noexcept { return rows_ - 1; }

 private:
  std::size_t width_;
  std::size_t rows_ = 0;
  std::string text_;
};

/// Parses a header-led CSV of numbers (used by tests and the acceptance check).
inline std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    rows.push_back(std::move(cells));
  }
  return rows;
}

// ---- sequence directories -------------------------------------------------

inline std::string frame_name(std::size_t t, const char* ext) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame_%03zu%s", t, ext);
  return buf;
}

inline std::string sequence_name(std::size_t s) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "seq_%03zu", s);
  return buf;
}

/// seq dir: frame_000.pgm ... and gt.json (array of per-frame truth objects).
inline void write_sequence(const fs::path& dir, const std::vector<Matrix>& images, const std::vector<GroundTruth>& truth) {
  json gt = json::array();
  for (std::size_t t = 0; t < images.size(); ++t) {
    write_pgm(dir / frame_name(t, ".pgm"), images[t]);
    gt.push_back(truth_json(t, truth[t]));
  }
  write_atomic(dir / "gt.json", dump(gt));
}

inline std::vector<GroundTruth> read_truth(const fs::path& path) {
  const json j = parse_json(read_file(path), path.string());
  if (!j.is_array()) throw InvalidInput(path.string() + ": ground truth must be an array of frames");
  std::vector<GroundTruth> out;
  try {
    for (const auto& f : j) out.push_back(truth_from(f));
  } catch (const json::exception& e) {
    throw InvalidInput(path.string() + ": " + e.what());
  }
  return out;
}

}  // namespace spirit
