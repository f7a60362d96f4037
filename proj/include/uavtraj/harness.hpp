#pragma once

// Evaluation harness: sequence ingestion (synthetic datasets and bounding-box
// annotation files), sliding windows, final displacement error, and the
// method x horizon comparison report.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "uavtraj/baselines.hpp"
#include "uavtraj/camera.hpp"
#include "uavtraj/datagen.hpp"
#include "uavtraj/seqmodel.hpp"

namespace uavtraj::harness {

using camera::Pixel;

class SchemaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class EvaluationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Modality { kEO, kIR };
const char* to_string(Modality modality);

struct BoundingBox {
  double x = 0.0;
  double y = 0.0;
  double w = 0.0;
  double h = 0.0;
  Pixel center() const { return {x + 0.5 * w, y + 0.5 * h}; }
  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

struct AnnotationFrame {
  bool exists = false;
  BoundingBox box;
  friend bool operator==(const AnnotationFrame&, const AnnotationFrame&) = default;
};

struct AnnotationSequence {
  std::string id;
  Modality modality = Modality::kEO;
  int width = 1920;
  int height = 1080;
  std::vector<AnnotationFrame> frames;
  friend bool operator==(const AnnotationSequence&, const AnnotationSequence&) = default;
};

/// Field names of an annotation file. The defaults match ANTI-UAV style files:
/// {"exist": [1, 0, ...], "gt_rect": [[x, y, w, h], [], ...]}.
struct AnnotationSchema {
  std::string exist_field = "exist";
  std::string rect_field = "gt_rect";
  std::string modality = "auto";  // EO, IR, or auto (from the file name)
  int width = 0;                   // 0: modality default (EO 1920x1080, IR 640x512)
  int height = 0;
};

AnnotationSchema load_schema(const std::string& path);

AnnotationSequence parse_annotations(const std::string& text, const AnnotationSchema& schema, const std::string& id);
AnnotationSequence ingest_annotations(const std::string& path, const AnnotationSchema& schema = {});
std::string export_annotations(const AnnotationSequence& sequence, const AnnotationSchema& schema = {});

/// Per-frame observations, ground truth and validity of one sequence.
struct EvalSequence {
  std::string id;
  std::vector<Pixel> observed;
  std::vector<Pixel> truth;
  std::vector<bool> valid;
};

EvalSequence from_track(const datagen::ImageTrack& track);
EvalSequence from_annotations(const AnnotationSequence& sequence);

/// Start indices of windows of obs_len + horizon consecutive valid frames.
std::vector<std::size_t> extract_windows(const EvalSequence& sequence, int obs_len, int horizon, int stride = 1);

double fde(const Pixel& predicted_final, const Pixel& ground_truth_final);

struct FdeStats {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
  std::size_t count = 0;
};

/// Order-independent aggregate (values are sorted before compensated summation).
FdeStats aggregate(std::vector<double> errors);

class Predictor {
 public:
  virtual ~Predictor() = default;
  virtual std::string name() const = 0;
  /// Point forecasts of `horizon` steps for each observation window.
  virtual std::vector<std::vector<Pixel>> predict(std::span<const std::vector<Pixel>> windows, int horizon) const = 0;
};

class KalmanPredictor final : public Predictor {
 public:
  explicit KalmanPredictor(baselines::KalmanParams params = {}) : params_(params) {}
  std::string name() const override { return "kalman"; }
  std::vector<std::vector<Pixel>> predict(std::span<const std::vector<Pixel>> windows, int horizon) const override;

 private:
  baselines::KalmanParams params_;
};

class LinearPredictor final : public Predictor {
 public:
  explicit LinearPredictor(baselines::LinearFit fit = baselines::LinearFit::kLeastSquares) : fit_(fit) {}
  std::string name() const override { return "linear"; }
  std::vector<std::vector<Pixel>> predict(std::span<const std::vector<Pixel>> windows, int horizon) const override;

 private:
  baselines::LinearFit fit_;
};

class MdnPredictor final : public Predictor {
 public:
  explicit MdnPredictor(seqmodel::MdnModel model) : model_(std::move(model)) {}
  std::string name() const override { return "mdn"; }
  std::vector<std::vector<Pixel>> predict(std::span<const std::vector<Pixel>> windows, int horizon) const override;
  const seqmodel::MdnModel& model() const { return model_; }

 private:
  seqmodel::MdnModel model_;
};

struct ReportCell {
  std::string method;
  int horizon = 0;
  double fde_mean_px = 0.0;
  double fde_std_px = 0.0;
  std::size_t windows = 0;
};

struct EvalReport {
  std::vector<ReportCell> cells;
  std::map<std::string, std::string> metadata;

  const ReportCell& cell(const std::string& method, int horizon) const;
};

/// Every method sees the same windows (obs_len + max horizon frames); shorter
/// horizons are prefixes of the longest forecast. Windows are split across
/// `threads` workers; results do not depend on the thread count.
EvalReport evaluate(std::span<const Predictor* const> methods, std::span<const EvalSequence> sequences,
                    std::span<const int> horizons, int obs_len, int stride = 1, unsigned threads = 1);

void write_report_csv(std::ostream& out, const EvalReport& report);
EvalReport read_report_csv(std::istream& in);
/// Table with one row per method and (FDE, sigma_FDE) column pairs per horizon.
void export_table(std::ostream& out, const EvalReport& report, const std::string& format, int obs_len = 8,
                  const std::string& title = "");

}  // namespace uavtraj::harness
