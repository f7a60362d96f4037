#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "uavtraj/harness.hpp"

using namespace uavtraj;
using namespace uavtraj::harness;
using doctest::Approx;

namespace {

EvalSequence line_sequence(std::size_t n, double u0 = 10.0, double du = 3.0, double dv = -1.0) {
  EvalSequence s;
  s.id = "line";
  for (std::size_t t = 0; t < n; ++t) {
    const Pixel p{u0 + du * static_cast<double>(t), 100.0 + dv * static_cast<double>(t)};
    s.observed.push_back(p);
    s.truth.push_back(p);
    s.valid.push_back(true);
  }
  return s;
}

// Echoes the ground-truth future of each window, looked up by its last observation.
class EchoPredictor final : public Predictor {
 public:
  explicit EchoPredictor(std::span<const EvalSequence> sequences) {
    for (const auto& s : sequences)
      for (std::size_t i = 0; i < s.truth.size(); ++i)
        futures_[{s.observed[i].u, s.observed[i].v}] = {s.truth.begin() + static_cast<std::ptrdiff_t>(i + 1), s.truth.end()};
  }
  std::string name() const override { return "echo"; }
  std::vector<std::vector<Pixel>> predict(std::span<const std::vector<Pixel>> windows, int horizon) const override {
    std::vector<std::vector<Pixel>> out;
    for (const auto& w : windows) {
      const auto& f = futures_.at({w.back().u, w.back().v});
      out.emplace_back(f.begin(), f.begin() + horizon);
    }
    return out;
  }

 private:
  std::map<std::pair<double, double>, std::vector<Pixel>> futures_;
};

std::vector<EvalSequence> random_sequences(std::uint64_t seed, int count) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> len(15, 60);
  std::normal_distribution<double> noise(0.0, 1.5);
  std::uniform_real_distribution<double> v(-10.0, 10.0), a(-0.5, 0.5);
  std::vector<EvalSequence> out;
  for (int k = 0; k < count; ++k) {
    EvalSequence s;
    s.id = "seq" + std::to_string(k);
    double u = 500.0, w = 300.0, vu = v(rng), vv = v(rng);
    const double au = a(rng), av = a(rng);
    const std::size_t n = len(rng);
    for (std::size_t t = 0; t < n; ++t) {
      s.truth.push_back({u, w});
      s.observed.push_back({u + noise(rng), w + noise(rng)});
      s.valid.push_back(true);
      u += vu;
      w += vv;
      vu += au;
      vv += av;
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::string report_text(const EvalReport& r) {
  std::ostringstream out;
  write_report_csv(out, r);
  return out.str();
}

}  // namespace

TEST_CASE("window counts") {
  CHECK(extract_windows(line_sequence(20), 8, 12).size() == 1);
  CHECK(extract_windows(line_sequence(19), 8, 12).empty());
  CHECK(extract_windows(line_sequence(22), 8, 12).size() == 3);
  CHECK(extract_windows(line_sequence(22), 8, 12, 2).size() == 2);
  CHECK_THROWS_AS(extract_windows(line_sequence(22), 0, 12), EvaluationError);
}

TEST_CASE("windows never overlap invalid frames") {
  EvalSequence s = line_sequence(45);
  s.valid[22] = false;
  const auto starts = extract_windows(s, 8, 12);
  // Valid runs: [0, 21] (22 frames, 3 windows) and [23, 44] (22 frames, 3 windows).
  CHECK(starts == std::vector<std::size_t>{0, 1, 2, 23, 24, 25});
}

TEST_CASE("FDE and aggregation") {
  CHECK(fde({1.0, 1.0}, {1.0, 1.0}) == 0.0);
  CHECK(fde({0.0, 0.0}, {3.0, 4.0}) == 5.0);
  const FdeStats s = aggregate({1.0, 2.0, 3.0, 4.0});
  CHECK(s.mean == 2.5);
  CHECK(s.std == Approx(std::sqrt(1.25)));
  CHECK(s.count == 4);
  std::vector<double> big(1000);
  std::iota(big.begin(), big.end(), 0.0);
  std::vector<double> shuffled = big;
  std::shuffle(shuffled.begin(), shuffled.end(), std::mt19937_64(1));
  CHECK(aggregate(big).mean == aggregate(shuffled).mean);
  CHECK(aggregate(big).std == aggregate(shuffled).std);
}

TEST_CASE("exact constant-velocity track: baselines are nearly exact") {
  const std::vector<EvalSequence> seqs{line_sequence(40)};
  KalmanPredictor kalman;
  LinearPredictor linear;
  const std::vector<const Predictor*> methods{&kalman, &linear};
  const std::vector<int> horizons{8, 10, 12};
  const auto report = evaluate(methods, seqs, horizons, 8);
  REQUIRE(report.cells.size() == 6);
  for (const auto& c : report.cells) {
    CHECK(c.fde_mean_px < 0.1);
    CHECK(c.windows == 40 - 20 + 1);
  }
}

TEST_CASE("an echo of the ground truth scores exactly zero") {
  const auto seqs = random_sequences(3, 20);
  EchoPredictor echo(seqs);
  const std::vector<const Predictor*> methods{&echo};
  const std::vector<int> horizons{8, 10, 12};
  const auto report = evaluate(methods, seqs, horizons, 8);
  for (const auto& c : report.cells) {
    CHECK(c.fde_mean_px == 0.0);
    CHECK(c.fde_std_px == 0.0);
  }
}

TEST_CASE("report: window accounting, order invariance, determinism, thread independence") {
  auto seqs = random_sequences(5, 30);
  KalmanPredictor kalman;
  LinearPredictor linear;
  const std::vector<const Predictor*> methods{&kalman, &linear};
  const std::vector<int> horizons{8, 10, 12};
  const auto report = evaluate(methods, seqs, horizons, 8);

  std::size_t expected = 0;
  for (const auto& s : seqs) expected += extract_windows(s, 8, 12).size();
  for (const auto& c : report.cells) CHECK(c.windows == expected);
  // Horizons 8 and 10 are scored on the same windows as 12.
  CHECK(report.cell("kalman", 8).windows == report.cell("kalman", 12).windows);

  const std::string text = report_text(report);
  CHECK(report_text(evaluate(methods, seqs, horizons, 8)) == text);
  CHECK(report_text(evaluate(methods, seqs, horizons, 8, 1, 3)) == text);
  std::reverse(seqs.begin(), seqs.end());
  CHECK(report_text(evaluate(methods, seqs, horizons, 8)) == text);

  // Kalman vs linear per cell on noisy data with mild acceleration.
  for (int h : horizons) CHECK(report.cell("kalman", h).fde_std_px >= 0.0);
}

TEST_CASE("empty evaluation is an error") {
  KalmanPredictor kalman;
  const std::vector<const Predictor*> methods{&kalman};
  const std::vector<int> horizons{12};
  const std::vector<EvalSequence> seqs{line_sequence(10)};
  CHECK_THROWS_AS(evaluate(methods, seqs, horizons, 8), EvaluationError);
}

TEST_CASE("MDN predictor forecasts are independent of batch composition") {
  const seqmodel::MdnModel m = seqmodel::MdnModel::xavier({16, 16, 8, 12}, 3);
  MdnPredictor mdn(m);
  const auto seqs = random_sequences(6, 5);
  std::vector<std::vector<Pixel>> windows;
  for (const auto& s : seqs) windows.emplace_back(s.observed.begin(), s.observed.begin() + 8);
  const auto all = mdn.predict(windows, 12);
  const auto one = mdn.predict(std::span(windows).subspan(2, 1), 10);
  REQUIRE(one.front().size() == 10);
  for (std::size_t n = 0; n < 10; ++n) CHECK(one.front()[n] == all[2][n]);
  CHECK_THROWS(mdn.predict(windows, 13));
}

TEST_CASE("report CSV round trip and table export") {
  EvalReport r;
  r.cells = {{"mdn", 8, 60.304, 1.5, 10}, {"kalman", 8, 81.061, 2.0, 10}, {"linear", 8, 86.998, 2.5, 10},
             {"mdn", 12, 121.453, 3.0, 10}, {"kalman", 12, 130.0, 3.5, 10}, {"linear", 12, 140.0, 4.0, 10}};
  std::stringstream csv;
  write_report_csv(csv, r);
  CHECK(csv.str().rfind("method,horizon,fde_mean_px,fde_std_px,windows\n", 0) == 0);
  const EvalReport back = read_report_csv(csv);
  REQUIRE(back.cells.size() == 6);
  CHECK(back.cell("mdn", 12).fde_mean_px == 121.453);
  CHECK(report_text(back) == report_text(r));

  std::ostringstream md;
  export_table(md, back, "md", 8, "EO");
  const std::string t = md.str();
  CHECK(t.find("| Approach | 8/8 FDE/pixels | 8/8 σ_FDE/pixels | 8/12 FDE/pixels |") != std::string::npos);
  CHECK(t.find("| RNN-MDN | 60.304 | 1.500 | 121.453 | 3.000 |") != std::string::npos);
  CHECK(t.find("Kalman filter (CV)") < t.find("Linear interpolation"));
  std::ostringstream c;
  export_table(c, back, "csv");
  CHECK(c.str().find("approach,8/8_fde_px,8/8_sigma_fde_px,8/12_fde_px,8/12_sigma_fde_px\n") == 0);
  CHECK_THROWS_AS(export_table(c, back, "xlsx"), EvaluationError);
  std::istringstream bad("method,horizon\n");
  CHECK_THROWS_AS(read_report_csv(bad), EvaluationError);
}

TEST_CASE("annotation ingestion: centers, absent frames, round trip") {
  const std::string text = R"({"exist": [1, 0, 1], "gt_rect": [[10, 20, 30, 40], [], [0, 0, 2, 2]]})";
  const AnnotationSequence s = parse_annotations(text, {}, "data/seq01/IR_label.json");
  REQUIRE(s.frames.size() == 3);
  CHECK(s.modality == Modality::kIR);
  CHECK(s.width == 640);
  CHECK(s.height == 512);
  CHECK(s.frames[0].box.center() == Pixel{25.0, 40.0});
  CHECK_FALSE(s.frames[1].exists);
  const EvalSequence e = from_annotations(s);
  CHECK(e.valid == std::vector<bool>{true, false, true});

  const AnnotationSequence again = parse_annotations(export_annotations(s), {}, s.id);
  CHECK(again == s);

  const AnnotationSequence eo = parse_annotations(text, {}, "data/seq01/visible.json");
  CHECK(eo.modality == Modality::kEO);
  CHECK(eo.width == 1920);
}

TEST_CASE("annotation schema mapping and diagnostics") {
  AnnotationSchema schema;
  schema.exist_field = "present";
  schema.rect_field = "boxes";
  schema.modality = "EO";
  const auto s = parse_annotations(R"({"present": [true], "boxes": [[1, 2, 3, 4]]})", schema, "x");
  CHECK(s.frames[0].box == BoundingBox{1, 2, 3, 4});
  CHECK(parse_annotations(R"({"boxes": [[1, 2, 3, 4]]})", schema, "x").frames[0].exists);

  const auto message = [](const std::string& text) {
    try {
      parse_annotations(text, {}, "f.json");
    } catch (const SchemaError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  CHECK(message("{\n\"exist\": [1],\n\"gt_rect\": [[1, 2, 3,]]\n}").find("line 3") != std::string::npos);
  CHECK(message(R"({"exist": [1]})").find("gt_rect") != std::string::npos);
  CHECK(message(R"({"exist": [1], "gt_rect": [[1, 2, 0, 4]]})").find("frame 0") != std::string::npos);
  CHECK(message(R"({"exist": [1, 1], "gt_rect": [[1, 2, 3, 4]]})").find("exist") != std::string::npos);
  CHECK(message(R"({"exist": [1], "gt_rect": [[1, 2, 3]]})").find("[x, y, w, h]") != std::string::npos);
}

TEST_CASE("schema mapping file and ingestion from disk") {
  const auto dir = std::filesystem::temp_directory_path() / "uavtraj_harness_test";
  std::filesystem::create_directories(dir);
  {
    std::ofstream m(dir / "map.cfg");
    m << "exist_field = e\nrect_field = r\nmodality = IR\n";
    std::ofstream a(dir / "seq.json");
    a << R"({"e": [1, 1], "r": [[0, 0, 4, 4], [2, 2, 4, 4]]})";
  }
  const AnnotationSchema schema = load_schema((dir / "map.cfg").string());
  CHECK(schema.rect_field == "r");
  const AnnotationSequence s = ingest_annotations((dir / "seq.json").string(), schema);
  CHECK(s.frames[1].box.center() == Pixel{4.0, 4.0});
  CHECK(s.modality == Modality::kIR);
  CHECK_THROWS_AS(ingest_annotations((dir / "missing.json").string()), SchemaError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("from_track uses noisy observations and clean truth") {
  datagen::ImageTrack t;
  t.id = 4;
  t.points_px = {{1, 1}, {2, 2}};
  t.noisy_px = {{1.5, 1}, {2.5, 2}};
  const EvalSequence e = from_track(t);
  CHECK(e.observed[0].u == 1.5);
  CHECK(e.truth[0].u == 1.0);
  CHECK(e.id == "track-4");
}
