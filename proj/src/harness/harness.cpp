#include "uavtraj/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <json.hpp>
#include <sstream>
#include <thread>

namespace uavtraj::harness {
namespace {

using json = nlohmann::json;

std::string format_fixed(double value, int digits) {
  char buffer[64];
  std::snprintf(buffer, sizeof buffer, "%.*f", digits, value);
  return buffer;
}

std::size_t line_of(const std::string& text, std::size_t byte) {
  byte = std::min(byte, text.size());
  return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(byte), '\n'));
}

Modality resolve_modality(const AnnotationSchema& schema, const std::string& id) {
  if (schema.modality == "EO") return Modality::kEO;
  if (schema.modality == "IR") return Modality::kIR;
  if (schema.modality != "auto") throw SchemaError("modality must be EO, IR or auto (got '" + schema.modality + "')");
  const std::string name = std::filesystem::path(id).filename().string();
  std::string upper(name);
  std::transform(upper.begin(), upper.end(), upper.begin(), [](unsigned char c) { return std::toupper(c); });
  return upper.find("IR") != std::string::npos ? Modality::kIR : Modality::kEO;
}

std::string display_name(const std::string& method) {
  if (method == "mdn") return "RNN-MDN";
  if (method == "kalman") return "Kalman filter (CV)";
  if (method == "linear") return "Linear interpolation";
  return method;
}

}  // namespace

const char* to_string(Modality modality) { return modality == Modality::kIR ? "IR" : "EO"; }

AnnotationSchema load_schema(const std::string& path) {
  const KeyValueFile file = KeyValueFile::load(path);
  AnnotationSchema schema;
  schema.exist_field = file.get_string("exist_field", schema.exist_field);
  schema.rect_field = file.get_string("rect_field", schema.rect_field);
  schema.modality = file.get_string("modality", schema.modality);
  schema.width = static_cast<int>(file.get_int("width", schema.width));
  schema.height = static_cast<int>(file.get_int("height", schema.height));
  file.reject_unknown();
  return schema;
}

AnnotationSequence parse_annotations(const std::string& text, const AnnotationSchema& schema, const std::string& id) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw SchemaError(id + ": line " + std::to_string(line_of(text, e.byte)) + ": invalid JSON: " + e.what());
  }
  if (!root.is_object()) throw SchemaError(id + ": top level must be an object");
  if (!root.contains(schema.rect_field)) throw SchemaError(id + ": missing field '" + schema.rect_field + "'");
  const json& rects = root.at(schema.rect_field);
  if (!rects.is_array()) throw SchemaError(id + ": field '" + schema.rect_field + "' must be an array");
  const json* exist = nullptr;
  if (root.contains(schema.exist_field)) {
    exist = &root.at(schema.exist_field);
    if (!exist->is_array() || exist->size() != rects.size())
      throw SchemaError(id + ": field '" + schema.exist_field + "' must be an array as long as '" + schema.rect_field +
                        "'");
  }

  AnnotationSequence seq;
  seq.id = id;
  seq.modality = resolve_modality(schema, id);
  seq.width = schema.width > 0 ? schema.width : (seq.modality == Modality::kIR ? 640 : 1920);
  seq.height = schema.height > 0 ? schema.height : (seq.modality == Modality::kIR ? 512 : 1080);
  seq.frames.reserve(rects.size());
  for (std::size_t i = 0; i < rects.size(); ++i) {
    const std::string where = id + ": field '" + schema.rect_field + "' frame " + std::to_string(i);
    AnnotationFrame frame;
    bool flagged = true;
    if (exist) {
      const json& flag = (*exist)[i];
      if (flag.is_boolean()) flagged = flag.get<bool>();
      else if (flag.is_number()) flagged = flag.get<double>() != 0.0;
      else throw SchemaError(id + ": field '" + schema.exist_field + "' frame " + std::to_string(i) + ": expected 0/1");
    }
    const json& r = rects[i];
    if (!r.is_array()) throw SchemaError(where + ": expected an array");
    if (flagged) {
      if (r.size() != 4) throw SchemaError(where + ": expected [x, y, w, h]");
      for (const auto& v : r)
        if (!v.is_number()) throw SchemaError(where + ": non-numeric rectangle entry");
      frame.box = {r[0].get<double>(), r[1].get<double>(), r[2].get<double>(), r[3].get<double>()};
      if (!(frame.box.w > 0.0 && frame.box.h > 0.0)) throw SchemaError(where + ": width and height must be positive");
      frame.exists = true;
    }
    seq.frames.push_back(frame);
  }
  return seq;
}

AnnotationSequence ingest_annotations(const std::string& path, const AnnotationSchema& schema) {
  std::ifstream in(path);
  if (!in) throw SchemaError("cannot open annotation file '" + path + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_annotations(buffer.str(), schema, path);
}

std::string export_annotations(const AnnotationSequence& sequence, const AnnotationSchema& schema) {
  json root;
  json exist = json::array();
  json rects = json::array();
  for (const auto& f : sequence.frames) {
    exist.push_back(f.exists ? 1 : 0);
    rects.push_back(f.exists ? json::array({f.box.x, f.box.y, f.box.w, f.box.h}) : json::array());
  }
  root[schema.exist_field] = std::move(exist);
  root[schema.rect_field] = std::move(rects);
  return root.dump();
}

EvalSequence from_track(const datagen::ImageTrack& track) {
  EvalSequence seq;
  seq.id = "track-" + std::to_string(track.id);
  seq.observed = track.observed();
  seq.truth = track.points_px;
  seq.valid.assign(track.size(), true);
  return seq;
}

EvalSequence from_annotations(const AnnotationSequence& sequence) {
  EvalSequence seq;
  seq.id = sequence.id;
  for (const auto& f : sequence.frames) {
    const Pixel c = f.exists ? f.box.center() : Pixel{};
    seq.observed.push_back(c);
    seq.truth.push_back(c);
    seq.valid.push_back(f.exists);
  }
  return seq;
}

std::vector<std::size_t> extract_windows(const EvalSequence& sequence, int obs_len, int horizon, int stride) {
  if (obs_len < 1 || horizon < 1 || stride < 1) throw EvaluationError("window lengths and stride must be positive");
  const std::size_t span = static_cast<std::size_t>(obs_len + horizon);
  const std::size_t n = sequence.valid.size();
  std::vector<std::size_t> starts;
  if (n < span) return starts;
  // run[i]: consecutive valid frames starting at i.
  std::vector<std::size_t> run(n + 1, 0);
  for (std::size_t i = n; i-- > 0;) run[i] = sequence.valid[i] ? run[i + 1] + 1 : 0;
  for (std::size_t start = 0; start + span <= n; start += static_cast<std::size_t>(stride))
    if (run[start] >= span) starts.push_back(start);
  return starts;
}

double fde(const Pixel& predicted_final, const Pixel& ground_truth_final) {
  return std::hypot(predicted_final.u - ground_truth_final.u, predicted_final.v - ground_truth_final.v);
}

FdeStats aggregate(std::vector<double> errors) {
  FdeStats stats;
  stats.count = errors.size();
  if (errors.empty()) return stats;
  std::sort(errors.begin(), errors.end());
  const auto kahan_mean = [&](auto&& term) {
    double sum = 0.0;
    double carry = 0.0;
    for (const double e : errors) {
      const double y = term(e) - carry;
      const double t = sum + y;
      carry = (t - sum) - y;
      sum = t;
    }
    return sum / static_cast<double>(errors.size());
  };
  stats.mean = kahan_mean([](double e) { return e; });
  const double mean = stats.mean;
  stats.std = std::sqrt(kahan_mean([mean](double e) { return (e - mean) * (e - mean); }));
  return stats;
}

std::vector<std::vector<Pixel>> KalmanPredictor::predict(std::span<const std::vector<Pixel>> windows,
                                                         int horizon) const {
  std::vector<std::vector<Pixel>> out;
  out.reserve(windows.size());
  for (const auto& w : windows) out.push_back(baselines::kalman_forecast(baselines::kalman_filter(w, params_), horizon).means);
  return out;
}

std::vector<std::vector<Pixel>> LinearPredictor::predict(std::span<const std::vector<Pixel>> windows,
                                                         int horizon) const {
  std::vector<std::vector<Pixel>> out;
  out.reserve(windows.size());
  for (const auto& w : windows) out.push_back(baselines::linear_forecast(w, horizon, fit_));
  return out;
}

std::vector<std::vector<Pixel>> MdnPredictor::predict(std::span<const std::vector<Pixel>> windows, int horizon) const {
  // One window per pass so each forecast is independent of its batch neighbours.
  seqmodel::BatchEngine engine(model_.dims(), 1);
  if (horizon < 1 || horizon > model_.dims().horizon)
    throw seqmodel::SeqModelError(seqmodel::SeqModelError::Kind::kHorizonTooLarge, "horizon exceeds model horizon");
  std::vector<std::vector<Pixel>> out;
  out.reserve(windows.size());
  for (const auto& w : windows) {
    const std::vector<Pixel>* input = &w;
    const auto forecast = engine.forecast(model_, std::span<const std::vector<Pixel>* const>(&input, 1)).front();
    std::vector<Pixel> means;
    for (int n = 0; n < horizon; ++n) means.push_back(forecast[static_cast<std::size_t>(n)].mean);
    out.push_back(std::move(means));
  }
  return out;
}

const ReportCell& EvalReport::cell(const std::string& method, int horizon) const {
  for (const auto& c : cells)
    if (c.method == method && c.horizon == horizon) return c;
  throw EvaluationError("no report cell for " + method + " at horizon " + std::to_string(horizon));
}

EvalReport evaluate(std::span<const Predictor* const> methods, std::span<const EvalSequence> sequences,
                    std::span<const int> horizons, int obs_len, int stride, unsigned threads) {
  if (methods.empty() || horizons.empty()) throw EvaluationError("need at least one method and one horizon");
  const int max_horizon = *std::max_element(horizons.begin(), horizons.end());
  if (*std::min_element(horizons.begin(), horizons.end()) < 1) throw EvaluationError("horizons must be positive");

  std::vector<std::vector<Pixel>> observed;
  std::vector<std::vector<Pixel>> future;
  for (const auto& seq : sequences) {
    for (const std::size_t start : extract_windows(seq, obs_len, max_horizon, stride)) {
      observed.emplace_back(seq.observed.begin() + static_cast<std::ptrdiff_t>(start),
                            seq.observed.begin() + static_cast<std::ptrdiff_t>(start + obs_len));
      future.emplace_back(seq.truth.begin() + static_cast<std::ptrdiff_t>(start + obs_len),
                          seq.truth.begin() + static_cast<std::ptrdiff_t>(start + obs_len + max_horizon));
    }
  }
  if (observed.empty()) throw EvaluationError("no evaluation windows");

  EvalReport report;
  for (const Predictor* method : methods) {
    std::vector<std::vector<Pixel>> forecasts(observed.size());
    const std::size_t workers = std::clamp<std::size_t>(threads, 1, observed.size());
    const std::size_t chunk = (observed.size() + workers - 1) / workers;
    const auto run_chunk = [&](std::size_t begin) {
      if (begin >= observed.size()) return;
      const std::size_t end = std::min(begin + chunk, observed.size());
      auto part = method->predict(std::span(observed).subspan(begin, end - begin), max_horizon);
      if (part.size() != end - begin) throw EvaluationError(method->name() + ": wrong number of forecasts");
      std::move(part.begin(), part.end(), forecasts.begin() + static_cast<std::ptrdiff_t>(begin));
    };
    if (workers == 1) {
      run_chunk(0);
    } else {
      std::vector<std::exception_ptr> failures(workers);
      std::vector<std::thread> pool;
      for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&, w] {
          try {
            run_chunk(w * chunk);
          } catch (...) {
            failures[w] = std::current_exception();
          }
        });
      for (auto& t : pool) t.join();
      for (const auto& f : failures)
        if (f) std::rethrow_exception(f);
    }
    for (const auto& f : forecasts)
      if (static_cast<int>(f.size()) < max_horizon) throw EvaluationError(method->name() + ": forecast too short");
    for (const int h : horizons) {
      std::vector<double> errors(observed.size());
      for (std::size_t w = 0; w < observed.size(); ++w)
        errors[w] = fde(forecasts[w][static_cast<std::size_t>(h - 1)], future[w][static_cast<std::size_t>(h - 1)]);
      const FdeStats stats = aggregate(std::move(errors));
      report.cells.push_back({method->name(), h, stats.mean, stats.std, stats.count});
    }
  }
  report.metadata["obs_len"] = std::to_string(obs_len);
  report.metadata["stride"] = std::to_string(stride);
  report.metadata["windows"] = std::to_string(observed.size());
  report.metadata["sequences"] = std::to_string(sequences.size());
  return report;
}

void write_report_csv(std::ostream& out, const EvalReport& report) {
  out << "method,horizon,fde_mean_px,fde_std_px,windows\n";
  for (const auto& c : report.cells)
    out << c.method << ',' << c.horizon << ',' << format_fixed(c.fde_mean_px, 6) << ',' << format_fixed(c.fde_std_px, 6)
        << ',' << c.windows << '\n';
}

EvalReport read_report_csv(std::istream& in) {
  EvalReport report;
  std::string line;
  if (!std::getline(in, line) || line != "method,horizon,fde_mean_px,fde_std_px,windows")
    throw EvaluationError("report is missing the expected CSV header");
  int number = 1;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty()) continue;
    std::istringstream fields(line);
    ReportCell cell;
    std::string horizon, mean, std_dev, windows;
    if (!std::getline(fields, cell.method, ',') || !std::getline(fields, horizon, ',') ||
        !std::getline(fields, mean, ',') || !std::getline(fields, std_dev, ',') || !std::getline(fields, windows))
      throw EvaluationError("report line " + std::to_string(number) + ": expected 5 columns");
    try {
      cell.horizon = std::stoi(horizon);
      cell.fde_mean_px = std::stod(mean);
      cell.fde_std_px = std::stod(std_dev);
      cell.windows = static_cast<std::size_t>(std::stoull(windows));
    } catch (const std::exception&) {
      throw EvaluationError("report line " + std::to_string(number) + ": malformed number");
    }
    report.cells.push_back(cell);
  }
  return report;
}

void export_table(std::ostream& out, const EvalReport& report, const std::string& format, int obs_len,
                  const std::string& title) {
  std::vector<std::string> methods;
  std::vector<int> horizons;
  for (const auto& c : report.cells) {
    if (std::find(methods.begin(), methods.end(), c.method) == methods.end()) methods.push_back(c.method);
    if (std::find(horizons.begin(), horizons.end(), c.horizon) == horizons.end()) horizons.push_back(c.horizon);
  }
  std::sort(horizons.begin(), horizons.end());
  const auto label = [obs_len](int h) { return std::to_string(obs_len) + "/" + std::to_string(h); };

  if (format == "md") {
    if (!title.empty()) out << "**" << title << "**\n\n";
    out << "| Approach |";
    for (const int h : horizons) out << ' ' << label(h) << " FDE/pixels | " << label(h) << " σ_FDE/pixels |";
    out << "\n|---|";
    for (std::size_t i = 0; i < horizons.size(); ++i) out << "---:|---:|";
    out << '\n';
    for (const auto& m : methods) {
      out << "| " << display_name(m) << " |";
      for (const int h : horizons) {
        const auto& c = report.cell(m, h);
        out << ' ' << format_fixed(c.fde_mean_px, 3) << " | " << format_fixed(c.fde_std_px, 3) << " |";
      }
      out << '\n';
    }
  } else if (format == "csv") {
    out << "approach";
    for (const int h : horizons) out << ',' << label(h) << "_fde_px," << label(h) << "_sigma_fde_px";
    out << '\n';
    for (const auto& m : methods) {
      out << display_name(m);
      for (const int h : horizons) {
        const auto& c = report.cell(m, h);
        out << ',' << format_fixed(c.fde_mean_px, 3) << ',' << format_fixed(c.fde_std_px, 3);
      }
      out << '\n';
    }
  } else {
    throw EvaluationError("unknown table format '" + format + "' (expected csv or md)");
  }
}

}  // namespace uavtraj::harness
