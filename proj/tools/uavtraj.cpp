// Command-line front end: generate, train, predict, evaluate, export-report.

#include <CLI11.hpp>
#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <memory>
#include <sstream>
#include <thread>

#include "uavtraj/baselines.hpp"
#include "uavtraj/datagen.hpp"
#include "uavtraj/harness.hpp"
#include "uavtraj/polysnap.hpp"
#include "uavtraj/seqmodel.hpp"

namespace fs = std::filesystem;
using namespace uavtraj;

namespace {

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  return out;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read '" + path + "'");
  return in;
}

std::vector<datagen::ImageTrack> read_dataset(const std::string& path) {
  auto in = open_in(path);
  return datagen::read_tracks(in);
}

seqmodel::MdnModel read_model(const std::string& path) {
  auto in = open_in(path);
  return seqmodel::load_model(in);
}

std::vector<int> parse_int_list(const std::string& text) {
  std::vector<int> values;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) values.push_back(std::stoi(item));
  return values;
}

std::vector<std::string> parse_list(const std::string& text) {
  std::vector<std::string> values;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) values.push_back(item);
  return values;
}

unsigned default_threads() { return std::max(1u, std::thread::hardware_concurrency()); }

struct GenerateArgs {
  std::string config, out, dump_rejections, dump_qp;
  std::uint64_t seed = 0;
  std::size_t count = 0;
  double noise_sigma = -1.0;
  unsigned threads = 1;
  std::uint64_t qp_attempt = 0;
};

int run_generate(const GenerateArgs& a) {
  datagen::GenConfig config = a.config.empty() ? datagen::GenConfig{} : datagen::load_config(a.config);
  config.seed = a.seed;
  if (a.count > 0) config.count = a.count;
  if (a.noise_sigma >= 0.0) config.noise_sigma_px = a.noise_sigma;

  if (!a.dump_qp.empty()) {
    auto out = open_out(a.dump_qp);
    polysnap::write_qp(out, datagen::attempt_qp(config, a.qp_attempt));
  }

  datagen::GenerateOptions options;
  options.threads = a.threads;
  options.keep_rejection_log = !a.dump_rejections.empty();
  const datagen::Dataset dataset = datagen::generate_dataset(config, options);

  {
    auto out = open_out(a.out);
    datagen::write_tracks(out, dataset.tracks);
  }
  {
    auto meta = open_out(a.out + ".meta.json");
    meta << datagen::dataset_metadata(config, dataset) << '\n';
  }
  if (!a.dump_rejections.empty()) {
    auto out = open_out(a.dump_rejections);
    for (const auto& r : dataset.rejection_log)
      out << r.attempt << '\t' << datagen::to_string(r.reason) << '\t' << r.detail << '\n';
  }
  std::cerr << "generated " << dataset.tracks.size() << " tracks from " << dataset.attempts << " attempts\n";
  return 0;
}

struct TrainArgs {
  std::string data, config, out;
  std::uint64_t seed = 0;
  bool quiet = false;
};

int run_train(const TrainArgs& a) {
  seqmodel::TrainConfig config = a.config.empty() ? seqmodel::TrainConfig{} : seqmodel::load_train_config(a.config);
  config.seed = a.seed;
  const auto tracks = read_dataset(a.data);
  const int report_every = std::max(1, config.epochs / 20);
  const auto result = seqmodel::train(tracks, config, [&](int epoch, double loss) {
    if (!a.quiet && (epoch == 0 || (epoch + 1) % report_every == 0 || epoch + 1 == config.epochs))
      std::cerr << "epoch " << epoch + 1 << "/" << config.epochs << " nll " << loss << '\n';
  });
  auto out = open_out(a.out);
  seqmodel::save_model(out, result.model, config);
  return 0;
}

struct PredictArgs {
  std::string method, in, out, model;
  int obs = 8;
  int horizon = 12;
};

int run_predict(const PredictArgs& a) {
  using json = nlohmann::ordered_json;
  const auto tracks = read_dataset(a.in);
  std::optional<seqmodel::MdnModel> model;
  if (a.method == "mdn") {
    if (a.model.empty()) throw std::runtime_error("--method mdn requires --model");
    model = read_model(a.model);
  } else if (a.method != "kalman" && a.method != "linear") {
    throw std::runtime_error("unknown method '" + a.method + "'");
  }

  auto out = open_out(a.out);
  for (const auto& track : tracks) {
    const auto seq = harness::from_track(track);
    for (const std::size_t start : harness::extract_windows(seq, a.obs, a.horizon)) {
      const std::span<const camera::Pixel> window(seq.observed.data() + start, static_cast<std::size_t>(a.obs));
      json record;
      record["track_id"] = track.id;
      record["start"] = start;
      record["method"] = a.method;
      record["obs"] = a.obs;
      record["horizon"] = a.horizon;
      json mean = json::array();
      json cov = json::array();
      if (a.method == "kalman") {
        const auto f = baselines::kalman_forecast(baselines::kalman_filter(window), a.horizon);
        for (std::size_t i = 0; i < f.means.size(); ++i) {
          mean.push_back({f.means[i].u, f.means[i].v});
          const auto& c = f.covariances[i];
          cov.push_back({c(0, 0), c(0, 1), c(1, 1)});
        }
      } else if (a.method == "linear") {
        for (const auto& p : baselines::linear_forecast(window, a.horizon)) mean.push_back({p.u, p.v});
      } else {
        for (const auto& g : seqmodel::predict(*model, window, a.horizon)) {
          mean.push_back({g.mean.u, g.mean.v});
          const auto c = g.covariance();
          cov.push_back({c(0, 0), c(0, 1), c(1, 1)});
        }
      }
      record["forecast_px"] = std::move(mean);
      if (!cov.empty()) record["covariance_px2"] = std::move(cov);
      out << record.dump() << '\n';
    }
  }
  return 0;
}

struct EvaluateArgs {
  std::string data, methods = "mdn,kalman,linear", model, horizons = "8,10,12", report, mapping, modality = "all";
  int obs = 8;
  int stride = 1;
  unsigned threads = 1;
};

std::vector<harness::EvalSequence> load_sequences(const EvaluateArgs& a, std::map<std::string, std::string>& meta) {
  std::vector<harness::EvalSequence> sequences;
  const fs::path path(a.data);
  if (fs::is_regular_file(path) && path.extension() == ".jsonl") {
    for (const auto& t : read_dataset(a.data)) sequences.push_back(harness::from_track(t));
    meta["source"] = "synthetic";
    return sequences;
  }
  const harness::AnnotationSchema schema = a.mapping.empty() ? harness::AnnotationSchema{} : harness::load_schema(a.mapping);
  std::vector<fs::path> files;
  if (fs::is_directory(path)) {
    for (const auto& e : fs::recursive_directory_iterator(path))
      if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
    std::sort(files.begin(), files.end());
  } else {
    files.push_back(path);
  }
  for (const auto& f : files) {
    const auto seq = harness::ingest_annotations(f.string(), schema);
    if (a.modality != "all" && a.modality != harness::to_string(seq.modality)) continue;
    sequences.push_back(harness::from_annotations(seq));
  }
  meta["source"] = "annotations";
  meta["modality"] = a.modality;
  return sequences;
}

int run_evaluate(const EvaluateArgs& a) {
  std::map<std::string, std::string> meta;
  const auto sequences = load_sequences(a, meta);

  std::vector<std::unique_ptr<harness::Predictor>> owned;
  for (const auto& m : parse_list(a.methods)) {
    if (m == "kalman") owned.push_back(std::make_unique<harness::KalmanPredictor>());
    else if (m == "linear") owned.push_back(std::make_unique<harness::LinearPredictor>());
    else if (m == "mdn") {
      if (a.model.empty()) throw std::runtime_error("method mdn requires --model");
      owned.push_back(std::make_unique<harness::MdnPredictor>(read_model(a.model)));
    } else {
      throw std::runtime_error("unknown method '" + m + "'");
    }
  }
  std::vector<const harness::Predictor*> methods;
  for (const auto& p : owned) methods.push_back(p.get());
  const auto horizons = parse_int_list(a.horizons);

  harness::EvalReport report = harness::evaluate(methods, sequences, horizons, a.obs, a.stride, a.threads);
  {
    auto out = open_out(a.report);
    harness::write_report_csv(out, report);
  }
  nlohmann::ordered_json sidecar;
  for (const auto& [k, v] : report.metadata) sidecar[k] = v;
  for (const auto& [k, v] : meta) sidecar[k] = v;
  sidecar["data"] = a.data;
  if (fs::is_regular_file(a.data)) {
    auto in = open_in(a.data);
    std::stringstream buffer;
    buffer << in.rdbuf();
    char hash[17];
    std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(fnv1a64(buffer.str())));
    sidecar["data_fnv1a64"] = hash;
  }
  sidecar["methods"] = a.methods;
  sidecar["model"] = a.model;
  auto meta_out = open_out(a.report + ".meta.json");
  meta_out << sidecar.dump(2) << '\n';
  harness::export_table(std::cout, report, "md", a.obs);
  return 0;
}

struct ExportArgs {
  std::string in, format = "md", title;
  int obs = 8;
};

int run_export(const ExportArgs& a) {
  auto in = open_in(a.in);
  harness::export_table(std::cout, harness::read_report_csv(in), a.format, a.obs, a.title);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Synthetic UAV image-space trajectories, predictors and evaluation"};
  app.require_subcommand(1);

  GenerateArgs gen;
  gen.threads = default_threads();
  auto* g = app.add_subcommand("generate", "Generate a synthetic track dataset (JSON lines)");
  g->add_option("--config", gen.config, "Generation config (key = value)");
  g->add_option("--seed", gen.seed, "RNG seed")->required();
  g->add_option("--count", gen.count, "Number of accepted tracks (overrides config)");
  g->add_option("--out", gen.out, "Output dataset path")->required();
  g->add_option("--noise-sigma", gen.noise_sigma, "Observation noise std in pixels (overrides config)");
  g->add_option("--dump-rejections", gen.dump_rejections, "Write per-attempt rejection reasons to this file");
  g->add_option("--threads", gen.threads, "Worker threads (output is identical for any value)");
  g->add_option("--dump-qp", gen.dump_qp, "Write Q, A, b of one attempt as text matrices");
  g->add_option("--qp-attempt", gen.qp_attempt, "Attempt index for --dump-qp");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train the LSTM mixture-density predictor");
  t->add_option("--data", tr.data, "Training dataset")->required();
  t->add_option("--config", tr.config, "Training config (key = value)");
  t->add_option("--seed", tr.seed, "RNG seed")->required();
  t->add_option("--out", tr.out, "Output model path")->required();
  t->add_flag("--quiet", tr.quiet, "Suppress per-epoch loss output");

  PredictArgs pr;
  auto* p = app.add_subcommand("predict", "Forecast every window of a dataset");
  p->add_option("--method", pr.method, "kalman, linear or mdn")->required()->check(CLI::IsMember({"kalman", "linear", "mdn"}));
  p->add_option("--obs", pr.obs, "Observed frames");
  p->add_option("--horizon", pr.horizon, "Forecast frames");
  p->add_option("--in", pr.in, "Dataset")->required();
  p->add_option("--out", pr.out, "Forecast output (JSON lines)")->required();
  p->add_option("--model", pr.model, "Model file (mdn)");

  EvaluateArgs ev;
  auto* e = app.add_subcommand("evaluate", "FDE report for methods x horizons");
  e->add_option("--data", ev.data, "Dataset (.jsonl), annotation file, or directory of annotation files")->required();
  e->add_option("--methods", ev.methods, "Comma-separated methods");
  e->add_option("--model", ev.model, "Model file (mdn)");
  e->add_option("--horizons", ev.horizons, "Comma-separated horizons");
  e->add_option("--obs", ev.obs, "Observed frames");
  e->add_option("--stride", ev.stride, "Window stride");
  e->add_option("--report", ev.report, "Report CSV path")->required();
  e->add_option("--mapping", ev.mapping, "Annotation field mapping (key = value)");
  e->add_option("--modality", ev.modality, "EO, IR or all")->check(CLI::IsMember({"EO", "IR", "all"}));
  e->add_option("--threads", ev.threads, "Worker threads");

  ExportArgs ex;
  auto* x = app.add_subcommand("export-report", "Print a report as a comparison table");
  x->add_option("--in", ex.in, "Report CSV")->required();
  x->add_option("--format", ex.format, "csv or md")->check(CLI::IsMember({"csv", "md"}));
  x->add_option("--obs", ex.obs, "Observed frames shown in column labels");
  x->add_option("--title", ex.title, "Table title (md)");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*g) return run_generate(gen);
    if (*t) return run_train(tr);
    if (*p) return run_predict(pr);
    if (*e) return run_evaluate(ev);
    if (*x) return run_export(ex);
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return 1;
  }
  return 0;
}
