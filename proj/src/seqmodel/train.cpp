#include <algorithm>
#include <cmath>
#include <istream>
#include <json.hpp>
#include <numeric>
#include <ostream>
#include <random>

#include "uavtraj/seqmodel.hpp"

namespace uavtraj::seqmodel {
namespace {

using Kind = SeqModelError::Kind;
using json = nlohmann::ordered_json;

constexpr const char* kModelFormat = "uavtraj-mdn";
constexpr int kModelVersion = 1;

json config_to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"learning_rate", c.learning_rate},
          {"decay_rate", c.decay_rate},
          {"decay_every_fraction", c.decay_every_fraction},
          {"batch_size", c.batch_size},
          {"observed", c.observed},
          {"horizon", c.horizon},
          {"embedding", c.embedding},
          {"hidden", c.hidden},
          {"coding_scale", c.coding_scale},
          {"supervise_noisy", c.supervise_noisy},
          {"seed", c.seed},
          {"initialization", "xavier-uniform, zero biases, forget-gate bias 1"},
          {"optimizer", "adam beta1=0.9 beta2=0.999 eps=1e-8"}};
}

}  // namespace

void adam_step(std::span<double> parameters, std::span<const double> gradient, AdamState& state, double learning_rate) {
  if (parameters.size() != gradient.size())
    throw SeqModelError(Kind::kInvalidInput, "parameter and gradient sizes differ");
  if (state.first_moment.empty()) {
    state.first_moment.assign(parameters.size(), 0.0);
    state.second_moment.assign(parameters.size(), 0.0);
  }
  if (state.first_moment.size() != parameters.size())
    throw SeqModelError(Kind::kInvalidInput, "optimizer state does not match the parameters");
  ++state.step;
  const double correction1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double correction2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < parameters.size(); ++i) {
    const double g = gradient[i];
    double& m = state.first_moment[i];
    double& v = state.second_moment[i];
    m = state.beta1 * m + (1.0 - state.beta1) * g;
    v = state.beta2 * v + (1.0 - state.beta2) * g * g;
    const double m_hat = m / correction1;
    const double v_hat = v / correction2;
    parameters[i] -= learning_rate * m_hat / (std::sqrt(v_hat) + state.epsilon);
  }
}

void TrainConfig::validate() const {
  const auto require = [](bool ok, const char* what) {
    if (!ok) throw SeqModelError(Kind::kInvalidInput, what);
  };
  require(epochs > 0, "epochs must be positive");
  require(learning_rate >= 0.0 && std::isfinite(learning_rate), "learning rate must be >= 0");
  require(decay_rate > 0.0 && decay_rate <= 1.0, "decay rate must be in (0, 1]");
  require(decay_every_fraction > 0.0 && decay_every_fraction <= 1.0, "decay fraction must be in (0, 1]");
  require(batch_size > 0, "batch size must be positive");
  require(observed >= 2 && horizon >= 1, "observed >= 2 and horizon >= 1 required");
  require(embedding > 0 && hidden > 0, "layer sizes must be positive");
  require(coding_scale > 0.0, "coding scale must be positive");
}

TrainConfig train_config_from(const KeyValueFile& file) {
  TrainConfig c;
  c.epochs = static_cast<int>(file.get_int("epochs", c.epochs));
  c.learning_rate = file.get_double("learning_rate", c.learning_rate);
  c.decay_rate = file.get_double("decay_rate", c.decay_rate);
  c.decay_every_fraction = file.get_double("decay_every_fraction", c.decay_every_fraction);
  c.batch_size = static_cast<std::size_t>(file.get_u64("batch_size", c.batch_size));
  c.observed = static_cast<int>(file.get_int("observed", c.observed));
  c.horizon = static_cast<int>(file.get_int("horizon", c.horizon));
  c.embedding = static_cast<int>(file.get_int("embedding", c.embedding));
  c.hidden = static_cast<int>(file.get_int("hidden", c.hidden));
  c.coding_scale = file.get_double("coding_scale", c.coding_scale);
  c.supervise_noisy = file.get_bool("supervise_noisy", c.supervise_noisy);
  c.seed = file.get_u64("seed", c.seed);
  file.reject_unknown();
  c.validate();
  return c;
}

TrainConfig load_train_config(const std::string& path) { return train_config_from(KeyValueFile::load(path)); }

double learning_rate_at(const TrainConfig& config, int epoch) {
  const int block = std::max(1, static_cast<int>(std::lround(config.decay_every_fraction * config.epochs)));
  return config.learning_rate * std::pow(config.decay_rate, epoch / block);
}

std::vector<Window> training_windows(const std::vector<datagen::ImageTrack>& tracks, int observed, int horizon,
                                     bool supervise_noisy) {
  std::vector<Window> windows;
  const std::size_t span = static_cast<std::size_t>(observed + horizon);
  for (const auto& track : tracks) {
    const auto& inputs = track.observed();
    const auto& targets = supervise_noisy ? track.observed() : track.points_px;
    if (inputs.size() < span) continue;
    for (std::size_t start = 0; start + span <= inputs.size(); ++start) {
      Window w;
      w.observed.assign(inputs.begin() + start, inputs.begin() + start + observed);
      w.targets.assign(targets.begin() + start + observed, targets.begin() + start + span);
      windows.push_back(std::move(w));
    }
  }
  return windows;
}

TrainResult train(std::span<const Window> windows, const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  if (windows.empty()) throw SeqModelError(Kind::kInvalidInput, "no training windows");
  const ModelDims dims{config.embedding, config.hidden, config.observed, config.horizon};
  TrainResult result{MdnModel::xavier(dims, config.seed, config.coding_scale), {}};
  MdnModel& model = result.model;

  BatchEngine engine(dims, config.batch_size);
  AdamState adam;
  std::vector<double> gradient(model.parameter_count());
  std::vector<std::size_t> order(windows.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 shuffle_rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<const Window*> batch;
  batch.reserve(config.batch_size);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = learning_rate_at(config, epoch);
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_loss = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      batch.clear();
      for (std::size_t i = begin; i < end; ++i) batch.push_back(&windows[order[i]]);
      std::fill(gradient.begin(), gradient.end(), 0.0);
      double loss = 0.0;
      try {
        loss = engine.run(model, batch, gradient, 1.0 / static_cast<double>(batch.size()));
      } catch (const SeqModelError& e) {
        if (e.kind() == Kind::kNonFiniteActivation)
          throw SeqModelError(Kind::kDivergedTraining, "training diverged in epoch " + std::to_string(epoch + 1));
        throw;
      }
      epoch_loss += loss;
      adam_step(model.parameters(), gradient, adam, lr);
    }
    const double mean = epoch_loss / static_cast<double>(windows.size());
    if (!std::isfinite(mean) || !model.all_finite())
      throw SeqModelError(Kind::kDivergedTraining, "training diverged in epoch " + std::to_string(epoch + 1));
    result.epoch_loss.push_back(mean);
    if (on_epoch) on_epoch(epoch, mean);
  }
  return result;
}

TrainResult train(const std::vector<datagen::ImageTrack>& tracks, const TrainConfig& config,
                  const EpochCallback& on_epoch) {
  const auto windows = training_windows(tracks, config.observed, config.horizon, config.supervise_noisy);
  return train(windows, config, on_epoch);
}

void save_model(std::ostream& out, const MdnModel& model, const TrainConfig& config) {
  json j;
  j["format"] = kModelFormat;
  j["version"] = kModelVersion;
  j["dims"] = {{"input", kInputSize},
               {"embedding", model.dims().embedding},
               {"hidden", model.dims().hidden},
               {"observed", model.dims().observed},
               {"horizon", model.dims().horizon},
               {"outputs_per_step", kOutputsPerStep}};
  j["coding"] = {{"reference", "last observed position"},
                 {"input", "(position - last observed) / coding_scale"},
                 {"mean_output", "offset from last observed position in units of coding_scale"},
                 {"sigma", "exp(output), pixels"},
                 {"rho", "tanh(output) clamped to 0.999"},
                 {"coding_scale", model.coding_scale()}};
  j["train_config"] = config_to_json(config);
  json tensors = json::object();
  for (std::size_t t = 0; t < kTensorCount; ++t) {
    const auto& info = model.layout()[t];
    const auto data = model.tensor(static_cast<Tensor>(t));
    tensors[info.name] = {{"rows", info.rows}, {"cols", info.cols}, {"data", std::vector<double>(data.begin(), data.end())}};
  }
  j["tensors"] = std::move(tensors);
  out << j.dump() << '\n';
}

MdnModel load_model(std::istream& in) {
  try {
    const json j = json::parse(in);
    if (j.at("format").get<std::string>() != kModelFormat)
      throw SeqModelError(Kind::kFormat, "not a uavtraj-mdn model file");
    if (j.at("version").get<int>() != kModelVersion)
      throw SeqModelError(Kind::kFormat, "unsupported model version");
    const auto& d = j.at("dims");
    const ModelDims dims{d.at("embedding").get<int>(), d.at("hidden").get<int>(), d.at("observed").get<int>(),
                         d.at("horizon").get<int>()};
    MdnModel model = MdnModel::zeros(dims, j.at("coding").at("coding_scale").get<double>());
    for (std::size_t t = 0; t < kTensorCount; ++t) {
      const auto& info = model.layout()[t];
      const auto& tj = j.at("tensors").at(info.name);
      if (tj.at("rows").get<int>() != info.rows || tj.at("cols").get<int>() != info.cols)
        throw SeqModelError(Kind::kFormat, std::string("tensor shape mismatch for ") + info.name);
      const auto data = tj.at("data").get<std::vector<double>>();
      if (data.size() != info.size()) throw SeqModelError(Kind::kFormat, std::string("tensor size mismatch for ") + info.name);
      std::copy(data.begin(), data.end(), model.tensor(static_cast<Tensor>(t)).begin());
    }
    if (!model.all_finite()) throw SeqModelError(Kind::kFormat, "model contains non-finite parameters");
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw SeqModelError(Kind::kFormat, std::string("malformed model file: ") + e.what());
  }
}

}  // namespace uavtraj::seqmodel
