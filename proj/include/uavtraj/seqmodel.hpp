#pragma once

// Recurrent mixture-density predictor with a single bivariate Gaussian per
// future step:
//
//   e_t = relu(W_e x_t + b_e)              embedding of the 2D input
//   h_t = LSTM(h_{t-1}, e_t)                gates ordered i, f, g, o
//   y   = W_o h_T + b_o                     5 outputs per forecast step
//
// Inputs are coded relative to the last observed position and divided by the
// coding scale; mean outputs are offsets from the last observed position in
// units of the coding scale. sigma = exp(s) is in pixels and rho = tanh(r)
// is clamped to |rho| <= 0.999.

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "uavtraj/camera.hpp"
#include "uavtraj/datagen.hpp"

namespace uavtraj::seqmodel {

using camera::Pixel;

class SeqModelError : public std::runtime_error {
 public:
  enum class Kind { kInvalidInput, kNonFiniteActivation, kDivergedTraining, kHorizonTooLarge, kFormat };
  SeqModelError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

inline constexpr int kInputSize = 2;
inline constexpr int kOutputsPerStep = 5;
inline constexpr double kRhoLimit = 0.999;

struct ModelDims {
  int embedding = 64;
  int hidden = 64;
  int observed = 8;
  int horizon = 12;
};

enum class Tensor { kEmbeddingWeight, kEmbeddingBias, kInputWeight, kRecurrentWeight, kGateBias, kHeadWeight, kHeadBias };
inline constexpr std::size_t kTensorCount = 7;

struct TensorInfo {
  const char* name;
  int rows;
  int cols;
  std::size_t offset;
  std::size_t size() const { return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols); }
};

/// All learnable parameters in one flat vector with named row-major tensor views.
class MdnModel {
 public:
  static MdnModel zeros(const ModelDims& dims, double coding_scale = 50.0);
  /// Xavier-uniform weights, zero biases, forget-gate bias 1.
  static MdnModel xavier(const ModelDims& dims, std::uint64_t seed, double coding_scale = 50.0);

  const ModelDims& dims() const noexcept { return dims_; }
  double coding_scale() const noexcept { return coding_scale_; }

  std::span<double> parameters() noexcept { return params_; }
  std::span<const double> parameters() const noexcept { return params_; }
  std::size_t parameter_count() const noexcept { return params_.size(); }

  const TensorInfo& info(Tensor t) const { return layout_[static_cast<std::size_t>(t)]; }
  const std::array<TensorInfo, kTensorCount>& layout() const noexcept { return layout_; }
  std::span<double> tensor(Tensor t);
  std::span<const double> tensor(Tensor t) const;

  bool all_finite() const;

 private:
  MdnModel(const ModelDims& dims, double coding_scale);

  ModelDims dims_;
  double coding_scale_;
  std::array<TensorInfo, kTensorCount> layout_{};
  std::vector<double> params_;
};

struct StepGaussian {
  Pixel mean;
  double sigma_u = 1.0;
  double sigma_v = 1.0;
  double rho = 0.0;
  Eigen::Matrix2d covariance() const;
};

using GaussianForecast = std::vector<StepGaussian>;

/// Negative log-density of one bivariate Gaussian step.
double step_nll(const StepGaussian& g, const Pixel& target);
/// Sum over steps of the per-step negative log-likelihood.
double nll_loss(const GaussianForecast& forecast, std::span<const Pixel> targets);

/// Observed inputs and supervision targets of one training/evaluation window.
struct Window {
  std::vector<Pixel> observed;
  std::vector<Pixel> targets;
};

/// Batched forward/backward passes with preallocated activations.
class BatchEngine {
 public:
  BatchEngine(const ModelDims& dims, std::size_t max_batch);

  /// Summed loss over the windows. When `gradient` is non-empty it receives
  /// gradient_scale * d(summed loss)/d(parameters), accumulated in place.
  double run(const MdnModel& model, std::span<const Window* const> windows, std::span<double> gradient,
             double gradient_scale = 1.0);

  std::vector<GaussianForecast> forecast(const MdnModel& model, std::span<const std::vector<Pixel>* const> inputs);

 private:
  void forward(const MdnModel& model, std::span<const std::vector<Pixel>* const> inputs);
  StepGaussian decode(const MdnModel& model, std::size_t b, int step) const;

  ModelDims dims_;
  std::size_t max_batch_;
  std::size_t batch_ = 0;
  std::vector<Pixel> last_;
  std::vector<double> x_, pre_embed_, embed_, gates_, cell_, cell_tanh_, hidden_, out_;
  std::vector<double> d_out_, d_hidden_, d_cell_, d_gates_, d_embed_;
};

GaussianForecast forward(const MdnModel& model, std::span<const Pixel> observed);

/// Gradient of nll_loss(forward(model, observed), targets) for one window.
std::vector<double> gradients(const MdnModel& model, std::span<const Pixel> observed, std::span<const Pixel> targets);

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step = 0;
  std::vector<double> first_moment;
  std::vector<double> second_moment;
};

void adam_step(std::span<double> parameters, std::span<const double> gradient, AdamState& state, double learning_rate);

struct TrainConfig {
  int epochs = 2000;
  double learning_rate = 0.01;
  double decay_rate = 0.95;
  double decay_every_fraction = 0.1;  // decay applied after every (fraction * epochs) epochs
  std::size_t batch_size = 64;
  int observed = 8;
  int horizon = 12;
  int embedding = 64;
  int hidden = 64;
  double coding_scale = 50.0;
  bool supervise_noisy = false;
  std::uint64_t seed = 0;

  void validate() const;
};

TrainConfig train_config_from(const KeyValueFile& file);
TrainConfig load_train_config(const std::string& path);

double learning_rate_at(const TrainConfig& config, int epoch);

/// Stride-1 windows of observed + horizon frames. Inputs are the track's
/// observations (noisy when present); targets are clean unless supervise_noisy.
std::vector<Window> training_windows(const std::vector<datagen::ImageTrack>& tracks, int observed, int horizon,
                                     bool supervise_noisy = false);

struct TrainResult {
  MdnModel model;
  std::vector<double> epoch_loss;  // mean per-window NLL of each epoch
};

using EpochCallback = std::function<void(int epoch, double mean_loss)>;

TrainResult train(std::span<const Window> windows, const TrainConfig& config, const EpochCallback& on_epoch = {});
TrainResult train(const std::vector<datagen::ImageTrack>& tracks, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});

/// forward() truncated to the first `horizon` steps.
GaussianForecast predict(const MdnModel& model, std::span<const Pixel> observed, int horizon);

void save_model(std::ostream& out, const MdnModel& model, const TrainConfig& config);
MdnModel load_model(std::istream& in);

}  // namespace uavtraj::seqmodel
