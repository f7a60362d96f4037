#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "uavtraj/seqmodel.hpp"

namespace uavtraj::seqmodel {
namespace {

using Kind = SeqModelError::Kind;

const double kLogTwoPi = std::log(2.0 * std::numbers::pi);

}  // namespace

MdnModel::MdnModel(const ModelDims& dims, double coding_scale) : dims_(dims), coding_scale_(coding_scale) {
  if (dims.embedding <= 0 || dims.hidden <= 0 || dims.observed <= 0 || dims.horizon <= 0)
    throw SeqModelError(Kind::kInvalidInput, "model dimensions must be positive");
  if (!(coding_scale > 0.0) || !std::isfinite(coding_scale))
    throw SeqModelError(Kind::kInvalidInput, "coding scale must be positive");
  const int e = dims.embedding;
  const int h = dims.hidden;
  const int o = kOutputsPerStep * dims.horizon;
  const std::array<std::array<int, 2>, kTensorCount> shapes{{{e, kInputSize}, {e, 1}, {4 * h, e}, {4 * h, h},
                                                             {4 * h, 1}, {o, h}, {o, 1}}};
  const std::array<const char*, kTensorCount> names{"embedding_weight", "embedding_bias", "lstm_input_weight",
                                                    "lstm_recurrent_weight", "lstm_bias", "head_weight", "head_bias"};
  std::size_t offset = 0;
  for (std::size_t t = 0; t < kTensorCount; ++t) {
    layout_[t] = {names[t], shapes[t][0], shapes[t][1], offset};
    offset += layout_[t].size();
  }
  params_.assign(offset, 0.0);
}

MdnModel MdnModel::zeros(const ModelDims& dims, double coding_scale) { return MdnModel(dims, coding_scale); }

MdnModel MdnModel::xavier(const ModelDims& dims, std::uint64_t seed, double coding_scale) {
  MdnModel model(dims, coding_scale);
  std::mt19937_64 rng(seed);
  const auto fill = [&](Tensor t, int fan_in, int fan_out) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (double& w : model.tensor(t)) w = dist(rng);
  };
  const int h = dims.hidden;
  fill(Tensor::kEmbeddingWeight, kInputSize, dims.embedding);
  // Per-gate fan: each of the four gate blocks is an h x fan_in map.
  fill(Tensor::kInputWeight, dims.embedding, h);
  fill(Tensor::kRecurrentWeight, h, h);
  fill(Tensor::kHeadWeight, h, kOutputsPerStep * dims.horizon);
  auto gate_bias = model.tensor(Tensor::kGateBias);
  std::fill(gate_bias.begin() + h, gate_bias.begin() + 2 * h, 1.0);
  return model;
}

std::span<double> MdnModel::tensor(Tensor t) {
  const auto& i = info(t);
  return std::span<double>(params_).subspan(i.offset, i.size());
}

std::span<const double> MdnModel::tensor(Tensor t) const {
  const auto& i = info(t);
  return std::span<const double>(params_).subspan(i.offset, i.size());
}

bool MdnModel::all_finite() const {
  return std::all_of(params_.begin(), params_.end(), [](double p) { return std::isfinite(p); });
}

Eigen::Matrix2d StepGaussian::covariance() const {
  Eigen::Matrix2d cov;
  cov << sigma_u * sigma_u, rho * sigma_u * sigma_v, rho * sigma_u * sigma_v, sigma_v * sigma_v;
  return cov;
}

double step_nll(const StepGaussian& g, const Pixel& target) {
  const double zu = (target.u - g.mean.u) / g.sigma_u;
  const double zv = (target.v - g.mean.v) / g.sigma_v;
  const double one_minus = 1.0 - g.rho * g.rho;
  const double quad = zu * zu + zv * zv - 2.0 * g.rho * zu * zv;
  return kLogTwoPi + std::log(g.sigma_u) + std::log(g.sigma_v) + 0.5 * std::log(one_minus) + quad / (2.0 * one_minus);
}

double nll_loss(const GaussianForecast& forecast, std::span<const Pixel> targets) {
  if (forecast.size() != targets.size())
    throw SeqModelError(Kind::kInvalidInput, "forecast and target lengths differ");
  double loss = 0.0;
  for (std::size_t n = 0; n < forecast.size(); ++n) loss += step_nll(forecast[n], targets[n]);
  return loss;
}

}  // namespace uavtraj::seqmodel
