#include <algorithm>
#include <cmath>
#include <numbers>

#include "uavtraj/kernels.hpp"
#include "uavtraj/seqmodel.hpp"

namespace uavtraj::seqmodel {
namespace {

using Kind = SeqModelError::Kind;

const double kLogTwoPi = std::log(2.0 * std::numbers::pi);

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Broadcast a bias column into every batch column of a rows x batch block.
void set_bias(double* out, const double* bias, int rows, std::size_t batch) {
  for (int r = 0; r < rows; ++r) std::fill_n(out + r * batch, batch, bias[r]);
}

void add_row_sums(double* out, const double* block, int rows, std::size_t batch) {
  for (int r = 0; r < rows; ++r) {
    double sum = 0.0;
    const double* row = block + r * batch;
    for (std::size_t b = 0; b < batch; ++b) sum += row[b];
    out[r] += sum;
  }
}

}  // namespace

BatchEngine::BatchEngine(const ModelDims& dims, std::size_t max_batch) : dims_(dims), max_batch_(max_batch) {
  if (max_batch == 0) throw SeqModelError(Kind::kInvalidInput, "batch capacity must be positive");
  const std::size_t t = static_cast<std::size_t>(dims.observed);
  const std::size_t e = static_cast<std::size_t>(dims.embedding);
  const std::size_t h = static_cast<std::size_t>(dims.hidden);
  const std::size_t o = static_cast<std::size_t>(kOutputsPerStep * dims.horizon);
  last_.resize(max_batch);
  x_.resize(t * kInputSize * max_batch);
  pre_embed_.resize(t * e * max_batch);
  embed_.resize(t * e * max_batch);
  gates_.resize(t * 4 * h * max_batch);
  cell_.resize((t + 1) * h * max_batch);
  cell_tanh_.resize((t + 1) * h * max_batch);
  hidden_.resize((t + 1) * h * max_batch);
  out_.resize(o * max_batch);
  d_out_.resize(o * max_batch);
  d_hidden_.resize(h * max_batch);
  d_cell_.resize(h * max_batch);
  d_gates_.resize(4 * h * max_batch);
  d_embed_.resize(e * max_batch);
}

void BatchEngine::forward(const MdnModel& model, std::span<const std::vector<Pixel>* const> inputs) {
  const auto& dims = model.dims();
  if (dims.embedding != dims_.embedding || dims.hidden != dims_.hidden || dims.observed != dims_.observed ||
      dims.horizon != dims_.horizon)
    throw SeqModelError(Kind::kInvalidInput, "model dimensions do not match the engine");
  if (inputs.empty() || inputs.size() > max_batch_)
    throw SeqModelError(Kind::kInvalidInput, "batch size out of range");
  const auto& k = kernels::active();
  const std::size_t nb = batch_ = inputs.size();
  const int steps = dims.observed;
  const int e = dims.embedding;
  const int h = dims.hidden;
  const int g = 4 * h;
  const int o = kOutputsPerStep * dims.horizon;
  const double inv_scale = 1.0 / model.coding_scale();

  const double* w_emb = model.tensor(Tensor::kEmbeddingWeight).data();
  const double* b_emb = model.tensor(Tensor::kEmbeddingBias).data();
  const double* w_in = model.tensor(Tensor::kInputWeight).data();
  const double* w_rec = model.tensor(Tensor::kRecurrentWeight).data();
  const double* b_gate = model.tensor(Tensor::kGateBias).data();
  const double* w_head = model.tensor(Tensor::kHeadWeight).data();
  const double* b_head = model.tensor(Tensor::kHeadBias).data();

  for (std::size_t b = 0; b < nb; ++b) {
    const auto& window = *inputs[b];
    if (window.size() != static_cast<std::size_t>(steps))
      throw SeqModelError(Kind::kInvalidInput, "observed window has the wrong length");
    last_[b] = window.back();
    for (int t = 0; t < steps; ++t) {
      double* xt = x_.data() + t * kInputSize * max_batch_;
      xt[b] = (window[t].u - last_[b].u) * inv_scale;
      xt[nb + b] = (window[t].v - last_[b].v) * inv_scale;
    }
  }

  std::fill_n(cell_.data(), h * nb, 0.0);
  std::fill_n(cell_tanh_.data(), h * nb, 0.0);
  std::fill_n(hidden_.data(), h * nb, 0.0);
  for (int t = 0; t < steps; ++t) {
    const double* xt = x_.data() + t * kInputSize * max_batch_;
    double* pre = pre_embed_.data() + t * e * max_batch_;
    double* emb = embed_.data() + t * e * max_batch_;
    double* gate = gates_.data() + t * g * max_batch_;
    const double* c_prev = cell_.data() + t * h * max_batch_;
    const double* h_prev = hidden_.data() + t * h * max_batch_;
    double* c_next = cell_.data() + (t + 1) * h * max_batch_;
    double* tc_next = cell_tanh_.data() + (t + 1) * h * max_batch_;
    double* h_next = hidden_.data() + (t + 1) * h * max_batch_;

    set_bias(pre, b_emb, e, nb);
    k.gemm_nn(e, nb, kInputSize, w_emb, kInputSize, xt, nb, pre, nb);
    for (std::size_t i = 0; i < e * nb; ++i) emb[i] = std::max(pre[i], 0.0);

    set_bias(gate, b_gate, g, nb);
    k.gemm_nn(g, nb, e, w_in, e, emb, nb, gate, nb);
    k.gemm_nn(g, nb, h, w_rec, h, h_prev, nb, gate, nb);

    const std::size_t block = h * nb;
    for (std::size_t i = 0; i < block; ++i) {
      const double in = sigmoid(gate[i]);
      const double forget = sigmoid(gate[block + i]);
      const double cand = std::tanh(gate[2 * block + i]);
      const double out = sigmoid(gate[3 * block + i]);
      gate[i] = in;
      gate[block + i] = forget;
      gate[2 * block + i] = cand;
      gate[3 * block + i] = out;
      c_next[i] = forget * c_prev[i] + in * cand;
      tc_next[i] = std::tanh(c_next[i]);
      h_next[i] = out * tc_next[i];
    }
  }

  const double* h_last = hidden_.data() + steps * h * max_batch_;
  set_bias(out_.data(), b_head, o, nb);
  k.gemm_nn(o, nb, h, w_head, h, h_last, nb, out_.data(), nb);
  for (std::size_t i = 0; i < o * nb; ++i) {
    if (!std::isfinite(out_[i])) throw SeqModelError(Kind::kNonFiniteActivation, "non-finite network output");
  }
}

StepGaussian BatchEngine::decode(const MdnModel& model, std::size_t b, int step) const {
  const std::size_t nb = batch_;
  const double* y = out_.data() + static_cast<std::size_t>(kOutputsPerStep * step) * nb + b;
  StepGaussian g;
  g.mean = {last_[b].u + model.coding_scale() * y[0], last_[b].v + model.coding_scale() * y[nb]};
  g.sigma_u = std::exp(y[2 * nb]);
  g.sigma_v = std::exp(y[3 * nb]);
  g.rho = std::clamp(std::tanh(y[4 * nb]), -kRhoLimit, kRhoLimit);
  return g;
}

std::vector<GaussianForecast> BatchEngine::forecast(const MdnModel& model,
                                                    std::span<const std::vector<Pixel>* const> inputs) {
  forward(model, inputs);
  std::vector<GaussianForecast> out(batch_);
  for (std::size_t b = 0; b < batch_; ++b) {
    out[b].reserve(dims_.horizon);
    for (int n = 0; n < dims_.horizon; ++n) out[b].push_back(decode(model, b, n));
  }
  return out;
}

double BatchEngine::run(const MdnModel& model, std::span<const Window* const> windows, std::span<double> gradient,
                        double gradient_scale) {
  std::vector<const std::vector<Pixel>*> inputs(windows.size());
  for (std::size_t b = 0; b < windows.size(); ++b) {
    if (windows[b]->targets.size() != static_cast<std::size_t>(dims_.horizon))
      throw SeqModelError(Kind::kInvalidInput, "target window has the wrong length");
    inputs[b] = &windows[b]->observed;
  }
  forward(model, inputs);

  const std::size_t nb = batch_;
  const int steps = dims_.observed;
  const int e = dims_.embedding;
  const int h = dims_.hidden;
  const int g = 4 * h;
  const int o = kOutputsPerStep * dims_.horizon;
  const double scale = model.coding_scale();

  double loss = 0.0;
  const bool want_gradient = !gradient.empty();
  if (want_gradient && gradient.size() != model.parameter_count())
    throw SeqModelError(Kind::kInvalidInput, "gradient buffer has the wrong size");

  for (std::size_t b = 0; b < nb; ++b) {
    for (int n = 0; n < dims_.horizon; ++n) {
      const std::size_t row = static_cast<std::size_t>(kOutputsPerStep * n);
      const double* y = out_.data() + row * nb + b;
      const Pixel& target = windows[b]->targets[n];
      const double mu_u = last_[b].u + scale * y[0];
      const double mu_v = last_[b].v + scale * y[nb];
      const double log_su = y[2 * nb];
      const double log_sv = y[3 * nb];
      const double sigma_u = std::exp(log_su);
      const double sigma_v = std::exp(log_sv);
      const double raw_rho = std::tanh(y[4 * nb]);
      const bool clamped = std::abs(raw_rho) > kRhoLimit;
      const double rho = std::clamp(raw_rho, -kRhoLimit, kRhoLimit);
      const double zu = (target.u - mu_u) / sigma_u;
      const double zv = (target.v - mu_v) / sigma_v;
      const double one_minus = 1.0 - rho * rho;
      const double quad = zu * zu + zv * zv - 2.0 * rho * zu * zv;
      loss += kLogTwoPi + log_su + log_sv + 0.5 * std::log(one_minus) + quad / (2.0 * one_minus);

      if (want_gradient) {
        double* dy = d_out_.data() + row * nb + b;
        dy[0] = gradient_scale * scale * (-(zu - rho * zv) / (one_minus * sigma_u));
        dy[nb] = gradient_scale * scale * (-(zv - rho * zu) / (one_minus * sigma_v));
        dy[2 * nb] = gradient_scale * (1.0 - zu * (zu - rho * zv) / one_minus);
        dy[3 * nb] = gradient_scale * (1.0 - zv * (zv - rho * zu) / one_minus);
        const double d_rho = -rho / one_minus - zu * zv / one_minus + rho * quad / (one_minus * one_minus);
        dy[4 * nb] = clamped ? 0.0 : gradient_scale * d_rho * (1.0 - raw_rho * raw_rho);
      }
    }
  }
  if (!std::isfinite(loss)) throw SeqModelError(Kind::kNonFiniteActivation, "non-finite loss");
  if (!want_gradient) return loss;

  const auto& k = kernels::active();
  const auto grad_of = [&](Tensor t) { return gradient.data() + model.info(t).offset; };
  const double* w_in = model.tensor(Tensor::kInputWeight).data();
  const double* w_rec = model.tensor(Tensor::kRecurrentWeight).data();
  const double* w_head = model.tensor(Tensor::kHeadWeight).data();

  // Head.
  const double* h_last = hidden_.data() + steps * h * max_batch_;
  k.gemm_nt(o, h, nb, d_out_.data(), nb, h_last, nb, grad_of(Tensor::kHeadWeight), h);
  add_row_sums(grad_of(Tensor::kHeadBias), d_out_.data(), o, nb);
  std::fill_n(d_hidden_.data(), h * nb, 0.0);
  k.gemm_tn(h, nb, o, w_head, h, d_out_.data(), nb, d_hidden_.data(), nb);
  std::fill_n(d_cell_.data(), h * nb, 0.0);

  // Backpropagation through time.
  const std::size_t block = h * nb;
  for (int t = steps - 1; t >= 0; --t) {
    const double* gate = gates_.data() + t * g * max_batch_;
    const double* c_prev = cell_.data() + t * h * max_batch_;
    const double* tc = cell_tanh_.data() + (t + 1) * h * max_batch_;
    for (std::size_t i = 0; i < block; ++i) {
      const double in = gate[i];
      const double forget = gate[block + i];
      const double cand = gate[2 * block + i];
      const double out = gate[3 * block + i];
      const double dh = d_hidden_[i];
      const double dc = d_cell_[i] + dh * out * (1.0 - tc[i] * tc[i]);
      d_gates_[i] = dc * cand * in * (1.0 - in);
      d_gates_[block + i] = dc * c_prev[i] * forget * (1.0 - forget);
      d_gates_[2 * block + i] = dc * in * (1.0 - cand * cand);
      d_gates_[3 * block + i] = dh * tc[i] * out * (1.0 - out);
      d_cell_[i] = dc * forget;
    }

    const double* emb = embed_.data() + t * e * max_batch_;
    const double* h_prev = hidden_.data() + t * h * max_batch_;
    k.gemm_nt(g, e, nb, d_gates_.data(), nb, emb, nb, grad_of(Tensor::kInputWeight), e);
    if (t > 0) k.gemm_nt(g, h, nb, d_gates_.data(), nb, h_prev, nb, grad_of(Tensor::kRecurrentWeight), h);
    add_row_sums(grad_of(Tensor::kGateBias), d_gates_.data(), g, nb);

    std::fill_n(d_embed_.data(), e * nb, 0.0);
    k.gemm_tn(e, nb, g, w_in, e, d_gates_.data(), nb, d_embed_.data(), nb);
    if (t > 0) {
      std::fill_n(d_hidden_.data(), h * nb, 0.0);
      k.gemm_tn(h, nb, g, w_rec, h, d_gates_.data(), nb, d_hidden_.data(), nb);
    }

    const double* pre = pre_embed_.data() + t * e * max_batch_;
    for (std::size_t i = 0; i < e * nb; ++i) d_embed_[i] = pre[i] > 0.0 ? d_embed_[i] : 0.0;
    const double* xt = x_.data() + t * kInputSize * max_batch_;
    k.gemm_nt(e, kInputSize, nb, d_embed_.data(), nb, xt, nb, grad_of(Tensor::kEmbeddingWeight), kInputSize);
    add_row_sums(grad_of(Tensor::kEmbeddingBias), d_embed_.data(), e, nb);
  }
  return loss;
}

GaussianForecast forward(const MdnModel& model, std::span<const Pixel> observed) {
  BatchEngine engine(model.dims(), 1);
  const std::vector<Pixel> window(observed.begin(), observed.end());
  const std::vector<Pixel>* input = &window;
  return engine.forecast(model, std::span<const std::vector<Pixel>* const>(&input, 1)).front();
}

std::vector<double> gradients(const MdnModel& model, std::span<const Pixel> observed, std::span<const Pixel> targets) {
  BatchEngine engine(model.dims(), 1);
  const Window window{{observed.begin(), observed.end()}, {targets.begin(), targets.end()}};
  const Window* ptr = &window;
  std::vector<double> grad(model.parameter_count(), 0.0);
  engine.run(model, std::span<const Window* const>(&ptr, 1), grad, 1.0);
  return grad;
}

GaussianForecast predict(const MdnModel& model, std::span<const Pixel> observed, int horizon) {
  if (horizon < 1 || horizon > model.dims().horizon)
    throw SeqModelError(Kind::kHorizonTooLarge, "horizon " + std::to_string(horizon) + " exceeds the model's " +
                                                    std::to_string(model.dims().horizon) + " steps");
  GaussianForecast forecast = forward(model, observed);
  forecast.resize(static_cast<std::size_t>(horizon));
  return forecast;
}

}  // namespace uavtraj::seqmodel
