#pragma once

// Dense network engine: residual MLP encoder with hand-written backward pass,
// softmax cross-entropy, AdamW and the multi-step learning-rate schedule.

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sngp/error.hpp"
#include "sngp/matrix.hpp"
#include "sngp/rng.hpp"

namespace sngp {

enum class Activation { relu, identity };

struct DenseLayer {
  Matrix weight;  // out x in
  std::vector<double> bias;
  Activation activation = Activation::identity;

  std::size_t in_dim() const noexcept { return weight.cols(); }
  std::size_t out_dim() const noexcept { return weight.rows(); }

  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

/// h <- h + dropout(relu(W h + b)); W is square.
struct ResidualBlock {
  DenseLayer inner;
  friend bool operator==(const ResidualBlock&, const ResidualBlock&) = default;
};

struct EncoderConfig {
  std::size_t input_dim = 2;
  std::size_t hidden_dim = 128;
  std::size_t n_residual_blocks = 3;
  double dropout_rate = 0.0;
  bool spectral_norm = false;
  double spectral_bound = 0.95;
  int power_iterations = 1;
  int final_power_iterations = 20;

  void validate() const {
    if (input_dim == 0 || hidden_dim == 0) throw InvalidArgument("EncoderConfig: dimensions must be positive");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw InvalidArgument("EncoderConfig: dropout_rate must be in [0, 1)");
    if (!(spectral_bound > 0.0)) throw InvalidArgument("EncoderConfig: spectral_bound must be > 0");
    if (power_iterations < 1 || final_power_iterations < 1)
      throw InvalidArgument("EncoderConfig: power iteration counts must be >= 1");
  }

  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

struct Encoder {
  EncoderConfig config;
  DenseLayer input;  // identity activation
  std::vector<ResidualBlock> blocks;

  friend bool operator==(const Encoder&, const Encoder&) = default;
};

namespace detail {
inline DenseLayer init_dense(std::size_t out, std::size_t in, Activation act, Rng& rng) {
  DenseLayer l{Matrix(out, in), std::vector<double>(out, 0.0), act};
  // He-normal for relu layers, Glorot-normal for linear ones.
  const double stddev = act == Activation::relu ? std::sqrt(2.0 / static_cast<double>(in))
                                                : std::sqrt(2.0 / static_cast<double>(in + out));
  for (double& w : l.weight.values()) w = stddev * rng.normal();
  return l;
}

inline Matrix affine(const DenseLayer& l, const Matrix& x) {
  if (x.cols() != l.in_dim())
    throw InvalidArgument("dense layer expects " + std::to_string(l.in_dim()) + " inputs, got " +
                          std::to_string(x.cols()));
  Matrix z = matmul_nt(x, l.weight);
  add_row_vector(z, l.bias);
  return z;
}
}  // namespace detail

inline DenseLayer make_dense(std::size_t out, std::size_t in, Activation act, Rng& rng) {
  return detail::init_dense(out, in, act, rng);
}

inline Encoder make_encoder(const EncoderConfig& cfg, Rng& rng) {
  cfg.validate();
  Encoder enc;
  enc.config = cfg;
  enc.input = detail::init_dense(cfg.hidden_dim, cfg.input_dim, Activation::identity, rng);
  for (std::size_t b = 0; b < cfg.n_residual_blocks; ++b)
    enc.blocks.push_back({detail::init_dense(cfg.hidden_dim, cfg.hidden_dim, Activation::relu, rng)});
  return enc;
}

struct EncoderCache {
  Matrix input;
  std::vector<Matrix> block_inputs;
  std::vector<Matrix> pre_activations;
  std::vector<Matrix> masks;  // empty when dropout was inactive
};

struct EncoderOutput {
  Matrix hidden;
  EncoderCache cache;
};

/// Input projection followed by the residual blocks. With `dropout_active` and
/// a positive rate each block's branch is multiplied by an inverted-dropout mask
/// (entries 0 or 1/(1-p)) drawn from `rng`.
inline EncoderOutput encoder_forward(const Encoder& enc, const Matrix& x, bool dropout_active, Rng* rng) {
  const double p = enc.config.dropout_rate;
  const bool use_dropout = dropout_active && p > 0.0;
  if (use_dropout && rng == nullptr) throw InvalidArgument("encoder_forward: dropout requires an rng");

  EncoderOutput out;
  out.cache.input = x;
  Matrix h = detail::affine(enc.input, x);
  const double keep_scale = 1.0 / (1.0 - p);
  for (const auto& block : enc.blocks) {
    Matrix z = detail::affine(block.inner, h);
    Matrix mask;
    if (use_dropout) {
      mask = Matrix(z.rows(), z.cols());
      for (double& m : mask.values()) m = rng->uniform() >= p ? keep_scale : 0.0;
    }
    out.cache.block_inputs.push_back(h);
    for (std::size_t i = 0; i < z.size(); ++i) {
      double a = z.values()[i] > 0.0 ? z.values()[i] : 0.0;
      if (use_dropout) a *= mask.values()[i];
      h.values()[i] += a;
    }
    out.cache.pre_activations.push_back(std::move(z));
    if (use_dropout) out.cache.masks.push_back(std::move(mask));
  }
  out.hidden = std::move(h);
  return out;
}

/// Deterministic encoding (dropout off, no cache).
inline Matrix encode(const Encoder& enc, const Matrix& x) {
  Matrix h = detail::affine(enc.input, x);
  for (const auto& block : enc.blocks) {
    const Matrix z = detail::affine(block.inner, h);
    for (std::size_t i = 0; i < z.size(); ++i)
      if (z.values()[i] > 0.0) h.values()[i] += z.values()[i];
  }
  return h;
}

struct DenseGrad {
  Matrix weight;
  std::vector<double> bias;
};

struct EncoderGrad {
  DenseGrad input;
  std::vector<DenseGrad> blocks;
};

inline EncoderGrad encoder_backward(const Encoder& enc, const EncoderCache& cache, Matrix d_hidden) {
  EncoderGrad g;
  g.blocks.resize(enc.blocks.size());
  const bool masked = !cache.masks.empty();
  for (std::size_t b = enc.blocks.size(); b-- > 0;) {
    const Matrix& z = cache.pre_activations[b];
    Matrix dz = d_hidden;
    for (std::size_t i = 0; i < dz.size(); ++i) {
      double v = z.values()[i] > 0.0 ? dz.values()[i] : 0.0;
      if (masked) v *= cache.masks[b].values()[i];
      dz.values()[i] = v;
    }
    g.blocks[b].weight = matmul_tn(dz, cache.block_inputs[b]);
    g.blocks[b].bias = column_sums(dz);
    const Matrix back = matmul(dz, enc.blocks[b].inner.weight);
    for (std::size_t i = 0; i < d_hidden.size(); ++i) d_hidden.values()[i] += back.values()[i];
  }
  g.input.weight = matmul_tn(d_hidden, cache.input);
  g.input.bias = column_sums(d_hidden);
  return g;
}

// ------------------------------------------------------------- loss / softmax

inline Matrix softmax_rows(const Matrix& logits) {
  Matrix p(logits.rows(), logits.cols());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const auto z = logits.row(i);
    auto out = p.row(i);
    double m = -std::numeric_limits<double>::infinity();
    for (double v : z) m = std::max(m, v);
    double s = 0.0;
    for (std::size_t k = 0; k < z.size(); ++k) s += (out[k] = std::exp(z[k] - m));
    for (double& v : out) v /= s;
  }
  return p;
}

struct LossResult {
  double loss = 0.0;
  Matrix dlogits;
};

/// Mean negative log-softmax of the true class; gradient is (softmax - onehot)/n.
inline LossResult cross_entropy(const Matrix& logits, std::span<const int> labels) {
  const std::size_t n = logits.rows();
  const std::size_t k = logits.cols();
  if (k < 2) throw InvalidArgument("cross_entropy: need at least 2 classes");
  if (labels.size() != n) throw InvalidArgument("cross_entropy: label count does not match logits rows");
  LossResult r{0.0, Matrix(n, k)};
  for (std::size_t i = 0; i < n; ++i) {
    const auto z = logits.row(i);
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= k) throw InvalidArgument("cross_entropy: label out of range");
    std::size_t top = 0;
    for (std::size_t c = 1; c < k; ++c)
      if (z[c] > z[top]) top = c;
    double rest = 0.0;
    for (std::size_t c = 0; c < k; ++c)
      if (c != top) rest += std::exp(z[c] - z[top]);
    r.loss += (z[top] - z[static_cast<std::size_t>(y)]) + std::log1p(rest);
    const double denom = 1.0 + rest;
    auto d = r.dlogits.row(i);
    for (std::size_t c = 0; c < k; ++c) {
      const double prob = (c == top ? 1.0 : std::exp(z[c] - z[top])) / denom;
      d[c] = (prob - (c == static_cast<std::size_t>(y) ? 1.0 : 0.0)) / static_cast<double>(n);
    }
  }
  r.loss /= static_cast<double>(n);
  return r;
}

// ------------------------------------------------------------------ optimizer

struct OptimizerState {
  std::size_t step_count = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// AdamW: decoupled decay p <- p(1 - lr*wd), then the bias-corrected Adam step.
inline void optimizer_step(std::span<const std::span<double>> params, std::span<const std::span<const double>> grads,
                           OptimizerState& st) {
  if (params.size() != grads.size()) throw InvalidArgument("optimizer_step: parameter/gradient count mismatch");
  if (st.first_moment.empty()) {
    for (const auto& p : params) {
      st.first_moment.emplace_back(p.size(), 0.0);
      st.second_moment.emplace_back(p.size(), 0.0);
    }
  }
  if (st.first_moment.size() != params.size()) throw InvalidArgument("optimizer_step: state shaped for other parameters");
  for (std::size_t t = 0; t < params.size(); ++t) {
    if (params[t].size() != grads[t].size() || st.first_moment[t].size() != params[t].size())
      throw InvalidArgument("optimizer_step: tensor " + std::to_string(t) + " shape mismatch");
    for (double g : grads[t])
      if (!std::isfinite(g)) throw TrainingError("optimizer_step: non-finite gradient in tensor " + std::to_string(t));
  }

  ++st.step_count;
  const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step_count));
  const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step_count));
  const double decay = 1.0 - st.lr * st.weight_decay;
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto p = params[t];
    const auto g = grads[t];
    auto& m = st.first_moment[t];
    auto& v = st.second_moment[t];
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (st.weight_decay != 0.0) p[i] *= decay;
      m[i] = st.beta1 * m[i] + (1.0 - st.beta1) * g[i];
      v[i] = st.beta2 * v[i] + (1.0 - st.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p[i] -= st.lr * mhat / (std::sqrt(vhat) + st.eps);
    }
  }
}

// ------------------------------------------------------------------- schedule

enum class EarlyStopMetric { val_loss, val_accuracy };

struct TrainConfig {
  double initial_lr = 1e-3;
  std::vector<std::size_t> lr_milestones;
  double lr_gamma = 0.1;
  std::size_t max_epochs = 40;
  std::size_t batch_size = 64;
  std::size_t early_stop_patience = 8;
  EarlyStopMetric early_stop_metric = EarlyStopMetric::val_loss;
  double weight_decay = 1e-4;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(initial_lr >= 0.0)) throw InvalidArgument("TrainConfig: initial_lr must be >= 0");
    if (!(lr_gamma > 0.0 && lr_gamma <= 1.0)) throw InvalidArgument("TrainConfig: lr_gamma must be in (0, 1]");
    for (std::size_t i = 1; i < lr_milestones.size(); ++i)
      if (lr_milestones[i] <= lr_milestones[i - 1]) throw InvalidArgument("TrainConfig: milestones must be strictly increasing");
    if (early_stop_patience < 1) throw InvalidArgument("TrainConfig: patience must be >= 1");
    if (batch_size < 1) throw InvalidArgument("TrainConfig: batch_size must be >= 1");
    if (!(weight_decay >= 0.0)) throw InvalidArgument("TrainConfig: weight_decay must be >= 0");
  }
};

/// initial_lr * gamma^(number of milestones <= epoch); milestones are inclusive.
inline double lr_at_epoch(const TrainConfig& cfg, std::size_t epoch) {
  double lr = cfg.initial_lr;
  for (std::size_t m : cfg.lr_milestones)
    if (m <= epoch) lr *= cfg.lr_gamma;
  return lr;
}

}  // namespace sngp
