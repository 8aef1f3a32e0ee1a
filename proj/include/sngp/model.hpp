#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "sngp/datagen.hpp"
#include "sngp/gp_head.hpp"
#include "sngp/nn.hpp"
#include "sngp/spectral.hpp"

namespace sngp {

enum class MethodTag { baseline, mc_dropout, sngp };

inline std::string to_string(MethodTag m) {
  switch (m) {
    case MethodTag::baseline: return "baseline";
    case MethodTag::mc_dropout: return "mc_dropout";
    case MethodTag::sngp: return "sngp";
  }
  return "unknown";
}

inline MethodTag parse_method(const std::string& s) {
  if (s == "baseline") return MethodTag::baseline;
  if (s == "mc_dropout") return MethodTag::mc_dropout;
  if (s == "sngp") return MethodTag::sngp;
  throw InvalidArgument("unknown method '" + s + "' (expected baseline, mc_dropout or sngp)");
}

struct DenseHead {
  DenseLayer layer;  // K x hidden
  friend bool operator==(const DenseHead&, const DenseHead&) = default;
};

using Head = std::variant<DenseHead, GPHead>;

/// Encoder + output head + everything needed to reproduce predictions.
struct ModelBundle {
  MethodTag method = MethodTag::baseline;
  Encoder encoder;
  Head head;
  std::vector<SpectralState> spectral;  // one per residual block when spectral_norm is on
  StandardizationStats stats;
  std::vector<std::string> class_names;
  bool trained = false;

  bool is_gp() const noexcept { return std::holds_alternative<GPHead>(head); }
  const GPHead& gp() const { return std::get<GPHead>(head); }
  GPHead& gp() { return std::get<GPHead>(head); }
  const DenseHead& dense() const { return std::get<DenseHead>(head); }

  std::size_t num_classes() const {
    return is_gp() ? gp().beta.rows() : dense().layer.out_dim();
  }

  void validate() const {
    if ((method == MethodTag::sngp) != is_gp()) throw InvalidArgument("ModelBundle: sngp method requires a GP head and vice versa");
    if (method == MethodTag::mc_dropout && !(encoder.config.dropout_rate > 0.0))
      throw InvalidArgument("ModelBundle: mc_dropout requires dropout_rate > 0");
    if (encoder.config.spectral_norm && spectral.size() != encoder.blocks.size())
      throw InvalidArgument("ModelBundle: spectral state count does not match residual blocks");
  }

  friend bool operator==(const ModelBundle&, const ModelBundle&) = default;
};

inline ModelBundle make_model(MethodTag method, const EncoderConfig& enc_cfg, const GPHeadConfig& gp_cfg,
                              std::size_t num_classes, std::uint64_t seed) {
  if (num_classes < 2) throw InvalidArgument("make_model: need at least 2 classes");
  Rng rng(seed);
  ModelBundle m;
  m.method = method;
  m.encoder = make_encoder(enc_cfg, rng);
  if (method == MethodTag::sngp)
    m.head = make_gp_head(enc_cfg.hidden_dim, num_classes, gp_cfg, rng);
  else
    m.head = DenseHead{make_dense(num_classes, enc_cfg.hidden_dim, Activation::identity, rng)};
  if (enc_cfg.spectral_norm) {
    for (std::size_t b = 0; b < enc_cfg.n_residual_blocks; ++b)
      m.spectral.push_back({{}, enc_cfg.spectral_bound, enc_cfg.power_iterations, derive_seed(seed, 100 + b), 0.0});
  }
  for (std::size_t k = 0; k < num_classes; ++k) m.class_names.push_back("class" + std::to_string(k));
  m.validate();
  return m;
}

// ----------------------------------------------------------- forward/backward

struct ModelForward {
  Matrix logits;
  Matrix hidden;
  EncoderCache encoder_cache;
  Matrix rff_args;  // GP head only
  Matrix phi;       // GP head only
};

inline ModelForward model_forward(const ModelBundle& m, const Matrix& x, bool dropout_active, Rng* rng) {
  ModelForward f;
  auto enc = encoder_forward(m.encoder, x, dropout_active, rng);
  f.hidden = std::move(enc.hidden);
  f.encoder_cache = std::move(enc.cache);
  if (m.is_gp()) {
    f.rff_args = rff_arguments(f.hidden, m.gp().rff);
    f.phi = rff_from_arguments(f.rff_args);
    f.logits = gp_logits(f.phi, m.gp().beta);
  } else {
    f.logits = detail::affine(m.dense().layer, f.hidden);
  }
  return f;
}

/// Logits without dropout and without the mean-field adjustment.
inline Matrix raw_logits(const ModelBundle& m, const Matrix& x) {
  const Matrix h = encode(m.encoder, x);
  if (m.is_gp()) return gp_logits(rff_features(h, m.gp().rff), m.gp().beta);
  return detail::affine(m.dense().layer, h);
}

struct ModelGrad {
  EncoderGrad encoder;
  Matrix head_weight;             // dense W or GP beta
  std::vector<double> head_bias;  // dense head only
};

inline ModelGrad model_backward(const ModelBundle& m, const ModelForward& f, const Matrix& dlogits) {
  ModelGrad g;
  Matrix d_hidden;
  if (m.is_gp()) {
    const auto& head = m.gp();
    g.head_weight = matmul_tn(dlogits, f.phi);
    Matrix dphi = matmul(dlogits, head.beta);
    const double amp = std::sqrt(2.0 / static_cast<double>(head.rff.dim()));
    const double inv_l = 1.0 / head.rff.lengthscale;
    for (std::size_t i = 0; i < dphi.size(); ++i) dphi.values()[i] *= -amp * std::sin(f.rff_args.values()[i]) * inv_l;
    d_hidden = matmul(dphi, head.rff.weight);
  } else {
    const auto& layer = m.dense().layer;
    g.head_weight = matmul_tn(dlogits, f.hidden);
    g.head_bias = column_sums(dlogits);
    d_hidden = matmul(dlogits, layer.weight);
  }
  g.encoder = encoder_backward(m.encoder, f.encoder_cache, std::move(d_hidden));
  return g;
}

struct LossAndGrad {
  double loss = 0.0;
  ModelGrad grad;
  Matrix logits;
};

inline LossAndGrad loss_and_grad(const ModelBundle& m, const Matrix& x, std::span<const int> labels, bool dropout_active,
                                 Rng* rng) {
  auto f = model_forward(m, x, dropout_active, rng);
  auto ce = cross_entropy(f.logits, labels);
  LossAndGrad r;
  r.loss = ce.loss;
  r.grad = model_backward(m, f, ce.dlogits);
  r.logits = std::move(f.logits);
  return r;
}

/// Trainable tensors in a fixed order: encoder input W, b, each block W, b,
/// then the head (dense W, b, or GP beta). The RFF projection is not included.
inline std::vector<std::span<double>> parameter_views(ModelBundle& m) {
  std::vector<std::span<double>> v;
  v.push_back(m.encoder.input.weight.values());
  v.push_back(m.encoder.input.bias);
  for (auto& b : m.encoder.blocks) {
    v.push_back(b.inner.weight.values());
    v.push_back(b.inner.bias);
  }
  if (m.is_gp()) {
    v.push_back(m.gp().beta.values());
  } else {
    auto& layer = std::get<DenseHead>(m.head).layer;
    v.push_back(layer.weight.values());
    v.push_back(layer.bias);
  }
  return v;
}

inline std::vector<std::span<const double>> gradient_views(const ModelGrad& g, bool gp_head) {
  std::vector<std::span<const double>> v;
  v.push_back(g.encoder.input.weight.values());
  v.push_back(g.encoder.input.bias);
  for (const auto& b : g.encoder.blocks) {
    v.push_back(b.weight.values());
    v.push_back(b.bias);
  }
  v.push_back(g.head_weight.values());
  if (!gp_head) v.push_back(g.head_bias);
  return v;
}

}  // namespace sngp
