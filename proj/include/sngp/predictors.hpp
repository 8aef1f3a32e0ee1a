#pragma once

// Prediction interface shared by the deterministic baseline, MC dropout and
// SNGP. Each predictor returns class probabilities plus uncertainty scores.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "sngp/model.hpp"

namespace sngp {

struct Predictions {
  Matrix probs;  // n x K
  std::vector<double> msp_uncertainty;
  std::vector<double> entropy;
  std::optional<std::vector<double>> variance;  // SNGP only

  std::size_t size() const noexcept { return probs.rows(); }
};

inline double entropy_of(std::span<const double> p) {
  double h = 0.0;
  for (double v : p)
    if (v > 0.0) h -= v * std::log(v);
  return std::max(h, 0.0);
}

inline Predictions predictions_from_probs(Matrix probs) {
  Predictions out;
  out.msp_uncertainty.resize(probs.rows());
  out.entropy.resize(probs.rows());
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    const auto r = probs.row(i);
    out.msp_uncertainty[i] = 1.0 - *std::max_element(r.begin(), r.end());
    out.entropy[i] = entropy_of(r);
  }
  out.probs = std::move(probs);
  return out;
}

namespace detail {
inline void require_trained(const ModelBundle& m, const char* who) {
  if (!m.trained) throw StateError(std::string(who) + ": model is not trained");
}
inline void require_dense(const ModelBundle& m, const char* who) {
  if (m.is_gp()) throw InvalidArgument(std::string(who) + ": model has a GP head; use predict_sngp");
}
}  // namespace detail

inline Predictions predict_deterministic(const ModelBundle& m, const Matrix& x) {
  detail::require_trained(m, "predict_deterministic");
  detail::require_dense(m, "predict_deterministic");
  return predictions_from_probs(softmax_rows(raw_logits(m, x)));
}

/// Softmax probabilities averaged over `passes` dropout-active forward passes.
/// Pass t draws its masks from Rng(seed ^ t).
inline Predictions predict_mc_dropout(const ModelBundle& m, const Matrix& x, std::size_t passes, std::uint64_t seed) {
  detail::require_trained(m, "predict_mc_dropout");
  detail::require_dense(m, "predict_mc_dropout");
  if (passes == 0) throw InvalidArgument("predict_mc_dropout: need at least one pass");
  if (!(m.encoder.config.dropout_rate > 0.0)) {
    warn("predict_mc_dropout: dropout_rate is 0, falling back to deterministic prediction");
    return predict_deterministic(m, x);
  }
  Matrix sum(x.rows(), m.num_classes());
  for (std::size_t t = 0; t < passes; ++t) {
    Rng rng(seed ^ static_cast<std::uint64_t>(t));
    const auto enc = encoder_forward(m.encoder, x, true, &rng);
    const Matrix p = softmax_rows(detail::affine(m.dense().layer, enc.hidden));
    for (std::size_t i = 0; i < p.size(); ++i) sum.values()[i] += p.values()[i];
  }
  const double inv = 1.0 / static_cast<double>(passes);
  for (double& v : sum.values()) v *= inv;
  return predictions_from_probs(std::move(sum));
}

/// Single pass: encoder, RFF, logits, posterior variance, mean-field softmax.
inline Predictions predict_sngp(const ModelBundle& m, const Matrix& x) {
  detail::require_trained(m, "predict_sngp");
  if (!m.is_gp()) throw InvalidArgument("predict_sngp: model has a dense head");
  const auto& head = m.gp();
  if (!head.posterior.finalized) throw StateError("predict_sngp: Laplace posterior not finalized");
  const Matrix phi = rff_features(encode(m.encoder, x), head.rff);
  Matrix logits = gp_logits(phi, head.beta);
  std::vector<double> var(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    var[i] = predictive_variance(phi.row(i), head.posterior);
    const auto adj = mean_field_adjust(logits.row(i), var[i], head.mean_field.lambda);
    std::copy(adj.begin(), adj.end(), logits.row(i).begin());
  }
  auto out = predictions_from_probs(softmax_rows(logits));
  out.variance = std::move(var);
  return out;
}

/// Accumulates the Laplace precision over `train_ds` in one pass and finalizes.
inline void fit_laplace(ModelBundle& m, const Dataset& train_ds, std::size_t batch_size = 512) {
  if (!m.is_gp()) throw InvalidArgument("fit_laplace: model has no GP head");
  auto& head = m.gp();
  for (std::size_t start = 0; start < train_ds.size(); start += batch_size) {
    const std::size_t end = std::min(train_ds.size(), start + batch_size);
    std::vector<std::size_t> idx(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const Matrix phi = rff_features(encode(m.encoder, select_rows(train_ds.features, idx)), head.rff);
    laplace_accumulate(head.posterior, phi, softmax_rows(gp_logits(phi, head.beta)));
  }
  laplace_finalize(head.posterior);
}

/// Dispatch on method: baseline and mc_dropout use a dense model, sngp a GP one.
inline Predictions predict(MethodTag method, const ModelBundle& m, const Matrix& x, std::size_t mc_passes,
                           std::uint64_t mc_seed) {
  switch (method) {
    case MethodTag::baseline: return predict_deterministic(m, x);
    case MethodTag::mc_dropout: return predict_mc_dropout(m, x, mc_passes, mc_seed);
    case MethodTag::sngp: return predict_sngp(m, x);
  }
  throw InvalidArgument("predict: unknown method");
}

/// Median wall-clock milliseconds of `fn` over `n_trials` calls after warmup.
inline double measure_latency(const std::function<void()>& fn, std::size_t n_warmup, std::size_t n_trials) {
  if (n_trials < 10) throw InvalidArgument("measure_latency: need at least 10 trials");
  for (std::size_t i = 0; i < n_warmup; ++i) fn();
  std::vector<double> ms(n_trials);
  for (auto& t : ms) {
    const auto start = std::chrono::steady_clock::now();
    fn();
    const auto stop = std::chrono::steady_clock::now();
    t = std::chrono::duration<double, std::milli>(stop - start).count();
  }
  std::nth_element(ms.begin(), ms.begin() + static_cast<std::ptrdiff_t>(n_trials / 2), ms.end());
  return ms[n_trials / 2];
}

/// Single-sample latency of `method` on `m` for one input row.
inline double measure_latency(MethodTag method, const ModelBundle& m, const Matrix& x_single_row, std::size_t n_warmup,
                              std::size_t n_trials, std::size_t mc_passes = 10) {
  if (x_single_row.rows() != 1) throw InvalidArgument("measure_latency: expects exactly one input row");
  volatile double sink = 0.0;
  return measure_latency(
      [&] {
        const auto p = predict(method, m, x_single_row, mc_passes, 0);
        sink = sink + p.probs(0, 0);
      },
      n_warmup, n_trials);
}

/// CSV: sample_id,domain_tag,label,p_0..p_{K-1},msp_uncertainty,entropy,variance
inline void write_predictions_csv(std::ostream& os, const Predictions& p, std::span<const int> labels,
                                  const std::string& domain_tag) {
  const std::size_t k = p.probs.cols();
  os << "sample_id,domain_tag,label";
  for (std::size_t c = 0; c < k; ++c) os << ",p_" << c;
  os << ",msp_uncertainty,entropy,variance\n";
  for (std::size_t i = 0; i < p.size(); ++i) {
    os << i << ',' << domain_tag << ',' << (i < labels.size() ? labels[i] : 0);
    for (std::size_t c = 0; c < k; ++c) os << ',' << detail::format_double(p.probs(i, c));
    os << ',' << detail::format_double(p.msp_uncertainty[i]) << ',' << detail::format_double(p.entropy[i]) << ',';
    if (p.variance) os << detail::format_double((*p.variance)[i]);
    os << '\n';
  }
}

}  // namespace sngp
