#pragma once

// Gaussian-process output layer approximated with random Fourier features.
//
//   Phi(h)   = sqrt(2/D) * cos(W_r h / l + b_r),  W_r ~ N(0,1), b_r ~ U(0, 2pi)
//   logits   = Phi beta^T
//   P        = s I + sum_i p_i (1 - p_i) Phi_i Phi_i^T,  p_i = max_k softmax_k
//   sigma^2  = Phi^T P^{-1} Phi
//   adjusted = logits / sqrt(1 + lambda sigma^2)
//
// The random projection is frozen at construction; only beta is trained.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "sngp/error.hpp"
#include "sngp/linalg.hpp"
#include "sngp/matrix.hpp"
#include "sngp/rng.hpp"

namespace sngp {

struct RFFProjection {
  Matrix weight;               // D x hidden_dim
  std::vector<double> offset;  // D
  double lengthscale = 2.0;

  std::size_t dim() const noexcept { return weight.rows(); }
  std::size_t input_dim() const noexcept { return weight.cols(); }

  friend bool operator==(const RFFProjection&, const RFFProjection&) = default;
};

inline RFFProjection make_rff(std::size_t input_dim, std::size_t rff_dim, double lengthscale, Rng& rng) {
  if (rff_dim == 0 || input_dim == 0) throw InvalidArgument("make_rff: dimensions must be positive");
  if (!(lengthscale > 0.0)) throw InvalidArgument("make_rff: lengthscale must be > 0");
  RFFProjection p{Matrix(rff_dim, input_dim), std::vector<double>(rff_dim), lengthscale};
  for (double& w : p.weight.values()) w = rng.normal();
  for (double& b : p.offset) b = 2.0 * std::numbers::pi * rng.uniform();
  return p;
}

/// Pre-cosine arguments W_r h / l + b_r, one row per input row.
inline Matrix rff_arguments(const Matrix& h, const RFFProjection& proj) {
  if (h.cols() != proj.input_dim())
    throw InvalidArgument("rff_features: expected " + std::to_string(proj.input_dim()) + " features, got " +
                          std::to_string(h.cols()));
  Matrix z = matmul_nt(h, proj.weight);
  const double inv_l = 1.0 / proj.lengthscale;
  for (std::size_t i = 0; i < z.rows(); ++i) {
    auto r = z.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] = r[j] * inv_l + proj.offset[j];
  }
  return z;
}

inline Matrix rff_from_arguments(const Matrix& z) {
  const double amp = std::sqrt(2.0 / static_cast<double>(z.cols()));
  Matrix phi(z.rows(), z.cols());
  for (std::size_t i = 0; i < z.size(); ++i) phi.values()[i] = amp * std::cos(z.values()[i]);
  return phi;
}

inline Matrix rff_features(const Matrix& h, const RFFProjection& proj) {
  return rff_from_arguments(rff_arguments(h, proj));
}

inline Matrix gp_logits(const Matrix& phi, const Matrix& beta) {
  if (beta.rows() < 2) throw InvalidArgument("gp_logits: need at least 2 classes");
  if (phi.cols() != beta.cols()) throw InvalidArgument("gp_logits: feature dimension mismatch");
  return matmul_nt(phi, beta);
}

// ----------------------------------------------------------------- posterior

struct LaplacePosterior {
  Matrix precision;   // D x D, accumulated curvature (+ ridge once finalized)
  double ridge = 1e-3;
  Matrix covariance;  // valid only when finalized
  bool finalized = false;

  static LaplacePosterior prior(std::size_t dim, double ridge) {
    if (!(ridge > 0.0)) throw InvalidArgument("LaplacePosterior: ridge must be > 0");
    return {Matrix(dim, dim), ridge, Matrix(), false};
  }

  std::size_t dim() const noexcept { return precision.rows(); }

  friend bool operator==(const LaplacePosterior&, const LaplacePosterior&) = default;
};

/// P += sum_i p_i (1 - p_i) Phi_i Phi_i^T with p_i the top class probability.
inline void laplace_accumulate(LaplacePosterior& post, const Matrix& phi, const Matrix& probs) {
  if (post.finalized) throw StateError("laplace_accumulate: posterior already finalized");
  if (phi.cols() != post.dim()) throw InvalidArgument("laplace_accumulate: feature dimension mismatch");
  if (phi.rows() != probs.rows()) throw InvalidArgument("laplace_accumulate: row count mismatch");
  const std::size_t d = post.dim();
  for (std::size_t i = 0; i < phi.rows(); ++i) {
    const auto pr = probs.row(i);
    const double top = *std::max_element(pr.begin(), pr.end());
    const double w = top * (1.0 - top);
    if (w == 0.0) continue;
    const auto f = phi.row(i);
    for (std::size_t a = 0; a < d; ++a) {
      const double wa = w * f[a];
      if (wa == 0.0) continue;
      double* prow = post.precision.row(a).data();
      for (std::size_t b = a; b < d; ++b) prow[b] += wa * f[b];
    }
  }
  // Upper triangle is accumulated; mirror it so P stays exactly symmetric.
  for (std::size_t a = 0; a < d; ++a)
    for (std::size_t b = a + 1; b < d; ++b) post.precision(b, a) = post.precision(a, b);
}

/// Adds the ridge and inverts through Cholesky.
inline void laplace_finalize(LaplacePosterior& post) {
  if (post.finalized) throw StateError("laplace_finalize: posterior already finalized");
  for (std::size_t i = 0; i < post.dim(); ++i) post.precision(i, i) += post.ridge;
  const auto chol = linalg::cholesky(post.precision);
  if (!chol) {
    const auto eig = linalg::symmetric_eigen(post.precision);
    throw NumericalError("laplace_finalize: Cholesky failed; minimum eigenvalue estimate " +
                         std::to_string(eig.values.empty() ? 0.0 : eig.values.front()));
  }
  post.covariance = linalg::cholesky_inverse(*chol);
  post.finalized = true;
}

inline double predictive_variance(std::span<const double> phi_row, const LaplacePosterior& post) {
  if (!post.finalized) throw StateError("predictive_variance: posterior not finalized");
  if (phi_row.size() != post.dim()) throw InvalidArgument("predictive_variance: feature dimension mismatch");
  double s = 0.0;
  for (std::size_t a = 0; a < phi_row.size(); ++a) {
    if (phi_row[a] == 0.0) continue;
    s += phi_row[a] * dot(post.covariance.row(a), phi_row);
  }
  return std::max(s, 0.0);
}

struct MeanFieldParams {
  double lambda = std::numbers::pi / 8.0;
  friend bool operator==(const MeanFieldParams&, const MeanFieldParams&) = default;
};

inline std::vector<double> mean_field_adjust(std::span<const double> logits, double sigma2, double lambda) {
  if (!(sigma2 >= 0.0)) throw InvalidArgument("mean_field_adjust: sigma2 must be >= 0");
  std::vector<double> out(logits.begin(), logits.end());
  if (lambda == 0.0 || sigma2 == 0.0) return out;
  const double scale = std::sqrt(1.0 + lambda * sigma2);
  for (double& v : out) v /= scale;
  return out;
}

// ---------------------------------------------------------------- head bundle

struct GPHeadConfig {
  std::size_t rff_dim = 1024;
  double lengthscale = 2.0;
  double ridge = 1e-3;
  double mean_field_lambda = std::numbers::pi / 8.0;

  void validate() const {
    if (rff_dim == 0) throw InvalidArgument("GPHeadConfig: rff_dim must be positive");
    if (!(lengthscale > 0.0)) throw InvalidArgument("GPHeadConfig: lengthscale must be > 0");
    if (!(ridge > 0.0)) throw InvalidArgument("GPHeadConfig: ridge must be > 0");
    if (!(mean_field_lambda >= 0.0)) throw InvalidArgument("GPHeadConfig: mean_field_lambda must be >= 0");
  }
};

struct GPHead {
  RFFProjection rff;
  Matrix beta;  // K x D
  LaplacePosterior posterior;
  MeanFieldParams mean_field;

  friend bool operator==(const GPHead&, const GPHead&) = default;
};

inline GPHead make_gp_head(std::size_t hidden_dim, std::size_t num_classes, const GPHeadConfig& cfg, Rng& rng) {
  cfg.validate();
  if (num_classes < 2) throw InvalidArgument("make_gp_head: need at least 2 classes");
  GPHead head;
  head.rff = make_rff(hidden_dim, cfg.rff_dim, cfg.lengthscale, rng);
  head.beta = Matrix(num_classes, cfg.rff_dim);
  const double stddev = std::sqrt(1.0 / static_cast<double>(cfg.rff_dim));
  for (double& b : head.beta.values()) b = stddev * rng.normal();
  head.posterior = LaplacePosterior::prior(cfg.rff_dim, cfg.ridge);
  head.mean_field.lambda = cfg.mean_field_lambda;
  return head;
}

}  // namespace sngp
