#pragma once

// Frechet distance between Gaussian fits of two embedding sets.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "sngp/datagen.hpp"
#include "sngp/linalg.hpp"
#include "sngp/model.hpp"

namespace sngp::fid {

struct GaussianMoments {
  std::vector<double> mu;
  Matrix cov;
};

/// Sample mean and (n-1)-normalized covariance, symmetrized.
inline GaussianMoments fit_moments(const Matrix& embeddings) {
  const std::size_t n = embeddings.rows();
  const std::size_t d = embeddings.cols();
  if (n < 2) throw InvalidArgument("fit_moments: need at least 2 rows");
  GaussianMoments g{std::vector<double>(d, 0.0), Matrix(d, d)};
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) g.mu[j] += embeddings(i, j);
  for (double& m : g.mu) m /= static_cast<double>(n);
  Matrix centered = embeddings;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) centered(i, j) -= g.mu[j];
  g.cov = matmul_tn(centered, centered);
  g.cov *= 1.0 / static_cast<double>(n - 1);
  g.cov = linalg::symmetrize(g.cov);
  return g;
}

/// Q sqrt(max(L, 0)) Q^T for symmetric A = Q L Q^T.
inline Matrix sqrtm_psd(const Matrix& a) {
  if (a.rows() != a.cols()) throw InvalidArgument("sqrtm_psd: matrix must be square");
  double scale = 1.0;
  for (double v : a.values()) scale = std::max(scale, std::abs(v));
  if (linalg::max_asymmetry(a) > 1e-6 * scale) throw InvalidArgument("sqrtm_psd: matrix is not symmetric");
  const auto eig = linalg::symmetric_eigen(a);
  const std::size_t n = a.rows();
  Matrix scaled = eig.vectors;  // Q sqrt(L)
  for (std::size_t k = 0; k < n; ++k) {
    const double s = std::sqrt(std::max(eig.values[k], 0.0));
    for (std::size_t i = 0; i < n; ++i) scaled(i, k) *= s;
  }
  return linalg::symmetrize(matmul_nt(scaled, eig.vectors));
}

inline double trace(const Matrix& a) {
  double t = 0.0;
  for (std::size_t i = 0; i < std::min(a.rows(), a.cols()); ++i) t += a(i, i);
  return t;
}

/// |mu_a - mu_b|^2 + tr(C_a + C_b - 2 sqrt(sqrt(C_a) C_b sqrt(C_a))).
inline double frechet_distance(const GaussianMoments& a, const GaussianMoments& b) {
  if (a.mu.size() != b.mu.size() || a.cov.rows() != b.cov.rows())
    throw InvalidArgument("frechet_distance: dimension mismatch");
  double mean_term = 0.0;
  for (std::size_t j = 0; j < a.mu.size(); ++j) mean_term += (a.mu[j] - b.mu[j]) * (a.mu[j] - b.mu[j]);
  const Matrix root_a = sqrtm_psd(a.cov);
  const Matrix inner = linalg::symmetrize(matmul(matmul(root_a, b.cov), root_a));
  const double d = mean_term + trace(a.cov) + trace(b.cov) - 2.0 * trace(sqrtm_psd(inner));
  if (d < 0.0 && d >= -1e-8) return 0.0;
  return d;
}

struct DatasetFid {
  double value = 0.0;
  std::vector<std::string> warnings;
};

/// Model-FID: Frechet distance between the encoder embeddings of two datasets.
inline DatasetFid dataset_fid(const ModelBundle& model, const Dataset& a, const Dataset& b) {
  DatasetFid out;
  const std::size_t d = model.encoder.config.hidden_dim;
  for (const Dataset* ds : {&a, &b})
    if (ds->size() < d + 1)
      out.warnings.push_back("dataset '" + ds->domain_tag + "' has " + std::to_string(ds->size()) +
                             " samples for a " + std::to_string(d) + "-dim embedding; covariance is rank-deficient");
  out.value = frechet_distance(fit_moments(encode(model.encoder, a.features)),
                               fit_moments(encode(model.encoder, b.features)));
  return out;
}

}  // namespace sngp::fid
