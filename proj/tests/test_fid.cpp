#include <gtest/gtest.h>

#include <Eigen/Dense>

#include "sngp/fid.hpp"
#include "sngp/predictors.hpp"
#include "sngp/train.hpp"

using namespace sngp;
using namespace sngp::fid;

namespace {
Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng) {
  Matrix m(r, c);
  for (double& v : m.values()) v = rng.normal();
  return m;
}
Matrix random_psd(std::size_t n, Rng& rng, std::size_t rank) {
  const Matrix g = random_matrix(n, rank, rng);
  return linalg::symmetrize(matmul_nt(g, g));
}
Eigen::MatrixXd to_eigen(const Matrix& m) {
  Eigen::MatrixXd e(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) e(i, j) = m(i, j);
  return e;
}
/// Frechet distance computed with Eigen's self-adjoint solver.
double eigen_frechet(const GaussianMoments& a, const GaussianMoments& b) {
  auto sqrtm = [](const Eigen::MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
    return Eigen::MatrixXd(es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() *
                           es.eigenvectors().transpose());
  };
  const Eigen::MatrixXd ca = to_eigen(a.cov), cb = to_eigen(b.cov);
  const Eigen::MatrixXd ra = sqrtm(ca);
  Eigen::MatrixXd inner = ra * cb * ra;
  inner = 0.5 * (inner + inner.transpose());
  double mean = 0;
  for (std::size_t j = 0; j < a.mu.size(); ++j) mean += (a.mu[j] - b.mu[j]) * (a.mu[j] - b.mu[j]);
  return mean + ca.trace() + cb.trace() - 2 * sqrtm(inner).trace();
}
}  // namespace

TEST(Moments, HandCases) {
  const auto same = fit_moments(Matrix{{1, 2}, {1, 2}, {1, 2}});
  EXPECT_EQ(same.cov, Matrix(2, 2));
  const auto g = fit_moments(Matrix{{0, 0}, {2, 0}});
  EXPECT_EQ(g.mu, (std::vector<double>{1, 0}));
  EXPECT_EQ(g.cov, (Matrix{{2, 0}, {0, 0}}));
  Rng rng(1);
  const Matrix x = random_matrix(30, 3, rng);
  Matrix shifted = x;
  for (std::size_t i = 0; i < 30; ++i) {
    shifted(i, 0) += 5;
    shifted(i, 2) -= 2;
  }
  const auto a = fit_moments(x), b = fit_moments(shifted);
  EXPECT_NEAR(b.mu[0] - a.mu[0], 5, 1e-12);
  EXPECT_LT(max_abs_diff(a.cov, b.cov), 1e-12);
}

TEST(Sqrtm, KnownAndRandom) {
  EXPECT_LT(max_abs_diff(sqrtm_psd(Matrix::identity(3)), Matrix::identity(3)), 1e-12);
  EXPECT_LT(max_abs_diff(sqrtm_psd(Matrix{{4, 0}, {0, 9}}), Matrix{{2, 0}, {0, 3}}), 1e-12);
  Rng rng(2);
  for (int t = 0; t < 20; ++t) {
    const Matrix a = random_psd(6, rng, t % 2 ? 6 : 3);
    const Matrix r = sqrtm_psd(a);
    EXPECT_LE(linalg::max_asymmetry(r), 1e-8);
    Matrix diff = matmul(r, r);
    for (std::size_t i = 0; i < diff.size(); ++i) diff.values()[i] -= a.values()[i];
    EXPECT_LE(frobenius(diff) / frobenius(a), 1e-8);
    const auto e = linalg::symmetric_eigen(r);
    EXPECT_GE(e.values.front(), -1e-8);
  }
  EXPECT_THROW(sqrtm_psd(Matrix{{1, 2}, {0, 1}}), InvalidArgument);
}

TEST(Frechet, ClosedForms) {
  Rng rng(3);
  const Matrix c = random_psd(4, rng, 4);
  GaussianMoments a{{1, 2, 3, 4}, c}, b{{0, 2, 5, 4}, c};
  EXPECT_NEAR(frechet_distance(a, a), 0.0, 1e-8);
  EXPECT_NEAR(frechet_distance(a, b), 1 + 4, 1e-8);
  GaussianMoments d1{{0, 0}, Matrix{{1, 0}, {0, 4}}}, d2{{0, 0}, Matrix{{4, 0}, {0, 1}}};
  EXPECT_NEAR(frechet_distance(d1, d2), 2.0, 1e-12);
}

TEST(Frechet, SymmetryOracleAndRigidMotion) {
  Rng rng(4);
  for (int t = 0; t < 10; ++t) {
    const Matrix x = random_matrix(50, 4, rng), y = random_matrix(60, 4, rng);
    Matrix y2 = y;
    for (std::size_t i = 0; i < y2.rows(); ++i) y2(i, 1) = 2 * y2(i, 1) + 1;
    const auto a = fit_moments(x), b = fit_moments(y2);
    const double d = frechet_distance(a, b);
    EXPECT_NEAR(d, frechet_distance(b, a), 1e-8);
    EXPECT_NEAR(d, eigen_frechet(a, b), 1e-8);
    EXPECT_GE(d, 0.0);
    // Random orthogonal Q from a QR factorization, plus a shift.
    const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(to_eigen(random_matrix(4, 4, rng))).householderQ();
    Matrix qm(4, 4);
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) qm(i, j) = q(i, j);
    auto move = [&](const Matrix& m) {
      Matrix out = matmul_nt(m, qm);
      for (std::size_t i = 0; i < out.rows(); ++i) out(i, 0) += 3.0;
      return out;
    };
    EXPECT_NEAR(frechet_distance(fit_moments(move(x)), fit_moments(move(y2))), d, 1e-6);
  }
}

TEST(DatasetFid, SelfAndOrdering) {
  const auto [ds, stats] = standardize(gen_two_moons(600, 0.1, 1));
  EncoderConfig e;
  e.hidden_dim = 16;
  e.n_residual_blocks = 1;
  TrainConfig tc;
  tc.max_epochs = 5;
  tc.initial_lr = 0.01;
  const auto m = train(make_model(MethodTag::baseline, e, {}, 2, 2), ds, ds, tc).model;
  const auto self = dataset_fid(m, ds, ds);
  EXPECT_LE(std::abs(self.value), 1e-6);
  EXPECT_TRUE(self.warnings.empty());
  const Dataset near = apply_standardization(gen_two_moons(600, 0.2, 2), stats);
  const std::vector<double> center{0.5, 0.25};
  const Dataset ring = apply_standardization(gen_ood_ring(600, 4.0, 1.0, center, 3), stats);
  EXPECT_LT(dataset_fid(m, ds, near).value, dataset_fid(m, ds, ring).value);
  EXPECT_EQ(dataset_fid(m, ds, ring).value, dataset_fid(m, ds, ring).value);
  const Dataset tiny = subset(ds, std::vector<std::size_t>{0, 1, 2, 3, 4});
  EXPECT_FALSE(dataset_fid(m, tiny, ds).warnings.empty());
}
