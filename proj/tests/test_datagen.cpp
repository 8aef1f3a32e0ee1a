#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <sstream>

#include "sngp/datagen.hpp"

using namespace sngp;

TEST(TwoMoons, ZeroNoiseOnArcs) {
  const Dataset ds = gen_two_moons(4, 0.0, 7);
  ASSERT_EQ(ds.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    const double x = ds.features(i, 0), y = ds.features(i, 1);
    if (ds.labels[i] == 0) {
      EXPECT_NEAR(x * x + y * y, 1.0, 1e-12);
      EXPECT_GE(y, -1e-12);
    } else {
      EXPECT_NEAR((x - 1.0) * (x - 1.0) + (y - 0.5) * (y - 0.5), 1.0, 1e-12);
      EXPECT_LE(y, 0.5 + 1e-12);
    }
  }
}

TEST(TwoMoons, DeterministicAndBalanced) {
  const Dataset a = gen_two_moons(1000, 0.1, 1), b = gen_two_moons(1000, 0.1, 1);
  EXPECT_EQ(a, b);
  EXPECT_EQ(std::count(a.labels.begin(), a.labels.end(), 0), 500);
  EXPECT_EQ(std::count(a.labels.begin(), a.labels.end(), 1), 500);
  EXPECT_NE(a, gen_two_moons(1000, 0.1, 2));
  EXPECT_THROW(gen_two_moons(1000, -0.1, 1), InvalidArgument);
}

TEST(Blobs, VanishingVarianceAndCounts) {
  const Matrix centers{{0, 0}, {10, 10}};
  const Dataset tight = gen_gaussian_blobs(centers, 1e-9, 3, 0);
  for (std::size_t i = 0; i < tight.size(); ++i) {
    const auto c = centers.row(static_cast<std::size_t>(tight.labels[i]));
    EXPECT_NEAR(tight.features(i, 0), c[0], 1e-6);
    EXPECT_NEAR(tight.features(i, 1), c[1], 1e-6);
  }
  const Matrix three{{0, 0}, {5, 0}, {0, 5}};
  const Dataset ds = gen_gaussian_blobs(three, 1.0, 100, 3);
  EXPECT_EQ(ds.size(), 300u);
  for (int k = 0; k < 3; ++k) EXPECT_EQ(std::count(ds.labels.begin(), ds.labels.end(), k), 100);
}

TEST(Blobs, SampleMeansNearCenters) {
  const Matrix centers{{-2, 1}, {3, 4}};
  const std::size_t n = 10000;
  const Dataset ds = gen_gaussian_blobs(centers, 1.0, n, 11);
  for (int k = 0; k < 2; ++k) {
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < ds.size(); ++i)
      if (ds.labels[i] == k) {
        mx += ds.features(i, 0);
        my += ds.features(i, 1);
      }
    const double tol = 4.0 / std::sqrt(static_cast<double>(n));
    EXPECT_NEAR(mx / n, centers(k, 0), tol);
    EXPECT_NEAR(my / n, centers(k, 1), tol);
  }
}

TEST(Ring, RadiusBounds) {
  const std::vector<double> origin{0.0, 0.0};
  const Dataset thin = gen_ood_ring(100, 5.0, 0.0, origin, 1);
  for (std::size_t i = 0; i < 100; ++i) EXPECT_NEAR(std::hypot(thin.features(i, 0), thin.features(i, 1)), 5.0, 1e-9);
  const Dataset wide = gen_ood_ring(100, 5.0, 1.0, origin, 1);
  for (std::size_t i = 0; i < 100; ++i) {
    const double r = std::hypot(wide.features(i, 0), wide.features(i, 1));
    EXPECT_GE(r, 4.5);
    EXPECT_LE(r, 5.5);
  }
  EXPECT_EQ(wide, gen_ood_ring(100, 5.0, 1.0, origin, 1));
}

TEST(Standardize, HandCaseAndConstantColumn) {
  Dataset ds;
  ds.features = Matrix{{1, 7}, {3, 7}};
  ds.labels = {0, 1};
  ds.class_names = {"a", "b"};
  auto [out, stats] = standardize(ds);
  EXPECT_DOUBLE_EQ(stats.mean[0], 2.0);
  EXPECT_DOUBLE_EQ(stats.std[0], 1.0);
  EXPECT_DOUBLE_EQ(out.features(0, 0), -1.0);
  EXPECT_DOUBLE_EQ(out.features(1, 0), 1.0);
  EXPECT_EQ(out.features(0, 1), 0.0);
  EXPECT_EQ(out.features(1, 1), 0.0);
}

TEST(Standardize, MeansAndIdempotence) {
  const Dataset ds = gen_two_moons(500, 0.2, 4);
  auto [out, stats] = standardize(ds);
  EXPECT_EQ(apply_standardization(ds, stats), out);
  auto [again, stats2] = standardize(out);
  for (std::size_t j = 0; j < 2; ++j) {
    EXPECT_LT(std::abs(stats2.mean[j]), 1e-10);
    EXPECT_NEAR(stats2.std[j], 1.0, 1e-9);
  }
  for (std::size_t i = 0; i < ds.size(); ++i)
    for (std::size_t j = 0; j < 2; ++j)
      EXPECT_NEAR(out.features(i, j) * stats.std[j] + stats.mean[j], ds.features(i, j), 1e-12);
  StandardizationStats id{{0.0, 0.0}, {1.0, 1.0}};
  EXPECT_EQ(apply_standardization(ds, id).features, ds.features);
}

namespace {
// Independent restatement of the allocation rule: floors, then leftovers to
// train first and afterwards cycling over splits by descending fraction with
// test ahead of val on ties, skipping zero fractions.
std::array<std::size_t, 3> reference_allocation(std::size_t n, std::array<double, 3> f) {
  std::array<std::size_t, 3> a{};
  std::size_t used = 0;
  for (int j = 0; j < 3; ++j) used += (a[j] = static_cast<std::size_t>(std::floor(n * f[j])));
  std::vector<int> rest{2, 1};
  std::stable_sort(rest.begin(), rest.end(), [&](int x, int y) { return f[x] > f[y]; });
  std::vector<int> cycle{0};
  for (int r : rest) cycle.push_back(r);
  std::vector<int> usable;
  for (int c : cycle)
    if (f[c] > 0) usable.push_back(c);
  for (std::size_t left = n - used, k = 0; left > 0; --left, ++k) ++a[usable[k % usable.size()]];
  return a;
}
}  // namespace

TEST(Split, AllocationRule) {
  EXPECT_EQ(stratified_allocation(7, {0.5, 0.25, 0.25}), (std::array<std::size_t, 3>{4, 1, 2}));
  EXPECT_EQ(stratified_allocation(100, {0.8, 0.1, 0.1}), (std::array<std::size_t, 3>{80, 10, 10}));
  EXPECT_EQ(stratified_allocation(9, {1.0, 0.0, 0.0}), (std::array<std::size_t, 3>{9, 0, 0}));
  Rng rng(8);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 3 + rng.below(200);
    double a = rng.uniform(), b = rng.uniform(), c = rng.uniform();
    const double s = a + b + c;
    const std::array<double, 3> f{a / s, b / s, c / s};
    EXPECT_EQ(stratified_allocation(n, {f[0], f[1], f[2]}), reference_allocation(n, f)) << n;
  }
}

TEST(Split, StratifiedCounts) {
  const Matrix centers{{0, 0}, {5, 5}};
  const Dataset ds = gen_gaussian_blobs(centers, 1.0, 100, 2);
  const auto parts = stratified_split(ds, {0.8, 0.1, 0.1}, 3);
  const std::array<int, 3> expected{80, 10, 10};
  for (int j = 0; j < 3; ++j)
    for (int k = 0; k < 2; ++k) EXPECT_EQ(std::count(parts[j].labels.begin(), parts[j].labels.end(), k), expected[j]);
  const auto all = stratified_split(ds, {1.0, 0.0, 0.0}, 3);
  EXPECT_EQ(all[0].size(), 200u);
  EXPECT_EQ(all[1].size() + all[2].size(), 0u);
  EXPECT_EQ(parts[0], stratified_split(ds, {0.8, 0.1, 0.1}, 3)[0]);
}

TEST(Split, ObservedFractionWithinOneSample) {
  const Dataset ds = gen_two_moons(333, 0.1, 5);
  const SplitFractions f{0.6, 0.15, 0.25};
  const auto parts = stratified_split(ds, f, 9);
  const std::array<double, 3> fr{f.train, f.val, f.test};
  for (int k = 0; k < 2; ++k) {
    const double n_k = static_cast<double>(std::count(ds.labels.begin(), ds.labels.end(), k));
    for (int j = 0; j < 3; ++j) {
      const double got = std::count(parts[j].labels.begin(), parts[j].labels.end(), k) / n_k;
      EXPECT_LE(std::abs(got - fr[j]), 1.0 / n_k);
    }
  }
}

TEST(Csv, RoundTripExact) {
  Dataset ds = gen_two_moons(50, 0.3, 12);
  ds.features(0, 0) = 1e-300;
  ds.features(1, 1) = -0.1;
  std::stringstream ss;
  write_dataset_csv(ss, ds);
  const Dataset back = read_dataset_csv(ss);
  EXPECT_EQ(back, ds);
}

TEST(Csv, Errors) {
  std::stringstream empty;
  try {
    read_dataset_csv(empty);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("no header"), std::string::npos);
  }
  std::stringstream ragged("f0,f1,label\n1,2,0\n1,2\n");
  try {
    read_dataset_csv(ragged);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
  std::stringstream bad_label("f0,label\n1.0,0.5\n");
  EXPECT_THROW(read_dataset_csv(bad_label), ParseError);
}
