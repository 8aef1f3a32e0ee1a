#include <gtest/gtest.h>

#include <cmath>

#include "sngp/predictors.hpp"
#include "sngp/train.hpp"

using namespace sngp;

namespace {

struct Trained {
  Dataset train, val;
  ModelBundle dense, sngp;
};

const Trained& trained() {
  static const Trained t = [] {
    Trained r;
    const auto ds = standardize(gen_two_moons(600, 0.1, 3)).first;
    const auto parts = stratified_split(ds, {0.8, 0.2, 0.0}, 4);
    r.train = parts[0];
    r.val = parts[1];
    EncoderConfig e;
    e.hidden_dim = 32;
    e.n_residual_blocks = 2;
    e.dropout_rate = 0.1;
    TrainConfig tc;
    tc.max_epochs = 15;
    tc.initial_lr = 0.005;
    r.dense = train(make_model(MethodTag::baseline, e, {}, 2, 5), r.train, r.val, tc).model;
    e.dropout_rate = 0.0;
    e.spectral_norm = true;
    GPHeadConfig gp;
    gp.rff_dim = 64;
    r.sngp = train(make_model(MethodTag::sngp, e, gp, 2, 6), r.train, r.val, tc).model;
    fit_laplace(r.sngp, r.train);
    return r;
  }();
  return t;
}

void expect_rows_sum_to_one(const Predictions& p) {
  for (std::size_t i = 0; i < p.size(); ++i) {
    double s = 0.0;
    for (double v : p.probs.row(i)) s += v;
    EXPECT_NEAR(s, 1.0, 1e-12);
    EXPECT_DOUBLE_EQ(p.msp_uncertainty[i], 1.0 - *std::max_element(p.probs.row(i).begin(), p.probs.row(i).end()));
    EXPECT_DOUBLE_EQ(p.entropy[i], entropy_of(p.probs.row(i)));
  }
}

Matrix grid() {
  Matrix x(25, 2);
  for (int i = 0; i < 25; ++i) {
    x(i, 0) = -3 + 1.5 * (i % 5);
    x(i, 1) = -3 + 1.5 * (i / 5);
  }
  return x;
}

}  // namespace

TEST(Predictions, UniformCase) {
  const auto p = predictions_from_probs(softmax_rows(Matrix{{0.0, 0.0}}));
  EXPECT_DOUBLE_EQ(p.probs(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(p.msp_uncertainty[0], 0.5);
  EXPECT_NEAR(p.entropy[0], std::log(2.0), 1e-15);
}

TEST(Deterministic, RowsAndIdenticalInputs) {
  const auto& t = trained();
  Matrix x = grid();
  for (std::size_t j = 0; j < 2; ++j) x(1, j) = x(0, j);
  const auto p = predict_deterministic(t.dense, x);
  expect_rows_sum_to_one(p);
  for (std::size_t k = 0; k < 2; ++k) EXPECT_EQ(p.probs(0, k), p.probs(1, k));
  EXPECT_FALSE(p.variance.has_value());
  EXPECT_THROW(predict_deterministic(t.sngp, x), InvalidArgument);
  ModelBundle fresh = t.dense;
  fresh.trained = false;
  EXPECT_THROW(predict_deterministic(fresh, x), StateError);
}

TEST(McDropout, DecompositionOracle) {
  const auto& t = trained();
  const Matrix x = grid();
  const std::uint64_t seed = 1234;
  const auto p10 = predict_mc_dropout(t.dense, x, 10, seed);
  expect_rows_sum_to_one(p10);
  Matrix mean(x.rows(), 2);
  Matrix lo(x.rows(), 2, 1.0), hi(x.rows(), 2, 0.0);
  for (std::uint64_t pass = 0; pass < 10; ++pass) {
    Rng rng(seed ^ pass);
    const auto enc = encoder_forward(t.dense.encoder, x, true, &rng);
    const Matrix p = softmax_rows(detail::affine(t.dense.dense().layer, enc.hidden));
    for (std::size_t i = 0; i < p.size(); ++i) {
      mean.values()[i] += p.values()[i] / 10.0;
      lo.values()[i] = std::min(lo.values()[i], p.values()[i]);
      hi.values()[i] = std::max(hi.values()[i], p.values()[i]);
    }
    if (pass == 0) EXPECT_EQ(predict_mc_dropout(t.dense, x, 1, seed).probs, p);
  }
  EXPECT_LT(max_abs_diff(p10.probs, mean), 1e-15);
  for (std::size_t i = 0; i < mean.size(); ++i) {
    EXPECT_GE(p10.probs.values()[i], lo.values()[i] - 1e-15);
    EXPECT_LE(p10.probs.values()[i], hi.values()[i] + 1e-15);
  }
  EXPECT_EQ(predict_mc_dropout(t.dense, x, 10, seed).probs, p10.probs);
  EXPECT_THROW(predict_mc_dropout(t.dense, x, 0, seed), InvalidArgument);
}

TEST(McDropout, ZeroRateFallsBack) {
  const auto& t = trained();
  ModelBundle m = t.dense;
  m.encoder.config.dropout_rate = 0.0;
  const Matrix x = grid();
  EXPECT_EQ(predict_mc_dropout(m, x, 7, 3).probs, predict_deterministic(m, x).probs);
}

TEST(Sngp, PureAndRowsSumToOne) {
  const auto& t = trained();
  const Matrix x = grid();
  const auto a = predict_sngp(t.sngp, x), b = predict_sngp(t.sngp, x);
  EXPECT_EQ(a.probs, b.probs);
  EXPECT_EQ(*a.variance, *b.variance);
  expect_rows_sum_to_one(a);
  EXPECT_THROW(predict_sngp(t.dense, x), InvalidArgument);
}

TEST(Sngp, LambdaZeroIsRawSoftmax) {
  const auto& t = trained();
  ModelBundle m = t.sngp;
  m.gp().mean_field.lambda = 0.0;
  const Matrix x = grid();
  EXPECT_EQ(predict_sngp(m, x).probs, softmax_rows(raw_logits(m, x)));
}

TEST(Sngp, UnfinalizedPosteriorRejected) {
  ModelBundle m = trained().sngp;
  m.gp().posterior = LaplacePosterior::prior(m.gp().posterior.dim(), 1e-3);
  EXPECT_THROW(predict_sngp(m, grid()), StateError);
}

TEST(Sngp, FarInputsAreMoreUncertain) {
  const auto& t = trained();
  const Matrix probe{{0.0, 0.0}, {1000.0, 0.0}, {0.0, -1000.0}, {-700.0, 700.0}};
  const auto p = predict_sngp(t.sngp, probe);
  for (std::size_t i = 1; i < 4; ++i) EXPECT_GT(p.msp_uncertainty[i], p.msp_uncertainty[0]);
}

TEST(Sngp, TrainingVarianceBelowFarRing) {
  const auto& t = trained();
  double radius = 0.0;
  for (std::size_t i = 0; i < t.train.size(); ++i)
    radius = std::max(radius, std::hypot(t.train.features(i, 0), t.train.features(i, 1)));
  const std::vector<double> origin{0.0, 0.0};
  const Dataset ring = gen_ood_ring(200, 10 * radius, 0.0, origin, 7);
  const auto in = predict_sngp(t.sngp, select_rows(t.train.features, std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9}));
  const auto out = predict_sngp(t.sngp, ring.features);
  std::size_t ok = 0, total = 0;
  for (double a : *in.variance)
    for (double b : *out.variance) {
      ok += a <= b;
      ++total;
    }
  EXPECT_GE(static_cast<double>(ok) / total, 0.95);
}

TEST(Dispatch, MatchesDirectCalls) {
  const auto& t = trained();
  const Matrix x = grid();
  EXPECT_EQ(predict(MethodTag::baseline, t.dense, x, 10, 1).probs, predict_deterministic(t.dense, x).probs);
  EXPECT_EQ(predict(MethodTag::mc_dropout, t.dense, x, 10, 1).probs, predict_mc_dropout(t.dense, x, 10, 1).probs);
  EXPECT_EQ(predict(MethodTag::sngp, t.sngp, x, 10, 1).probs, predict_sngp(t.sngp, x).probs);
}

TEST(Latency, OrderingAndStability) {
  const auto& t = trained();
  const Matrix row = select_rows(t.val.features, std::vector<std::size_t>{0});
  const double base = measure_latency(MethodTag::baseline, t.dense, row, 50, 301);
  const double base2 = measure_latency(MethodTag::baseline, t.dense, row, 50, 301);
  const double mc = measure_latency(MethodTag::mc_dropout, t.dense, row, 50, 301);
  EXPECT_GT(base, 0.0);
  EXPECT_LE(std::abs(base - base2), 0.5 * std::max(base, base2));
  EXPECT_GT(mc, base);
  EXPECT_THROW(measure_latency(MethodTag::baseline, t.dense, row, 0, 5), InvalidArgument);
}

TEST(PredictionsCsv, Layout) {
  const auto& t = trained();
  const Matrix x = grid();
  const auto p = predict_sngp(t.sngp, select_rows(x, std::vector<std::size_t>{0, 1}));
  std::ostringstream os;
  const std::vector<int> y{0, 1};
  write_predictions_csv(os, p, y, "id");
  const std::string s = os.str();
  EXPECT_EQ(s.substr(0, s.find('\n')), "sample_id,domain_tag,label,p_0,p_1,msp_uncertainty,entropy,variance");
  EXPECT_EQ(std::count(s.begin(), s.end(), '\n'), 3);
}
