#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

#include "jv/error.hpp"
#include "jv/metric.hpp"
#include "oracles.hpp"

using namespace jv;
using namespace jv::metric;

namespace {

const std::filesystem::path kTmp = std::filesystem::path(JV_TEST_TMP) / "metric";

JointBayesModel zero_model(std::size_t d) {
  return JointBayesModel{Tensor({d, d}), Tensor({d, d}), 0.0};
}

std::vector<double> random_vec(Rng& r, std::size_t d) {
  std::vector<double> v(d);
  for (auto& x : v) x = r.normal();
  return v;
}

JointBayesModel random_model(Rng& r, std::size_t d) {
  auto m = init_model(d, r);
  m.b = r.normal();
  return m;
}

// x^T A y by explicit double loop.
double quad(const std::vector<double>& x, const Tensor& a, const std::vector<double>& y) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = 0; j < y.size(); ++j) s += x[i] * a(i, j) * y[j];
  return s;
}

}  // namespace

TEST(Distance, ZeroAndEuclideanCases) {
  Rng r(1);
  const auto x = random_vec(r, 3), y = random_vec(r, 3);
  EXPECT_EQ(distance(zero_model(3), x, y), 0.0);
  auto m = zero_model(2);
  m.M = Tensor::identity(2);
  EXPECT_EQ(distance(m, std::vector<double>{1, 0}, std::vector<double>{0, 1}), 2.0);
  EXPECT_THROW(distance(m, std::vector<double>{1, 0, 0}, std::vector<double>{0, 1}), DimensionError);
}

TEST(Distance, MatchesLikelihoodRatioExpansion) {
  Rng r(2);
  for (int trial = 0; trial < 50; ++trial) {
    const auto m = random_model(r, 4);
    const auto x = random_vec(r, 4), y = random_vec(r, 4);
    const double expect = quad(x, m.M, x) + quad(y, m.M, y) - 2.0 * quad(x, m.R(), y);
    EXPECT_NEAR(distance(m, x, y), expect, 1e-12 * std::max(1.0, std::abs(expect)));
  }
}

TEST(Similarity, SymmetricWithSymmetricB) {
  Rng r(3);
  const auto m = random_model(r, 6);
  for (int trial = 0; trial < 50; ++trial) {
    const auto x = random_vec(r, 6), y = random_vec(r, 6);
    EXPECT_NEAR(similarity(m, x, y), similarity(m, y, x), 1e-12);
  }
}

TEST(Similarity, IdenticalUnitInputsWithIdentityMatricesGiveTwo) {
  JointBayesModel m{Tensor::identity(3), Tensor::identity(3), 0.0};
  const std::vector<double> x{0.6, 0.0, 0.8};
  EXPECT_NEAR(similarity(m, x, x), 2.0, 1e-15);
}

TEST(Similarity, BiasShiftPreservesRanking) {
  Rng r(4);
  auto m = random_model(r, 5);
  const auto probe = random_vec(r, 5);
  std::vector<std::vector<double>> gallery;
  for (int i = 0; i < 30; ++i) gallery.push_back(random_vec(r, 5));
  auto order = [&] {
    std::vector<double> s;
    for (const auto& g : gallery) s.push_back(similarity(m, probe, g));
    std::vector<std::size_t> idx(s.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return s[a] > s[b]; });
    return idx;
  };
  const auto before = order();
  m.b += 17.5;
  EXPECT_EQ(order(), before);
}

TEST(HingeStep, SatisfiedMarginIsBitIdenticalNoOp) {
  Rng r(5);
  auto m = random_model(r, 4);
  const auto x = random_vec(r, 4), y = random_vec(r, 4);
  m.b = distance(m, x, y) + 2.0;  // b - d = 2
  const auto before = m;
  EXPECT_FALSE(hinge_step(m, x, y, +1, MetricTrainConfig{}));
  EXPECT_EQ(m, before);
}

TEST(HingeStep, ScalarHandEvaluation) {
  auto m = zero_model(1);
  MetricTrainConfig cfg;
  cfg.gamma = cfg.gamma_b = 0.1;
  EXPECT_TRUE(hinge_step(m, std::vector<double>{1.0}, std::vector<double>{0.0}, -1, cfg));
  EXPECT_DOUBLE_EQ(m.M(0, 0), 0.1);
  EXPECT_EQ(m.B(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(m.b, -0.1);
}

// On the violated branch the pair term is 1 - y (b - d), linear in (M, B, b),
// so the update must equal -gamma times its finite-difference gradient.
TEST(HingeStep, UpdateIsNegativeGammaTimesFiniteDifferenceSubgradient) {
  Rng r(6);
  for (std::size_t d : {2u, 8u})
    for (int y : {+1, -1})
      for (bool sym : {false, true}) {
        auto m = random_model(r, d);
        const auto xi = random_vec(r, d), xj = random_vec(r, d);
        m.b = distance(m, xi, xj) - 5.0 * y;  // y (b - d) = -5: violated
        MetricTrainConfig cfg;
        // linear in gamma; unit steps keep the recovered update resolvable against M ~ d
        cfg.gamma = 1.0;
        cfg.gamma_b = 1.0;
        cfg.symmetrize_B = sym;
        auto after = m;
        ASSERT_TRUE(hinge_step(after, xi, xj, y, cfg));

        auto term = [&](const JointBayesModel& mm) { return 1.0 - y * similarity(mm, xi, xj); };
        // exact for a linear function at any step; a large h shrinks roundoff
        const double h = 1.0;
        auto fd = [&](double& slot) {
          const double v0 = slot;
          slot = v0 + h;
          const double fp = term(m);
          slot = v0 - h;
          const double fm = term(m);
          slot = v0;
          return (fp - fm) / (2 * h);
        };
        double worst = 0.0;
        for (std::size_t k = 0; k < d; ++k)
          for (std::size_t l = 0; l < d; ++l) {
            const double gM = fd(m.M(k, l));
            worst = std::max(worst, oracle::rel_err((after.M(k, l) - m.M(k, l)) / -cfg.gamma, gM));
            // symmetric B: gradient with respect to the symmetric parameter
            const double gkl = fd(m.B(k, l)), glk = fd(m.B(l, k));
            const double gB = sym ? 0.5 * (gkl + glk) : gkl;
            worst = std::max(worst, oracle::rel_err((after.B(k, l) - m.B(k, l)) / -cfg.gamma, gB));
          }
        const double gb = fd(m.b);
        worst = std::max(worst, oracle::rel_err((after.b - m.b) / -cfg.gamma_b, gb));
        EXPECT_LT(worst, 1e-6) << "d=" << d << " y=" << y << " sym=" << sym;
      }
}

TEST(HingeStep, KeepsMAndSymmetrizedBExactlySymmetric) {
  Rng r(7);
  auto m = init_model(6, r);
  MetricTrainConfig cfg;
  cfg.gamma = 0.05;
  for (int step = 0; step < 200; ++step) {
    const auto x = random_vec(r, 6), y = random_vec(r, 6);
    hinge_step(m, x, y, (step % 2) ? 1 : -1, cfg);
    EXPECT_EQ(m.M, transpose(m.M));
    EXPECT_EQ(m.B, transpose(m.B));
    EXPECT_NEAR(similarity(m, x, y), similarity(m, y, x), 1e-12 * std::max(1.0, std::abs(similarity(m, x, y))));
  }
}

TEST(PairSampler, CountsForTwoByTwo) {
  PairSampler s({0, 0, 1, 1}, 1, 20);
  EXPECT_EQ(s.positives().size(), 2u);
  EXPECT_EQ(s.negatives().size(), 4u);
  for (const auto& p : s.positives()) EXPECT_EQ(p.label, 1);
  for (const auto& p : s.negatives()) EXPECT_EQ(p.label, -1);
}

TEST(PairSampler, AlternatesAndRecyclesNegatives) {
  std::vector<int> labels;
  for (int s = 0; s < 6; ++s)
    for (int k = 0; k < 4; ++k) labels.push_back(s);
  PairSampler sampler(labels, 2, 3);
  EXPECT_EQ(sampler.positives().size(), 36u);
  EXPECT_EQ(sampler.negatives().size(), 108u);
  for (int e = 0; e < 5; ++e) {
    const auto pairs = sampler.next_epoch();
    ASSERT_EQ(pairs.size(), 72u);
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      EXPECT_EQ(pairs[i].label, (i % 2) ? -1 : 1);
      EXPECT_EQ(labels[pairs[i].i] == labels[pairs[i].j], pairs[i].label == 1);
    }
  }
}

TEST(PairSampler, DeterministicAndRejectsDegenerateLabels) {
  const std::vector<int> labels{0, 0, 1, 1, 2, 2, 2};
  PairSampler a(labels, 9, 20), b(labels, 9, 20);
  for (int e = 0; e < 3; ++e) EXPECT_EQ(a.next_epoch(), b.next_epoch());
  EXPECT_THROW(PairSampler({0, 1, 2}, 0, 20), FormatError);
  EXPECT_THROW(PairSampler({0, 0, 0}, 0, 20), FormatError);
}

TEST(InitModel, PsdSymmetricDeterministic) {
  Rng a(10), b(10);
  const auto m = init_model(7, a);
  EXPECT_EQ(m, init_model(7, b));
  EXPECT_EQ(m.M, transpose(m.M));
  EXPECT_EQ(m.B, transpose(m.B));
  EXPECT_EQ(m.b, 0.0);
  // Cholesky with a -1e-10 shift succeeds only for PSD input
  auto shifted = m.M;
  for (std::size_t i = 0; i < 7; ++i) shifted(i, i) += 1e-10;
  EXPECT_NO_THROW(psd_factor(shifted));
  Rng r(11);
  for (int t = 0; t < 20; ++t) {
    const auto z = random_vec(r, 7);
    EXPECT_GE(quad(z, m.M, z), -1e-10);
    EXPECT_GE(quad(z, m.B, z), -1e-10);
  }
}

TEST(TrainMetric, SeparableSetReachesZeroViolations) {
  const auto data = generate_synthetic(SyntheticEmbeddingModel::isotropic(8, 1.0, 0.01, 20, 5, 1));
  // premise: this draw is separable by cosine alone, with a visible gap
  double min_pos = 2.0, max_neg = -2.0;
  for (std::size_t i = 0; i < 100; ++i)
    for (std::size_t j = i + 1; j < 100; ++j) {
      const double c = cosine_score(data.features.row(i), data.features.row(j));
      if (data.labels[i] == data.labels[j])
        min_pos = std::min(min_pos, c);
      else
        max_neg = std::max(max_neg, c);
    }
  ASSERT_GT(min_pos, max_neg + 0.1);
  MetricTrainConfig cfg;
  cfg.gamma = 0.3;
  cfg.gamma_b = 0.03;
  cfg.epochs = 30;
  cfg.seed = 3;
  cfg.track_objective = true;
  const auto res = train_metric(data.features, data.labels, cfg);
  ASSERT_EQ(res.violation_fraction.size(), 30u);
  EXPECT_EQ(res.violation_fraction.back(), 0.0);
  EXPECT_LT(res.objective.back(), res.objective.front());
}

TEST(TrainMetric, ZeroLearningRatesReturnInitialization) {
  const auto data = generate_synthetic(SyntheticEmbeddingModel::isotropic(4, 1.0, 0.2, 6, 3, 1));
  MetricTrainConfig cfg;
  cfg.gamma = cfg.gamma_b = 0.0;
  cfg.epochs = 3;
  cfg.seed = 4;
  Rng init_rng(derive_seed(cfg.seed, "metric.init"));
  EXPECT_EQ(train_metric(data.features, data.labels, cfg).model, init_model(4, init_rng));
}

TEST(TrainMetric, AllMarginsSatisfiedIsFixedPoint) {
  // Subjects on orthogonal axes: same-subject cosine 1, cross-subject 0.
  Tensor f({8, 4});
  std::vector<int> labels;
  for (std::size_t s = 0; s < 4; ++s) {
    f(2 * s, s) = f(2 * s + 1, s) = 1.0;
    labels.insert(labels.end(), {static_cast<int>(s), static_cast<int>(s)});
  }
  JointBayesModel m{Tensor({4, 4}), scaled(Tensor::identity(4), 2.0), -2.0};  // sim = -2 + 4 cos
  MetricTrainConfig cfg;
  cfg.epochs = 5;
  const auto res = train_metric(f, labels, cfg, &m);
  EXPECT_EQ(res.model, m);
  for (double v : res.violation_fraction) EXPECT_EQ(v, 0.0);
}

TEST(TrainMetric, RejectsMismatchedInputs) {
  EXPECT_THROW(train_metric(Tensor({3, 2}), {0, 1}, MetricTrainConfig{}), DimensionError);
}

TEST(Cosine, Examples) {
  EXPECT_EQ(cosine_score(std::vector<double>{1, 0}, std::vector<double>{1, 0}), 1.0);
  EXPECT_EQ(cosine_score(std::vector<double>{1, 0}, std::vector<double>{0, 1}), 0.0);
  EXPECT_NEAR(cosine_score(std::vector<double>{1, 1}, std::vector<double>{1, 0}), 1.0 / std::sqrt(2.0), 1e-15);
  EXPECT_THROW(cosine_score(std::vector<double>{0, 0}, std::vector<double>{1, 0}), DegenerateError);
}

TEST(Synthetic, NoWithinClassNoiseGivesIdenticalSamples) {
  const auto data = generate_synthetic(SyntheticEmbeddingModel::isotropic(5, 1.0, 0.0, 4, 3, 2));
  ASSERT_EQ(data.features.rows(), 12u);
  for (std::size_t i = 0; i < 12; ++i) {
    EXPECT_NEAR(norm2(data.features.row(i)), 1.0, 1e-15);
    EXPECT_EQ(data.labels[i], static_cast<int>(i / 3));
    const std::size_t first = (i / 3) * 3;
    for (std::size_t k = 0; k < 5; ++k) EXPECT_EQ(data.features(i, k), data.features(first, k));
  }
}

TEST(Synthetic, NoIdentityVarianceMakesSameAndDifferentIndistinguishable) {
  const auto data = generate_synthetic(SyntheticEmbeddingModel::isotropic(8, 0.0, 1.0, 40, 4, 3));
  std::vector<double> same, diff;
  for (std::size_t i = 0; i < data.labels.size(); ++i)
    for (std::size_t j = i + 1; j < data.labels.size(); ++j)
      (data.labels[i] == data.labels[j] ? same : diff)
          .push_back(cosine_score(data.features.row(i), data.features.row(j)));
  EXPECT_GT(oracle::ks_pvalue(same, diff), 0.01);
  // control: with identity variance the same test rejects decisively
  const auto sep = generate_synthetic(SyntheticEmbeddingModel::isotropic(8, 1.0, 0.25, 40, 4, 3));
  same.clear();
  diff.clear();
  for (std::size_t i = 0; i < sep.labels.size(); ++i)
    for (std::size_t j = i + 1; j < sep.labels.size(); ++j)
      (sep.labels[i] == sep.labels[j] ? same : diff)
          .push_back(cosine_score(sep.features.row(i), sep.features.row(j)));
  EXPECT_LT(oracle::ks_pvalue(same, diff), 1e-6);
}

TEST(Synthetic, DeterministicAndRejectsIndefiniteCovariance) {
  const auto m = SyntheticEmbeddingModel::isotropic(4, 1.0, 0.1, 3, 2, 5);
  EXPECT_EQ(generate_synthetic(m).features, generate_synthetic(m).features);
  auto bad = m;
  bad.S_eps(1, 1) = -0.5;
  EXPECT_THROW(generate_synthetic(bad), DegenerateError);
}

TEST(ModelFile, RoundTripAndCorruption) {
  std::filesystem::create_directories(kTmp);
  Rng r(13);
  const auto m = random_model(r, 5);
  m.save(kTmp / "m.jvjb");
  EXPECT_EQ(JointBayesModel::load(kTmp / "m.jvjb"), m);
  const auto bytes = oracle::slurp(kTmp / "m.jvjb");
  EXPECT_EQ(bytes.size(), 4u + 4u + 8u * (25 + 25 + 1));
  std::ofstream(kTmp / "bad.jvjb", std::ios::binary) << "JVXX" << bytes.substr(4);
  EXPECT_THROW(JointBayesModel::load(kTmp / "bad.jvjb"), FormatError);
  std::ofstream(kTmp / "long.jvjb", std::ios::binary) << bytes << 'x';
  EXPECT_THROW(JointBayesModel::load(kTmp / "long.jvjb"), FormatError);
  EXPECT_THROW(JointBayesModel::load(kTmp / "missing.jvjb"), IoError);
}
