#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numeric>

#include "jv/error.hpp"
#include "jv/eval.hpp"
#include "jv/rng.hpp"
#include "oracles.hpp"

using namespace jv;
using namespace jv::eval;

namespace {

const std::filesystem::path kTmp = std::filesystem::path(JV_TEST_TMP) / "eval";

struct Scored {
  std::vector<double> s;
  std::vector<int> y;
};

// Genuine ~ N(shift, 1), impostor ~ N(0, 1); scores rounded to `grain` to
// force ties when grain > 0.
Scored gaussian_pairs(Rng& r, std::size_t n, double shift, double grain = 0.0) {
  Scored out;
  for (std::size_t i = 0; i < n; ++i) {
    const int y = (i % 2) ? -1 : 1;
    double v = r.normal() + (y > 0 ? shift : 0.0);
    if (grain > 0) v = std::round(v / grain) * grain;
    out.s.push_back(v);
    out.y.push_back(y);
  }
  return out;
}

}  // namespace

TEST(Roc, PerfectScorer) {
  const std::vector<double> s{0.9, 0.8, 0.1, 0.2};
  const std::vector<int> y{1, 1, -1, -1};
  const auto c = roc(s, y);
  EXPECT_EQ(c.positives, 2u);
  EXPECT_EQ(c.negatives, 2u);
  EXPECT_EQ(tar_at_far(c, 0.01), 1.0);
  EXPECT_EQ(tar_at_far(c, 1.0), 1.0);
  bool tar1_at_far0 = false;
  for (const auto& p : c.points) tar1_at_far0 |= (p.far == 0.0 && p.tar == 1.0);
  EXPECT_TRUE(tar1_at_far0);
}

TEST(Roc, ConstantScoresGiveOnlyTrivialPoints) {
  const std::vector<double> s(8, 0.3);
  const std::vector<int> y{1, -1, 1, -1, 1, -1, 1, -1};
  const auto c = roc(s, y);
  ASSERT_EQ(c.points.size(), 2u);
  EXPECT_EQ(c.points[0].far, 0.0);
  EXPECT_EQ(c.points[0].tar, 0.0);
  EXPECT_EQ(c.points[1].far, 1.0);
  EXPECT_EQ(c.points[1].tar, 1.0);
  // step convention: below FAR 1 only the reject-all point is admissible
  EXPECT_EQ(tar_at_far(c, 0.5), 0.0);
  EXPECT_EQ(tar_at_far(c, 1.0), 1.0);
}

TEST(Roc, MatchesBruteForceSweepExactly) {
  Rng r(1);
  for (double grain : {0.0, 0.25}) {
    const auto d = gaussian_pairs(r, 500, 0.8, grain);
    const auto c = roc(d.s, d.y);
    const auto ref = oracle::brute_roc(d.s, d.y);
    ASSERT_EQ(c.points.size(), ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) {
      EXPECT_EQ(c.points[i].threshold, ref[i].threshold);
      EXPECT_EQ(c.points[i].far, ref[i].far);
      EXPECT_EQ(c.points[i].tar, ref[i].tar);
    }
    for (double far : {1e-3, 1e-2, 0.05, 0.1, 0.5, 1.0})
      EXPECT_EQ(tar_at_far(c, far), oracle::brute_tar_at_far(ref, far));
  }
}

TEST(Roc, MonotoneInThresholdAndInvariantUnderMonotoneMaps) {
  Rng r(2);
  const auto d = gaussian_pairs(r, 300, 1.0);
  const auto c = roc(d.s, d.y);
  for (std::size_t i = 1; i < c.points.size(); ++i) {
    EXPECT_LT(c.points[i].threshold, c.points[i - 1].threshold);
    EXPECT_GE(c.points[i].far, c.points[i - 1].far);
    EXPECT_GE(c.points[i].tar, c.points[i - 1].tar);
  }
  std::vector<double> mapped;
  for (double v : d.s) mapped.push_back(std::exp(0.5 * v) + 3.0);
  const auto m = roc(mapped, d.y);
  ASSERT_EQ(m.points.size(), c.points.size());
  for (std::size_t i = 0; i < c.points.size(); ++i) {
    EXPECT_EQ(m.points[i].far, c.points[i].far);
    EXPECT_EQ(m.points[i].tar, c.points[i].tar);
  }
  double prev = 0.0;
  for (double far = 0.001; far <= 1.0; far += 0.01) {
    const double t = tar_at_far(c, far);
    EXPECT_GE(t, prev);
    prev = t;
  }
}

TEST(Roc, RejectsSingleClassAndBadFar) {
  EXPECT_THROW(roc(std::vector<double>{1, 2}, std::vector<int>{1, 1}), FormatError);
  const auto c = roc(std::vector<double>{1, 2}, std::vector<int>{1, -1});
  EXPECT_ANY_THROW(tar_at_far(c, 0.0));
  EXPECT_ANY_THROW(tar_at_far(c, 1.5));
}

TEST(TarAtFar, ChanceScorerTracksFar) {
  Rng r(3);
  std::vector<double> s;
  std::vector<int> y;
  for (int i = 0; i < 100000; ++i) {
    s.push_back(r.uniform());
    y.push_back(i % 2 ? 1 : -1);
  }
  EXPECT_NEAR(tar_at_far(roc(s, y), 0.01), 0.01, 0.005);
}

TEST(Cmc, DiagonalAndReversed) {
  const std::vector<std::string> g{"a", "b", "c", "d"};
  Tensor diag({4, 4});
  for (std::size_t i = 0; i < 4; ++i) diag(i, i) = 1.0;
  const auto good = cmc(diag, g, g);
  EXPECT_EQ(good.at(1), 1.0);
  Tensor rev({4, 4}, 1.0);
  for (std::size_t i = 0; i < 4; ++i) rev(i, i) = -1.0;
  const auto bad = cmc(rev, g, g);
  EXPECT_EQ(bad.at(1), 0.0);
  EXPECT_EQ(bad.at(3), 0.0);
  EXPECT_EQ(bad.at(4), 1.0);
  EXPECT_EQ(bad.at(10), 1.0);  // saturates past the gallery size
}

TEST(Cmc, TiesCountAgainstTheProbe) {
  const auto c = cmc(Tensor({3, 1}, 0.5), {"a", "b", "c"}, {"b"});
  EXPECT_EQ(c.accuracy, (std::vector<double>{0.0, 0.0, 1.0}));
}

TEST(Cmc, MatchesSortOracleExactly) {
  Rng r(4);
  std::vector<std::string> g, p;
  for (int i = 0; i < 20; ++i) g.push_back("s" + std::to_string(i));
  for (int j = 0; j < 50; ++j) p.push_back("s" + std::to_string(r.uniform_int(20)));
  for (double grain : {0.0, 0.5}) {
    Tensor sim({20, 50});
    for (auto& v : sim.values()) {
      v = r.normal();
      if (grain > 0) v = std::round(v / grain) * grain;
    }
    const auto c = cmc(sim, g, p);
    EXPECT_EQ(c.accuracy, oracle::sort_cmc(sim, g, p));
    for (std::size_t k = 1; k < c.accuracy.size(); ++k) EXPECT_GE(c.accuracy[k], c.accuracy[k - 1]);
    EXPECT_EQ(c.accuracy.back(), 1.0);
  }
}

TEST(Cmc, MissingSubjectPolicy) {
  const Tensor sim({2, 2}, {1, 0, 0, 1});
  EXPECT_THROW(cmc(sim, {"a", "b"}, {"a", "z"}), FormatError);
  const auto c = cmc(sim, {"a", "b"}, {"a", "z"}, MissingSubject::skip);
  EXPECT_EQ(c.probes, 1u);
  EXPECT_EQ(c.skipped, 1u);
  EXPECT_EQ(c.at(1), 1.0);
}

TEST(Aggregate, Examples) {
  const auto a = aggregate_splits(std::vector<double>{0.7, 0.8});
  EXPECT_DOUBLE_EQ(a.mean, 0.75);
  EXPECT_NEAR(a.std, 0.0707106781186548, 1e-15);
  EXPECT_EQ(aggregate_splits(std::vector<double>(5, 0.42)).std, 0.0);
  EXPECT_EQ(aggregate_splits(std::vector<double>{0.3}).std, 0.0);
  EXPECT_THROW(aggregate_splits(std::vector<double>{}), FormatError);
}

TEST(Aggregate, MatchesDirectFormula) {
  Rng r(5);
  std::vector<double> v;
  for (int i = 0; i < 10; ++i) v.push_back(r.uniform());
  double sum = 0.0;
  for (double x : v) sum += x;
  const double mean = sum / 10.0;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  const auto a = aggregate_splits(v);
  EXPECT_EQ(a.mean, mean);
  EXPECT_EQ(a.std, std::sqrt(ss / 9.0));
  EXPECT_EQ(a.count, 10u);
  EXPECT_GE(a.mean, *std::min_element(v.begin(), v.end()));
  EXPECT_LE(a.mean, *std::max_element(v.begin(), v.end()));
}

TEST(Lfw, PerfectAndConstantScorers) {
  std::vector<double> perfect, constant;
  std::vector<int> y;
  for (int i = 0; i < 6000; ++i) {
    y.push_back(i % 2 ? -1 : 1);
    perfect.push_back(y.back() > 0 ? 1.0 + i * 1e-4 : -1.0 - i * 1e-4);
    constant.push_back(0.5);
  }
  const auto p = lfw_protocol(perfect, y);
  EXPECT_EQ(p.summary.mean, 1.0);
  EXPECT_EQ(p.summary.std, 0.0);
  EXPECT_EQ(p.summary.count, 10u);
  const auto c = lfw_protocol(constant, y);
  EXPECT_EQ(c.summary.mean, 0.5);
}

// Exhaustive oracle: the chosen threshold must reach the best training
// accuracy over every candidate (all scores, +inf and a dense grid), and the
// held-out accuracy must equal a direct count at that threshold.
TEST(Lfw, MatchesExhaustiveThresholdGrid) {
  Rng r(6);
  std::vector<Fold> folds(10);
  for (auto& f : folds) {
    const auto d = gaussian_pairs(r, 600, 1.5, 0.05);
    f.scores = d.s;
    f.labels = d.y;
  }
  const auto res = lfw_protocol(folds);
  double mean = 0.0;
  for (std::size_t held = 0; held < 10; ++held) {
    std::vector<double> s;
    std::vector<int> y;
    for (std::size_t f = 0; f < 10; ++f)
      if (f != held) {
        s.insert(s.end(), folds[f].scores.begin(), folds[f].scores.end());
        y.insert(y.end(), folds[f].labels.begin(), folds[f].labels.end());
      }
    auto acc = [](const std::vector<double>& s, const std::vector<int>& y, double t) {
      double ok = 0;
      for (std::size_t i = 0; i < s.size(); ++i) ok += ((s[i] >= t) == (y[i] > 0));
      return ok / static_cast<double>(s.size());
    };
    std::vector<double> candidates = s;
    candidates.push_back(INFINITY);
    for (int k = 0; k <= 10000; ++k) candidates.push_back(-6.0 + 12.0 * k / 10000.0);
    double best = 0.0;
    for (double t : candidates) best = std::max(best, acc(s, y, t));
    const double t = res.thresholds[held];
    EXPECT_NEAR(acc(s, y, t), best, 1e-12);
    const double held_acc = acc(folds[held].scores, folds[held].labels, t);
    EXPECT_NEAR(res.fold_accuracy[held], held_acc, 1e-12);
    mean += held_acc / 10.0;
  }
  EXPECT_NEAR(res.summary.mean, mean, 1e-12);
  EXPECT_GT(res.summary.mean, 0.7);
}

TEST(Lfw, RejectsMalformedFolds) {
  EXPECT_THROW(lfw_protocol(std::vector<Fold>(9)), FormatError);
  std::vector<Fold> empty(10);
  EXPECT_THROW(lfw_protocol(empty), FormatError);
  EXPECT_THROW(lfw_protocol(std::vector<double>(15, 0.0), std::vector<int>(15, 1)), FormatError);
}

TEST(BestThreshold, TiesGoToSmallestCandidate) {
  // accepting {0.9} or {0.9, 0.5} both give 3/4 correct; the lower cut wins
  const std::vector<double> s{0.9, 0.5, 0.5, 0.1};
  const std::vector<int> y{1, 1, -1, -1};
  const double t = best_threshold(s, y);
  EXPECT_DOUBLE_EQ(t, 0.3);
  EXPECT_EQ(verification_accuracy(s, y, t), 0.75);
}

TEST(SplitReport, EvaluateAndEmitCurves) {
  Rng r(7);
  std::vector<std::string> g, p;
  for (int i = 0; i < 12; ++i) g.push_back("s" + std::to_string(i));
  for (int j = 0; j < 30; ++j) p.push_back(g[j % 12]);
  SplitReport report;
  report.scorer = "cosine";
  for (int split : {1, 2}) {
    Tensor sim({12, 30});
    for (std::size_t i = 0; i < 12; ++i)
      for (std::size_t j = 0; j < 30; ++j) sim(i, j) = r.normal() + (g[i] == p[j] ? 1.5 : 0.0);
    report.splits.push_back(evaluate_split(split, sim, g, p));
  }
  const auto& s1 = report.splits[0];
  EXPECT_EQ(s1.roc.positives, 30u);
  EXPECT_EQ(s1.roc.negatives, 12u * 30 - 30);
  EXPECT_EQ(s1.tar_far_1e2, tar_at_far(s1.roc, 0.01));
  EXPECT_EQ(s1.rank5, s1.cmc.at(5));
  EXPECT_EQ(report.aggregate(&SplitMetrics::rank1).count, 2u);
  const auto text = report.to_text();
  EXPECT_NE(text.find("mean"), std::string::npos);
  EXPECT_NE(text.find("std"), std::string::npos);

  std::filesystem::remove_all(kTmp / "curves");
  emit_curves(report, kTmp / "curves");
  for (int split : {1, 2}) {
    const auto& m = report.splits[split - 1];
    const auto roc_path = kTmp / "curves" / ("roc_split" + std::to_string(split) + ".csv");
    const auto cmc_path = kTmp / "curves" / ("cmc_split" + std::to_string(split) + ".csv");
    const auto rt = read_roc_csv(roc_path);
    ASSERT_EQ(rt.size(), m.roc.points.size());
    for (std::size_t i = 0; i < rt.size(); ++i) {
      EXPECT_EQ(rt[i].first, m.roc.points[i].far);
      EXPECT_EQ(rt[i].second, m.roc.points[i].tar);
    }
    EXPECT_EQ(read_cmc_csv(cmc_path), m.cmc.accuracy);
    const auto roc_text = oracle::slurp(roc_path), cmc_text = oracle::slurp(cmc_path);
    EXPECT_EQ(roc_text.substr(0, 8), "far,tar\n");
    EXPECT_EQ(cmc_text.substr(0, 14), "rank,accuracy\n");
    EXPECT_EQ(static_cast<std::size_t>(std::count(roc_text.begin(), roc_text.end(), '\n')), m.roc.points.size() + 1);
    EXPECT_EQ(static_cast<std::size_t>(std::count(cmc_text.begin(), cmc_text.end(), '\n')), m.cmc.accuracy.size() + 1);
  }
}

TEST(Evaluation, PureFunctionOfInputs) {
  Rng r(8);
  const auto d = gaussian_pairs(r, 200, 0.5);
  const auto a = roc(d.s, d.y), b = roc(d.s, d.y);
  ASSERT_EQ(a.points.size(), b.points.size());
  for (std::size_t i = 0; i < a.points.size(); ++i) EXPECT_EQ(a.points[i].tar, b.points[i].tar);
}

TEST(PairList, RoundTripAndLabelForms) {
  std::filesystem::create_directories(kTmp);
  write_pair_list(kTmp / "pairs.csv", {{"a", "b", 1}, {"c", "d", -1}});
  const auto back = read_pair_list(kTmp / "pairs.csv");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].id_a, "a");
  EXPECT_EQ(back[0].label, 1);
  EXPECT_EQ(back[1].label, -1);
  std::ofstream(kTmp / "zero.csv") << "x,y,0\nx,x,1\n";
  const auto z = read_pair_list(kTmp / "zero.csv");
  EXPECT_EQ(z[0].label, -1);
  EXPECT_EQ(z[1].label, 1);
  std::ofstream(kTmp / "bad.csv") << "x,y,2\n";
  EXPECT_THROW(read_pair_list(kTmp / "bad.csv"), FormatError);
}
