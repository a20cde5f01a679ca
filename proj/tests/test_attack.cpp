#include "test_util.hpp"

using namespace rgd;
using namespace rgd::test;

namespace {

ThreatModel tm_of(NormKind k, double eps, int steps, bool early = true) {
  ThreatModel tm;
  tm.norm = k;
  tm.eps = eps;
  tm.steps = steps;
  tm.step = step_size_rule(eps, std::max(steps, 1));
  tm.early_stop = early;
  return tm;
}

LinearModel binary_model(const Vec& w) {
  LinearModel m;
  m.w.resize(2, w.size());
  m.w.row(0) = w.transpose();
  m.w.row(1) = -w.transpose();
  m.b = Vec::Zero(2);
  return m;
}

LinearModel random_linear(int classes, int d, std::uint64_t seed) {
  LinearModel m;
  const Tensor w = random_tensor({std::size_t(classes), std::size_t(d)}, seed);
  m.w = ConstMatMap(w.data(), classes, d);
  m.b = Vec::Zero(classes);
  return m;
}

double target_log_prob(const LinearModel& m, const Tensor& x, int y) {
  const Tensor lp = log_softmax(m.logits(x, std::vector<int>(x.dim(0), 0)));
  return lp.row(0)[std::size_t(y - 1)];
}

}  // namespace

TEST(Project, WorkedExamples) {
  const ThreatModel l2 = tm_of(NormKind::L2, 0.5, 1);
  const Tensor inside({2}, std::vector<double>{0.3, 0.0});
  EXPECT_EQ(project(inside, l2), inside);
  const Tensor out = project(Tensor({2}, std::vector<double>{2.0, 0.0}), l2);
  EXPECT_DOUBLE_EQ(out[0], 0.5);
  EXPECT_EQ(out[1], 0.0);
  const ThreatModel linf = tm_of(NormKind::Linf, 4.0 / 255.0, 1);
  const Tensor c = project(Tensor({2}, std::vector<double>{0.1, -0.001}), linf);
  EXPECT_EQ(c[0], 4.0 / 255.0);
  EXPECT_EQ(c[1], -0.001);
}

TEST(Project, IdempotentExactly) {
  for (NormKind k : {NormKind::L2, NormKind::Linf})
    for (std::uint64_t s = 0; s < 500; ++s) {
      RngStream r(s, 3);
      const ThreatModel tm = tm_of(k, 0.01 + 2.0 * r.uniform(), 1);
      const Tensor d = random_tensor({37}, s, 0.1 + 3.0 * r.uniform());
      const Tensor once = project(d, tm);
      EXPECT_EQ(project(once, tm), once);
      EXPECT_LE(norm(once, k), tm.eps + 1e-9);
    }
}

TEST(StepSizeRule, Values) {
  EXPECT_NEAR(step_size_rule(0.5, 7), 0.17857, 1e-5);
  EXPECT_DOUBLE_EQ(step_size_rule(0.25, 5), 0.125);
  EXPECT_DOUBLE_EQ(step_size_rule(0.3, 1), 2.5 * 0.3);
  EXPECT_THROW(step_size_rule(0.5, 0), std::invalid_argument);
  EXPECT_DOUBLE_EQ(default_step_size(NormKind::L2, 0.5, 7), 0.083);
  EXPECT_DOUBLE_EQ(default_step_size(NormKind::L2, 0.3, 5), 2.5 * 0.3 / 5);
  EXPECT_DOUBLE_EQ(default_step_size(NormKind::Linf, 0.5, 7), 2.5 * 0.5 / 7);
}

TEST(Pgd, ZeroIterationsLeavesInputAndReportsInitialMistakes) {
  const LinearModel m = random_linear(3, 6, 1);
  const Tensor x = random_tensor({20, 1, 2, 3}, 2);
  std::vector<int> y(20, 2);
  const auto res = pgd_untargeted(m, x, std::vector<int>(20, 0), y, tm_of(NormKind::L2, 0.5, 0));
  EXPECT_EQ(res.x, x);
  const auto pred = argmax_rows(m.logits(x, std::vector<int>(20, 0)));
  for (std::size_t i = 0; i < 20; ++i) {
    EXPECT_EQ(res.report.success[i], pred[i] != 2);
    EXPECT_EQ(res.report.iterations[i], 0);
  }
}

TEST(Pgd, LinearBinaryModelReachesClosedFormWorstCase) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const Tensor wt = random_tensor({8}, 10 + s);
    const Vec w = ConstVecMap(wt.data(), 8);
    const LinearModel m = binary_model(w);
    // Start deep inside class 1 so the empty-ball radius never flips the prediction.
    Tensor x({1, 1, 2, 4});
    VecMap(x.data(), 8) = 5.0 * w / w.norm();
    const auto res = pgd_untargeted(m, x, std::vector<int>{0}, std::vector<int>{1}, tm_of(NormKind::L2, 0.5, 7, false));
    const Vec delta = ConstVecMap(res.x.data(), 8) - ConstVecMap(x.data(), 8);
    const Vec expected = -0.5 * w / w.norm();
    EXPECT_LT((delta - expected).cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(Pgd, AlreadyMisclassifiedStopsAtZero) {
  const LinearModel m = binary_model(Vec::Ones(4));
  Tensor x({1, 1, 2, 2}, -1.0);
  const auto res = pgd_untargeted(m, x, std::vector<int>{0}, std::vector<int>{1}, tm_of(NormKind::L2, 0.5, 7));
  EXPECT_EQ(res.report.iterations[0], 0);
  EXPECT_TRUE(res.report.success[0]);
  EXPECT_EQ(res.x, x);
}

TEST(Pgd, ThreatBallContainmentOverThousandAttacksPerNorm) {
  const TimeClassifier clf(tiny_classifier(), 3);
  for (NormKind k : {NormKind::L2, NormKind::Linf}) {
    std::size_t checked = 0;
    for (std::uint64_t s = 0; s < 20; ++s) {
      RngStream r(s, 4);
      ThreatModel tm = tm_of(k, k == NormKind::L2 ? 0.05 + 2.0 * r.uniform() : 0.01 + 0.2 * r.uniform(),
                            1 + int(r.below(6)), r.uniform() < 0.5);
      tm.step *= 0.5 + r.uniform();
      tm.random_start = r.uniform() < 0.3;
      const Tensor x = random_tensor({50, 1, 8, 8}, 100 + s);
      std::vector<int> t(50), y(50);
      for (std::size_t i = 0; i < 50; ++i) {
        t[i] = int(r.below(11));
        y[i] = 1 + int(r.below(3));
      }
      RngStream start(s, 5);
      const auto res = pgd_untargeted(clf, x, t, y, tm, &start);
      for (std::size_t i = 0; i < 50; ++i) {
        std::vector<double> d(64);
        for (std::size_t q = 0; q < 64; ++q) d[q] = res.x.row(i)[q] - x.row(i)[q];
        ASSERT_LE(norm(d, k), tm.eps + 1e-9);
        ASSERT_NEAR(res.report.perturbation_norm[i], norm(d, k), 1e-12);
        ASSERT_LE(res.report.iterations[i], tm.steps);
        ++checked;
      }
    }
    EXPECT_EQ(checked, 1000u);
  }
}

TEST(Pgd, EarlyStopHaltsAtFirstMisclassification) {
  const TimeClassifier clf(tiny_classifier(), 21);
  const Tensor x = random_tensor({40, 1, 8, 8}, 22);
  std::vector<int> t(40), y(40);
  for (std::size_t i = 0; i < 40; ++i) {
    t[i] = int(i % 11);
    y[i] = 1 + int(i % 3);
  }
  const int steps = 6;
  const ThreatModel stop = tm_of(NormKind::L2, 1.5, steps, true);
  const auto res = pgd_untargeted(clf, x, t, y, stop);
  // Replay without early stopping: iterate m is the m-step attack.
  ThreatModel replay = stop;
  replay.early_stop = false;
  std::vector<int> first(40, -1);
  for (int m = 0; m <= steps; ++m) {
    replay.steps = m;
    const auto r = pgd_untargeted(clf, x, t, y, replay);
    for (std::size_t i = 0; i < 40; ++i)
      if (first[i] < 0 && r.report.success[i]) first[i] = m;
  }
  int stopped = 0;
  for (std::size_t i = 0; i < 40; ++i) {
    if (first[i] >= 0) {
      EXPECT_EQ(res.report.iterations[i], first[i]) << i;
      EXPECT_TRUE(res.report.success[i]);
      ++stopped;
    } else {
      EXPECT_EQ(res.report.iterations[i], steps);
      EXPECT_FALSE(res.report.success[i]);
    }
  }
  EXPECT_GT(stopped, 0);
  EXPECT_LT(stopped, 40);
}

// On a two-class linear model the ascent direction is fixed, so every step must help.
TEST(Pgd, UntargetedNeverDecreasesLossOnLinearModel) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const Tensor wt = random_tensor({12}, 60 + s);
    const LinearModel m = binary_model(ConstVecMap(wt.data(), 12));
    const Tensor x = random_tensor({1, 1, 3, 4}, 30 + s, 0.1);
    const std::vector<int> y{1 + int(s % 2)}, t{0};
    double prev = ce_loss(m.logits(x, t), y);
    for (int k = 1; k <= 7; ++k) {
      ThreatModel tm = tm_of(NormKind::L2, 1.0, k, false);
      tm.step = 0.2;
      const double l = ce_loss(m.logits(pgd_untargeted(m, x, t, y, tm).x, t), y);
      EXPECT_GE(l, prev - 1e-12);
      prev = l;
    }
  }
}

TEST(PgdTargeted, LogProbabilityNonDecreasingOnLinearModel) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const Tensor wt = random_tensor({12}, 80 + s);
    const LinearModel m = binary_model(ConstVecMap(wt.data(), 12));
    const Tensor x = random_tensor({1, 1, 3, 4}, 50 + s, 0.1);
    const int target = 1 + int(s % 2);
    double prev = target_log_prob(m, x, target);
    for (int k = 1; k <= 7; ++k) {
      ThreatModel tm = tm_of(NormKind::L2, 1.0, k, true);
      tm.step = 0.25;
      const double lp = target_log_prob(m, pgd_targeted(m, x, std::vector<int>{0}, std::vector<int>{target}, tm).x, target);
      EXPECT_GE(lp, prev - 1e-12);
      prev = lp;
    }
  }
}

TEST(PgdTargeted, ZeroRadiusReturnsInput) {
  const TimeClassifier clf(tiny_classifier(), 2);
  const Tensor x = random_tensor({5, 1, 8, 8}, 3);
  for (NormKind k : {NormKind::L2, NormKind::Linf}) {
    ThreatModel tm = tm_of(k, 0.0, 7);
    tm.step = 0.5;
    EXPECT_EQ(pgd_targeted(clf, x, std::vector<int>(5, 0), std::vector<int>{1, 2, 3, 1, 2}, tm).x, x);
  }
}

TEST(PgdTargeted, NeverStopsEarly) {
  const LinearModel m = random_linear(3, 4, 4);
  const Tensor x = random_tensor({6, 1, 2, 2}, 5);
  ThreatModel tm = tm_of(NormKind::L2, 3.0, 5, true);
  const auto res = pgd_targeted(m, x, std::vector<int>(6, 0), std::vector<int>(6, 2), tm);
  for (int it : res.report.iterations) EXPECT_EQ(it, 5);
}

TEST(Pgd, RandomStartNeedsRngAndStaysInBall) {
  const LinearModel m = random_linear(3, 4, 4);
  const Tensor x = random_tensor({6, 1, 2, 2}, 5);
  ThreatModel tm = tm_of(NormKind::L2, 0.4, 0, false);
  tm.random_start = true;
  EXPECT_THROW(pgd_untargeted(m, x, std::vector<int>(6, 0), std::vector<int>(6, 1), tm), std::invalid_argument);
  RngStream r(1, 1);
  const auto res = pgd_untargeted(m, x, std::vector<int>(6, 0), std::vector<int>(6, 1), tm, &r);
  EXPECT_NE(res.x, x);
  for (double n : res.report.perturbation_norm) EXPECT_LE(n, 0.4 + 1e-9);
}
