#include <cmath>

#include <gtest/gtest.h>

#include "support.hpp"

using namespace introd;
using namespace introd::testing;

namespace {

Sample one_hot_sample(std::size_t classes, std::uint32_t a) {
  Sample s;
  s.gt_answers = {a};
  s.gt_dist = ProbVector::one_hot(classes, a);
  return s;
}

MatchScores scores(double id, double ood) { return {id, ood, ScoreMode::xe}; }

/// Positive score drawn log-uniformly over [1e-3, 1e3].
double random_score(Rng& rng) { return std::pow(10.0, 6.0 * rng.uniform() - 3.0); }

}  // namespace

// ---------------------------------------------------------------------------
// match_scores
// ---------------------------------------------------------------------------

TEST(MatchScores, ProbSumsTheGroundTruthMass) {
  const Sample s = one_hot_sample(3, 0);
  const auto m = match_scores(ProbVector{0.7, 0.2, 0.1}, ProbVector{0.1, 0.1, 0.8}, s, ScoreMode::prob);
  EXPECT_DOUBLE_EQ(m.s_id, 0.7);
  EXPECT_DOUBLE_EQ(m.s_ood, 0.1);
}

TEST(MatchScores, ProbHandlesMultiAnswerGroundTruth) {
  Sample s;
  s.gt_answers = {0, 1};
  s.gt_dist = ProbVector{0.5, 0.5, 0.0};
  const auto m = match_scores(ProbVector{0.4, 0.3, 0.3}, ProbVector{0.4, 0.3, 0.3}, s, ScoreMode::prob);
  EXPECT_NEAR(m.s_id, 0.7, 1e-15);
}

TEST(MatchScores, XeIsInverseCrossEntropy) {
  const Sample s = one_hot_sample(2, 1);
  const auto m = match_scores(ProbVector{0.5, 0.5}, ProbVector{0.5, 0.5}, s, ScoreMode::xe);
  EXPECT_NEAR(m.s_id, 1.0 / std::log(2.0), 1e-12);
  EXPECT_NEAR(m.s_id, 1.4427, 1e-4);
}

TEST(MatchScores, PerfectFitGivesLargeFiniteScore) {
  const Sample s = one_hot_sample(3, 2);
  const auto x = match_scores(ProbVector::one_hot(3, 2), ProbVector::one_hot(3, 0), s, ScoreMode::xe);
  EXPECT_TRUE(std::isfinite(x.s_id));
  EXPECT_GT(x.s_id, 1e10);
  const auto p = match_scores(ProbVector::one_hot(3, 0), ProbVector::one_hot(3, 0), s, ScoreMode::prob);
  EXPECT_EQ(p.s_id, kProbEpsilon);
}

TEST(MatchScores, EmptyGroundTruthIsInvalid) {
  Sample s;
  s.gt_dist = ProbVector{0.5, 0.5};
  EXPECT_THROW(match_scores(ProbVector{0.5, 0.5}, ProbVector{0.5, 0.5}, s, ScoreMode::prob), InvalidSample);
}

// ---------------------------------------------------------------------------
// weights
// ---------------------------------------------------------------------------

TEST(Weights, SpecExamples) {
  const auto eq = weights(scores(0.4, 0.4), Variant::soft());
  EXPECT_EQ(eq.w_id, 0.5);
  EXPECT_EQ(eq.w_ood, 0.5);
  EXPECT_NEAR(weights(scores(2.0, 1.0), Variant::soft()).w_id, 1.0 / 3.0, 1e-15);
  EXPECT_EQ(weights(scores(0.9, 0.3), Variant::hard()).w_id, 0.0);
  EXPECT_EQ(weights(scores(0.3, 0.3), Variant::hard()).w_id, 1.0);
  EXPECT_EQ(weights(scores(2.0, 1.0), Variant::fixed(0.25)).w_id, 0.25);
  EXPECT_NEAR(weights(scores(2.0, 1.0), Variant::proportional()).w_id, 2.0 / 3.0, 1e-15);
}

TEST(Weights, SumToOneExactly) {
  Rng rng(41);
  for (int i = 0; i < 1000; ++i) {
    for (auto v : {Variant::soft(), Variant::hard(), Variant::proportional(), Variant::fixed(rng.uniform())}) {
      const auto w = weights(scores(random_score(rng), random_score(rng)), v);
      ASSERT_EQ(w.w_id + w.w_ood, 1.0);
    }
  }
}

// w_id = s_ood / (s_id + s_ood) with s = 1/XE collapses to XE_id / (XE_id + XE_ood).
TEST(Weights, SoftXeEqualsCrossEntropyRatio) {
  Rng rng(42);
  for (int i = 0; i < 1000; ++i) {
    const std::size_t n = 2 + rng.uniform_int(8);
    const Sample s = random_gt_sample(rng, n);
    const ProbVector pid = random_prob(rng, n, 3.0);
    const ProbVector pood = random_prob(rng, n, 3.0);
    const double xe_id = cross_entropy(s.gt_dist, pid);
    const double xe_ood = cross_entropy(s.gt_dist, pood);
    const auto w = weights(match_scores(pid, pood, s, ScoreMode::xe), Variant::soft());
    ASSERT_NEAR(w.w_id, xe_id / (xe_id + xe_ood), 1e-12) << "case " << i;
  }
}

TEST(Weights, ScaleInvariance) {
  Rng rng(43);
  for (int i = 0; i < 1000; ++i) {
    const double a = random_score(rng), b = random_score(rng);
    // Powers of two scale exactly, so the comparison can be exact.
    const double lambda = std::ldexp(1.0, static_cast<int>(rng.uniform_int(40)) - 20);
    for (auto v : {Variant::soft(), Variant::hard()}) {
      ASSERT_EQ(weights(scores(a, b), v).w_id, weights(scores(lambda * a, lambda * b), v).w_id);
    }
    // Any other positive factor agrees to rounding.
    const double mu = random_score(rng);
    ASSERT_NEAR(weights(scores(a, b), Variant::soft()).w_id, weights(scores(mu * a, mu * b), Variant::soft()).w_id,
                1e-12);
    ASSERT_EQ(weights(scores(a, b), Variant::hard()).w_id, weights(scores(mu * a, mu * b), Variant::hard()).w_id);
  }
}

TEST(Weights, HardAgreesWithSoftThreshold) {
  Rng rng(44);
  for (int i = 0; i < 1000; ++i) {
    const double a = random_score(rng);
    const double b = i % 10 == 0 ? a : random_score(rng);  // exercise ties
    const bool hard_id = weights(scores(a, b), Variant::hard()).w_id == 1.0;
    const bool soft_id = weights(scores(a, b), Variant::soft()).w_id >= 0.5;
    ASSERT_EQ(hard_id, soft_id) << a << " vs " << b;
  }
}

TEST(Weights, SoftStrictlyDecreasesInIdScore) {
  for (double s_ood : {0.01, 0.5, 3.0, 100.0}) {
    double prev = 2.0;
    for (int k = 0; k <= 200; ++k) {
      const double s_id = 0.01 * std::pow(1.05, k);
      const double w = weights(scores(s_id, s_ood), Variant::soft()).w_id;
      ASSERT_LT(w, prev);
      prev = w;
    }
  }
}

// ---------------------------------------------------------------------------
// blend
// ---------------------------------------------------------------------------

TEST(Blend, Endpoints) {
  const ProbVector idk{0.2, 0.8}, ood{0.6, 0.4};
  EXPECT_EQ(blend(BlendWeights{1.0, 0.0, Variant::fixed(1.0)}, idk, ood).p_t, idk);
  EXPECT_EQ(blend(BlendWeights{0.0, 1.0, Variant::fixed(0.0)}, idk, ood).p_t, ood);
  EXPECT_EQ(blend(BlendWeights{0.5, 0.5, Variant::fixed(0.5)}, ProbVector{1.0, 0.0}, ProbVector{0.0, 1.0}).p_t,
            (ProbVector{0.5, 0.5}));
}

TEST(Blend, ConvexCombinationIsValidAndBetweenInputs) {
  Rng rng(45);
  for (int i = 0; i < 1000; ++i) {
    const std::size_t n = 2 + rng.uniform_int(8);
    const ProbVector a = i % 2 ? random_sparse_prob(rng, n) : random_prob(rng, n);
    const ProbVector b = random_prob(rng, n);
    const double w = rng.uniform();
    const auto t = blend(BlendWeights{w, 1.0 - w, Variant::fixed(w)}, a, b);  // validates on construction
    double sum = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      sum += t.p_t[k];
      ASSERT_GE(t.p_t[k], std::min(a[k], b[k]) - 1e-9);
      ASSERT_LE(t.p_t[k], std::max(a[k], b[k]) + 1e-9);
      ASSERT_NEAR(t.p_t[k], w * a[k] + (1.0 - w) * b[k], 1e-9);
    }
    ASSERT_NEAR(sum, 1.0, 1e-9);
  }
}

TEST(Blend, LengthMismatchThrows) {
  EXPECT_THROW(blend(BlendWeights{}, ProbVector::uniform(2), ProbVector::uniform(3)), DimensionError);
}

// ---------------------------------------------------------------------------
// distill_loss
// ---------------------------------------------------------------------------

TEST(DistillLoss, MinimumAtTheTarget) {
  const ProbVector pt{0.2, 0.3, 0.5};
  const LogitVector z{std::log(0.2), std::log(0.3), std::log(0.5)};
  const auto dl = distill_loss(BlendedTarget{pt}, z);
  EXPECT_LE(dl.loss, 1e-10);
  for (double g : dl.grad) EXPECT_NEAR(g, 0.0, 1e-12);
}

TEST(DistillLoss, ClosedFormAtZeroLogits) {
  const auto dl = distill_loss(BlendedTarget{ProbVector{0.7, 0.3}}, LogitVector{0.0, 0.0});
  EXPECT_NEAR(dl.loss, 0.7 * std::log(1.4) + 0.3 * std::log(0.6), 1e-15);
  EXPECT_NEAR(dl.grad[0], -0.2, 1e-15);
  EXPECT_NEAR(dl.grad[1], 0.2, 1e-15);
}

TEST(DistillLoss, GradientMatchesFiniteDifferences) {
  Rng rng(46);
  for (int i = 0; i < 1000; ++i) {
    const std::size_t n = 2 + rng.uniform_int(7);
    const BlendedTarget t{random_prob(rng, n)};
    const auto z = random_logits(rng, n, 1.5);
    const auto dl = distill_loss(t, LogitVector(z));
    const auto fd = finite_diff_gradient(
        [&](std::span<const double> x) { return distill_loss(t, LogitVector({x.begin(), x.end()})).loss; }, z);
    ASSERT_LT(max_relative_error(dl.grad, fd, 1e-6), 1e-4) << "case " << i;
  }
}

// ---------------------------------------------------------------------------
// make_target
// ---------------------------------------------------------------------------

TEST(MakeTarget, EqualReadoutsGiveEvenWeights) {
  Rng rng(47);
  for (auto mode : {ScoreMode::prob, ScoreMode::xe}) {
    const Sample s = random_gt_sample(rng, 5);
    const ProbVector p = random_prob(rng, 5);
    const auto w = weights(match_scores(p, p, s, mode), Variant::soft());
    EXPECT_EQ(w.w_id, 0.5);
    const auto t = make_target(s, TeacherOutputs{p, p}, mode, Variant::soft(), IdKnowledgeSource::gt);
    for (std::size_t a = 0; a < 5; ++a) EXPECT_NEAR(t.p_t[a], 0.5 * s.gt_dist[a] + 0.5 * p[a], 1e-15);
  }
}

TEST(MakeTarget, HardWithBetterIdFitCopiesOodReadout) {
  const Sample s = one_hot_sample(3, 0);
  const TeacherOutputs out{ProbVector{0.8, 0.1, 0.1}, ProbVector{0.3, 0.4, 0.3}};
  EXPECT_EQ(make_target(s, out, ScoreMode::xe, Variant::hard(), IdKnowledgeSource::gt).p_t, out.p_ood);
  EXPECT_EQ(make_target(s, out, ScoreMode::prob, Variant::hard(), IdKnowledgeSource::gt).p_t, out.p_ood);
}

TEST(MakeTarget, IdPredSourceUsesTheIdReadout) {
  const Sample s = one_hot_sample(3, 0);
  const TeacherOutputs out{ProbVector{0.2, 0.5, 0.3}, ProbVector{0.6, 0.2, 0.2}};
  // ID fits worse, so HARD keeps the ID side entirely.
  EXPECT_EQ(make_target(s, out, ScoreMode::xe, Variant::hard(), IdKnowledgeSource::id_pred).p_t, out.p_id);
  EXPECT_EQ(make_target(s, out, ScoreMode::xe, Variant::hard(), IdKnowledgeSource::gt).p_t, s.gt_dist);
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

TEST(Parsing, VariantsRoundTrip) {
  for (const auto& v : {Variant::soft(), Variant::hard(), Variant::proportional(), Variant::fixed(0.0),
                        Variant::fixed(0.5), Variant::fixed(0.35), Variant::fixed(1.0)}) {
    EXPECT_EQ(parse_variant(to_string(v)), v);
  }
  EXPECT_EQ(to_string(Variant::fixed(0.5)), "FIXED(0.5)");
  EXPECT_THROW(parse_variant("FIXED(1.5)"), InvalidConfig);
  EXPECT_THROW(parse_variant("FIXED()"), InvalidConfig);
  EXPECT_THROW(parse_variant("FIXED(0.5"), InvalidConfig);
  EXPECT_THROW(parse_variant("MEDIUM"), InvalidConfig);
}

TEST(Parsing, ModesAndSources) {
  EXPECT_EQ(parse_score_mode("prob"), ScoreMode::prob);
  EXPECT_EQ(parse_score_mode(to_string(ScoreMode::xe)), ScoreMode::xe);
  EXPECT_EQ(parse_id_source(to_string(IdKnowledgeSource::id_pred)), IdKnowledgeSource::id_pred);
  EXPECT_THROW(parse_score_mode("KL"), InvalidConfig);
  EXPECT_THROW(parse_id_source("teacher"), InvalidConfig);
}
