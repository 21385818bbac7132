#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "projnce/miest.hpp"

using namespace projnce;

TEST(MixedKsg, Errors) {
  Mat x(5, 1);
  EXPECT_THROW(mixed_ksg(x, {0, 0, 1, 1, 0}, {5}), InsufficientSamples);
  EXPECT_THROW(mixed_ksg(x, {0, 0, 1}, {}), DimensionError);
  EXPECT_THROW(mixed_ksg(x, {0, 0, 1, 1, 0}, {0}), ConfigError);
}

TEST(MixedKsg, Metadata) {
  Rng rng(1);
  Mat x(100, 2);
  for (double& v : x.data()) v = rng.normal();
  std::vector<int> y(100);
  for (int& l : y) l = static_cast<int>(rng.index(2));
  const MIEstimate e = mixed_ksg(x, y, {3});
  EXPECT_EQ(e.method, MIMethod::mixed_ksg);
  EXPECT_EQ(e.k, 3u);
  EXPECT_EQ(e.n, 100u);
  EXPECT_TRUE(std::isfinite(e.value));
  KsgOptions clamp{3, true};
  EXPECT_GE(mixed_ksg(x, y, clamp).value, 0.0);
}

TEST(MixedKsg, IndependentLabels) {
  Rng rng(2);
  const std::size_t n = 4000;
  Mat x(n, 2);
  for (double& v : x.data()) v = rng.normal();
  std::vector<int> y(n);
  for (int& l : y) l = static_cast<int>(rng.index(2));
  EXPECT_LE(std::abs(mixed_ksg(x, y).value), 0.02);
}

TEST(MixedKsg, DeterministicBalancedLabels) {
  Rng rng(3);
  const std::size_t n = 4000;
  Mat x(n, 2);
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = static_cast<int>(i % 2);
    x(i, 0) = (y[i] ? 10.0 : -10.0) + rng.normal();
    x(i, 1) = rng.normal();
  }
  EXPECT_NEAR(mixed_ksg(x, y).value, std::log(2.0), 0.05);
}

TEST(MixedKsg, DuplicatePointsUseZeroRadiusRule) {
  Mat x(8, 1, Vec{0, 0, 0, 0, 1, 1, 1, 1});
  const std::vector<int> y{0, 0, 0, 0, 1, 1, 1, 1};
  EXPECT_NEAR(mixed_ksg(x, y, {2}).value, oracle::mixed_ksg(x, y, 2), 1e-12);
  // every neighbourhood is the four duplicates: psi(3) + log 8 - psi(3) - psi(4)
  EXPECT_NEAR(mixed_ksg(x, y, {2}).value, std::log(8.0) - digamma(4.0), 1e-12);
}

TEST(BoundProp1, EqualProjectionsReduceToLogNMinusLoss) {
  Rng rng(4);
  std::vector<EmbeddingBatch> batches;
  for (int t = 0; t < 4; ++t) batches.push_back(oracle::random_batch(rng, 8, 3, 2));
  const ProjectionSpec same{ProjectionKind::centroid, ProjectionKind::centroid, std::nullopt,
                            false};
  double adj = 0;
  const MIEstimate e = bound_prop1(batches, same, {}, nullptr, &adj);
  EXPECT_EQ(adj, 1.0);
  double expect = 0;
  for (const auto& b : batches) {
    LossOptions opt;
    opt.literal_denominator = true;
    expect += std::log(8.0) - selfp(b, same, opt).total;
  }
  EXPECT_NEAR(e.value, expect / 4.0, 1e-12);
  EXPECT_EQ(e.n, 4u);
  EXPECT_TRUE(e.std_error.has_value());
}

TEST(BoundProp1, TwoPointHandInstance) {
  // Two orthogonal points of one class, identity projections, tau = 1.
  EmbeddingBatch b;
  b.z = Mat(2, 2, Vec{1, 0, 0, 1});
  b.labels = {0, 0};
  b.temperature = 1.0;
  const ProjectionSpec id{ProjectionKind::identity, ProjectionKind::identity, std::nullopt, false};
  const MIEstimate e = bound_prop1({b}, id);
  // alignment: -z0.z1 = 0; uniformity over j=1..2: log(e^1 + e^0); R = 1.
  const double expect = 1.0 + std::log(2.0) - std::log(std::exp(1.0) + 1.0) - 1.0;
  EXPECT_NEAR(e.value, expect, 1e-10);
}

TEST(BoundSoftNCE, UniformSoftLabelsGiveZero) {
  Rng rng(5);
  std::vector<EmbeddingBatch> batches;
  std::vector<SoftLabelTable> soft;
  for (int t = 0; t < 3; ++t) {
    batches.push_back(oracle::random_batch(rng, 8, 3, 2));
    SoftLabelTable s;
    s.source = SoftSource::analytic;
    s.probs = Mat(8, 2, 0.5);
    soft.push_back(s);
  }
  EXPECT_NEAR(bound_softnce(batches, KernelConfig{}, SoftSource::analytic, &soft).value, 0.0,
              1e-12);
}

TEST(BoundSoftNCE, AffineInLoss) {
  Rng rng(6);
  const EmbeddingBatch b = oracle::random_batch(rng, 8, 3, 2);
  const KernelConfig kc{1.0, Metric::l1};
  LossOptions opt;
  opt.compute_grad = false;
  const double loss = softnce(b, kc, SoftSource::nw_estimated, nullptr, opt).total;
  EXPECT_NEAR(bound_softnce({b}, kc).value, std::log(8.0) - loss, 1e-12);
}

TEST(RawSupconGap, MatchesDefinition) {
  Rng rng(7);
  const EmbeddingBatch b = oracle::random_batch(rng, 8, 3, 2);
  EXPECT_NEAR(raw_supcon_gap({b}).value, std::log(8.0) - supcon(b).total, 1e-12);
}

TEST(Consistency, IndependentLabelsHaveNoGap) {
  GMMSpec spec = binary_gmm_spec(2, 1.0);
  spec.means[1] = spec.means[0];
  const auto pts = softnce_consistency_curve(spec, {256, 1024}, 5, 0.0, Rng(8));
  for (const auto& p : pts) EXPECT_LE(p.gap, 0.02) << p.n;
}

TEST(Consistency, GapShrinks) {
  const GMMSpec spec = binary_gmm_spec(5, 1.0);
  Rng orng(9);
  const double oracle_value = oracle_mi(spec, 200000, orng).value;
  const auto pts = softnce_consistency_curve(spec, {64, 1024}, 10, oracle_value, Rng(10));
  ASSERT_EQ(pts.size(), 2u);
  EXPECT_LT(pts[1].gap, pts[0].gap);
  EXPECT_LE(pts[1].gap, 0.05);
  EXPECT_THROW(softnce_consistency_curve(spec, {64}, 1, 0.0, Rng(1)), ConfigError);
}

TEST(MIEstimateJson, Fields) {
  MIEstimate e;
  e.value = 0.5;
  e.k = 5;
  e.n = 100;
  const auto j = to_json(e, 3);
  EXPECT_EQ(j["method"], "mixed_ksg");
  EXPECT_TRUE(j["stderr"].is_null());
  EXPECT_EQ(j["seed"], 3);
}
