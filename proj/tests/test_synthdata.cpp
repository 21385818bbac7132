#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "projnce/synthdata.hpp"

using namespace projnce;

TEST(BinarySpec, Shape) {
  const GMMSpec s = binary_gmm_spec(5, 1.0);
  EXPECT_EQ(s.num_classes, 2u);
  EXPECT_EQ(s.ambient_dim, 5u);
  EXPECT_EQ(s.means[0], Vec(5, -1.0));
  EXPECT_EQ(s.means[1], Vec(5, 1.0));
  EXPECT_DOUBLE_EQ(s.priors[0], 0.5);
  EXPECT_NO_THROW(s.validate());
  EXPECT_THROW(binary_gmm_spec(0, 1.0), ConfigError);
  EXPECT_THROW(binary_gmm_spec(3, 0.0), ConfigError);
}

TEST(MulticlassSpec, ShapeAndDeterminism) {
  const GMMSpec a = multiclass_gmm_spec(Rng(9));
  const GMMSpec b = multiclass_gmm_spec(Rng(9));
  EXPECT_EQ(a.num_classes, 32u);
  EXPECT_EQ(a.latent_dim, 4u);
  EXPECT_EQ(a.ambient_dim, 8u);
  for (double p : a.priors) EXPECT_DOUBLE_EQ(p, 1.0 / 32.0);
  EXPECT_EQ(a.means, b.means);
  EXPECT_EQ(a.projection, b.projection);
  for (const Mat& k : a.covariances) {
    Mat l;
    EXPECT_TRUE(cholesky(k, l));
  }
  const GMMSpec c = multiclass_gmm_spec(Rng(10));
  EXPECT_NE(a.means, c.means);
}

TEST(Sample, ShapesAndLabels) {
  const GMMSpec spec = multiclass_gmm_spec(Rng(1));
  Rng rng(2);
  const LabeledDataset d = sample(spec, 12800, rng);
  EXPECT_EQ(d.features.rows(), 12800u);
  EXPECT_EQ(d.features.cols(), 8u);
  EXPECT_EQ(d.labels, d.true_labels);
  EXPECT_NO_THROW(d.validate(32));
  Rng one(3);
  EXPECT_EQ(sample(spec, 1, one).size(), 1u);
  EXPECT_THROW(sample(spec, 0, one), ConfigError);
}

TEST(Sample, Deterministic) {
  const GMMSpec spec = binary_gmm_spec(5, 1.0);
  Rng a(4), b(4);
  const LabeledDataset x = sample(spec, 500, a), y = sample(spec, 500, b);
  EXPECT_EQ(x.features, y.features);
  EXPECT_EQ(x.labels, y.labels);
}

TEST(Sample, ClassMeansMatchSpec) {
  const GMMSpec spec = binary_gmm_spec(3, 0.5);
  Rng rng(8);
  const LabeledDataset d = sample(spec, 40000, rng);
  double s[2][3] = {}, cnt[2] = {};
  for (std::size_t i = 0; i < d.size(); ++i) {
    const int c = d.labels[i];
    cnt[c] += 1;
    for (int k = 0; k < 3; ++k) s[c][k] += d.features(i, k);
  }
  EXPECT_NEAR(cnt[1] / d.size(), 0.5, 0.01);
  for (int k = 0; k < 3; ++k) {
    EXPECT_NEAR(s[0][k] / cnt[0], -1.0, 0.02);
    EXPECT_NEAR(s[1][k] / cnt[1], 1.0, 0.02);
  }
}

TEST(LabelNoise, ZeroAndOne) {
  const GMMSpec spec = multiclass_gmm_spec(Rng(1));
  Rng rng(5);
  const LabeledDataset d = sample(spec, 2000, rng);
  Rng r0(6);
  EXPECT_EQ(apply_label_noise(d, 0.0, 32, r0).labels, d.labels);
  Rng r1(6);
  const LabeledDataset all = apply_label_noise(d, 1.0, 32, r1);
  for (std::size_t i = 0; i < d.size(); ++i) {
    ASSERT_NE(all.labels[i], d.labels[i]);
    ASSERT_EQ(all.true_labels[i], d.true_labels[i]);
  }
  EXPECT_DOUBLE_EQ(all.noise_prob, 1.0);
}

TEST(LabelNoise, FlipRate) {
  const GMMSpec spec = binary_gmm_spec(2, 1.0);
  Rng rng(5);
  const LabeledDataset d = sample(spec, 100000, rng);
  Rng r(7);
  const LabeledDataset noisy = apply_label_noise(d, 0.3, 2, r);
  std::size_t flipped = 0;
  for (std::size_t i = 0; i < d.size(); ++i) flipped += noisy.labels[i] != d.labels[i];
  EXPECT_NEAR(static_cast<double>(flipped) / d.size(), 0.3, 0.01);
}

TEST(LabelNoise, Errors) {
  LabeledDataset d;
  d.features = Mat(1, 1);
  d.labels = d.true_labels = {0};
  Rng r(1);
  EXPECT_THROW(apply_label_noise(d, 1.5, 2, r), ConfigError);
  EXPECT_THROW(apply_label_noise(d, 0.2, 1, r), NoiseImpossible);
  EXPECT_NO_THROW(apply_label_noise(d, 0.0, 1, r));
}

TEST(Posterior, BinaryClosedForm) {
  const double sigma = 0.8;
  const GMMSpec spec = binary_gmm_spec(3, sigma);
  const PosteriorModel model(spec);
  EXPECT_NEAR(model.posterior(Vec{0, 0, 0})[1], 0.5, 1e-12);
  Rng rng(3);
  for (int t = 0; t < 50; ++t) {
    Vec x(3);
    double sx = 0;
    for (double& v : x) {
      v = rng.normal(0.0, 1.5);
      sx += v;
    }
    const double expect = 1.0 / (1.0 + std::exp(-2.0 * sx / (sigma * sigma)));
    const Vec p = model.posterior(x);
    EXPECT_NEAR(p[1], expect, 1e-9);
    EXPECT_NEAR(p[0] + p[1], 1.0, 1e-12);
  }
}

TEST(Posterior, MulticlassRowsSumToOne) {
  const GMMSpec spec = multiclass_gmm_spec(Rng(2));
  const PosteriorModel model(spec);
  Rng rng(4);
  const LabeledDataset d = sample(spec, 200, rng);
  const Mat t = model.posterior_table(d.features);
  for (std::size_t i = 0; i < t.rows(); ++i) {
    double s = 0;
    for (double v : t.row(i)) {
      EXPECT_GE(v, 0.0);
      s += v;
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(OracleMI, NearZeroForOverlappingClasses) {
  Rng rng(1);
  const MIEstimate e = oracle_mi(binary_gmm_spec(2, 100.0), 20000, rng);
  EXPECT_LE(std::abs(e.value), 0.01);
  EXPECT_EQ(e.method, MIMethod::oracle_mc);
}

TEST(OracleMI, EqualMeansGiveZero) {
  GMMSpec spec = binary_gmm_spec(3, 1.0);
  spec.means[1] = spec.means[0];
  Rng rng(1);
  EXPECT_NEAR(oracle_mi(spec, 5000, rng).value, 0.0, 1e-12);
}

TEST(OracleMI, SeparatedClassesApproachLog2) {
  Rng rng(1);
  const MIEstimate e = oracle_mi(binary_gmm_spec(5, 0.1), 20000, rng);
  EXPECT_NEAR(e.value, std::log(2.0), 1e-6);
  EXPECT_THROW(oracle_mi(binary_gmm_spec(5, 0.1), 10, rng), ConfigError);
}

TEST(OracleMI, BoundedByLabelEntropy) {
  Rng rng(2);
  const MIEstimate e = oracle_mi(multiclass_gmm_spec(Rng(3)), 20000, rng);
  EXPECT_GT(e.value, 0.5);
  EXPECT_LT(e.value, std::log(32.0));
}

TEST(DatasetIO, CsvRoundTrip) {
  const GMMSpec spec = binary_gmm_spec(3, 1.0);
  Rng rng(4), nr(5);
  const LabeledDataset d = apply_label_noise(sample(spec, 50, rng), 0.2, 2, nr);
  std::stringstream ss;
  write_dataset_csv(ss, d);
  const LabeledDataset back = read_dataset_csv(ss);
  EXPECT_EQ(back.features, d.features);
  EXPECT_EQ(back.labels, d.labels);
  EXPECT_EQ(back.true_labels, d.true_labels);
}

TEST(DatasetIO, BinaryRoundTrip) {
  const GMMSpec spec = multiclass_gmm_spec(Rng(1));
  Rng rng(4);
  LabeledDataset d = sample(spec, 64, rng);
  d.noise_prob = 0.25;
  std::stringstream ss;
  write_dataset_binary(ss, d);
  const LabeledDataset back = read_dataset_binary(ss);
  EXPECT_EQ(back.features, d.features);
  EXPECT_EQ(back.labels, d.labels);
  EXPECT_DOUBLE_EQ(back.noise_prob, 0.25);
  std::stringstream junk("XXXX");
  EXPECT_THROW(read_dataset_binary(junk), FormatError);
}
