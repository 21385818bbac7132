#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "projnce/binio.hpp"
#include "projnce/errors.hpp"
#include "projnce/mi_estimate.hpp"
#include "projnce/numerics.hpp"
#include "projnce/rng.hpp"

namespace projnce {

/// Gaussian mixture over a latent space, pushed to the ambient feature space
/// by a linear map. Class c has latent law N(means[c], covariances[c]).
struct GMMSpec {
  std::size_t num_classes = 0;
  std::size_t latent_dim = 0;
  std::size_t ambient_dim = 0;
  std::vector<Vec> means;
  std::vector<Mat> covariances;
  Vec priors;
  Mat projection;  // ambient_dim x latent_dim

  void validate() const {
    if (num_classes == 0 || latent_dim == 0 || ambient_dim == 0) {
      throw ConfigError("GMMSpec dimensions must be positive");
    }
    if (means.size() != num_classes || covariances.size() != num_classes ||
        priors.size() != num_classes) {
      throw DimensionError("GMMSpec per-class arrays do not match num_classes");
    }
    double total = 0.0;
    for (double p : priors) {
      if (!(p >= 0.0)) throw ConfigError("GMMSpec prior must be nonnegative");
      total += p;
    }
    if (std::abs(total - 1.0) > 1e-12) throw ConfigError("GMMSpec priors do not sum to 1");
    if (projection.rows() != ambient_dim || projection.cols() != latent_dim) {
      throw DimensionError("GMMSpec projection must be ambient_dim x latent_dim");
    }
    for (std::size_t c = 0; c < num_classes; ++c) {
      if (means[c].size() != latent_dim) throw DimensionError("GMMSpec mean length");
      if (covariances[c].rows() != latent_dim || covariances[c].cols() != latent_dim) {
        throw DimensionError("GMMSpec covariance shape");
      }
    }
  }
};

/// Features with (possibly corrupted) labels and the clean labels they came from.
struct LabeledDataset {
  Mat features;
  std::vector<int> labels;
  std::vector<int> true_labels;
  double noise_prob = 0.0;

  std::size_t size() const noexcept { return labels.size(); }

  void validate(std::size_t num_classes) const {
    if (features.rows() != labels.size() || labels.size() != true_labels.size()) {
      throw DimensionError("LabeledDataset row counts disagree");
    }
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes ||
          true_labels[i] < 0 || static_cast<std::size_t>(true_labels[i]) >= num_classes) {
        throw DimensionError("label out of range at row " + std::to_string(i));
      }
    }
  }
};

inline constexpr double kCovarianceJitter = 1e-9;

/// Two classes with means +1 (class 1) and -1 (class 0), covariance sigma^2 I,
/// equal priors, identity projection.
inline GMMSpec binary_gmm_spec(std::size_t d_x, double sigma) {
  if (d_x < 1) throw ConfigError("binary_gmm_spec: d_x must be >= 1");
  if (!(sigma > 0.0)) throw ConfigError("binary_gmm_spec: sigma must be > 0");
  GMMSpec s;
  s.num_classes = 2;
  s.latent_dim = d_x;
  s.ambient_dim = d_x;
  s.means = {Vec(d_x, -1.0), Vec(d_x, 1.0)};
  Mat cov = Mat::identity(d_x);
  for (double& v : cov.data()) v *= sigma * sigma;
  s.covariances = {cov, cov};
  s.priors = {0.5, 0.5};
  s.projection = Mat::identity(d_x);
  return s;
}

/// 32 classes in a 4-d latent space mapped to 8-d by a Gaussian random matrix.
/// Means have N(0, 9) entries and covariances are A A^T + 0.1 I.
inline GMMSpec multiclass_gmm_spec(Rng rng) {
  constexpr std::size_t kClasses = 32, kLatent = 4, kAmbient = 8;
  GMMSpec s;
  s.num_classes = kClasses;
  s.latent_dim = kLatent;
  s.ambient_dim = kAmbient;
  s.priors.assign(kClasses, 1.0 / static_cast<double>(kClasses));
  for (std::size_t c = 0; c < kClasses; ++c) {
    Vec mu(kLatent);
    for (double& m : mu) m = rng.normal(0.0, 3.0);
    s.means.push_back(std::move(mu));
  }
  for (std::size_t c = 0; c < kClasses; ++c) {
    Mat a(kLatent, kLatent);
    for (double& v : a.data()) v = rng.normal();
    Mat k = matmul(a, transpose(a));
    for (std::size_t i = 0; i < kLatent; ++i) k(i, i) += 0.1;
    s.covariances.push_back(std::move(k));
  }
  s.projection = Mat(kAmbient, kLatent);
  for (double& v : s.projection.data()) v = rng.normal();
  return s;
}

namespace detail {

inline Mat jittered_cholesky(const Mat& cov) {
  Mat jittered = cov;
  for (std::size_t i = 0; i < jittered.rows(); ++i) jittered(i, i) += kCovarianceJitter;
  Mat lower;
  if (!cholesky(jittered, lower)) {
    throw SingularCovariance("covariance is not positive definite after jitter");
  }
  return lower;
}

}  // namespace detail

/// Exact class posterior p(c | x) for a GMMSpec.
///
/// Features live on the range of the projection, so x is pulled back to the
/// latent space by least squares and the Bayes rule is applied there. The
/// Jacobian of the pullback is common to all classes and cancels.
class PosteriorModel {
 public:
  explicit PosteriorModel(const GMMSpec& spec) : spec_(spec) {
    spec_.validate();
    const Mat pt = transpose(spec_.projection);
    Mat gram = matmul(pt, spec_.projection);
    if (!cholesky(gram, gram_lower_)) {
      throw SingularCovariance("projection does not have full column rank");
    }
    for (std::size_t c = 0; c < spec_.num_classes; ++c) {
      Mat lower = detail::jittered_cholesky(spec_.covariances[c]);
      double logdet = 0.0;
      for (std::size_t i = 0; i < lower.rows(); ++i) logdet += 2.0 * std::log(lower(i, i));
      half_logdet_.push_back(0.5 * logdet);
      lowers_.push_back(std::move(lower));
      log_priors_.push_back(spec_.priors[c] > 0.0 ? std::log(spec_.priors[c])
                                                  : -std::numeric_limits<double>::infinity());
    }
  }

  const GMMSpec& spec() const noexcept { return spec_; }

  Vec latent_of(std::span<const double> x) const {
    if (x.size() != spec_.ambient_dim) throw DimensionError("posterior: feature length");
    Vec z(spec_.latent_dim, 0.0);
    for (std::size_t j = 0; j < spec_.latent_dim; ++j)
      for (std::size_t i = 0; i < spec_.ambient_dim; ++i) z[j] += spec_.projection(i, j) * x[i];
    forward_substitute(gram_lower_, z);
    back_substitute(gram_lower_, z);
    return z;
  }

  /// Unnormalized log joint log pi_c + log N(z; mu_c, K_c) up to a shared constant.
  Vec log_joint(std::span<const double> x) const {
    const Vec z = latent_of(x);
    Vec out(spec_.num_classes);
    Vec r(spec_.latent_dim);
    for (std::size_t c = 0; c < spec_.num_classes; ++c) {
      for (std::size_t k = 0; k < r.size(); ++k) r[k] = z[k] - spec_.means[c][k];
      forward_substitute(lowers_[c], r);
      out[c] = log_priors_[c] - 0.5 * dot(r, r) - half_logdet_[c];
    }
    return out;
  }

  Vec posterior(std::span<const double> x) const {
    Vec lj = log_joint(x);
    const double lse = logsumexp(lj);
    for (double& v : lj) v = std::exp(v - lse);
    return lj;
  }

  Vec log_posterior(std::span<const double> x) const {
    Vec lj = log_joint(x);
    const double lse = logsumexp(lj);
    for (double& v : lj) v -= lse;
    return lj;
  }

  /// Posterior rows for every feature row.
  Mat posterior_table(const Mat& features) const {
    Mat out(features.rows(), spec_.num_classes);
    for (std::size_t i = 0; i < features.rows(); ++i) {
      const Vec p = posterior(features.row(i));
      std::copy(p.begin(), p.end(), out.row(i).begin());
    }
    return out;
  }

 private:
  GMMSpec spec_;
  Mat gram_lower_;
  std::vector<Mat> lowers_;
  std::vector<double> half_logdet_;
  std::vector<double> log_priors_;
};

inline Vec analytic_posterior(const GMMSpec& spec, std::span<const double> x) {
  return PosteriorModel(spec).posterior(x);
}

/// Draws n labeled samples: label from the priors, latent from its component,
/// features = projection * latent.
inline LabeledDataset sample(const GMMSpec& spec, std::size_t n, Rng& rng) {
  spec.validate();
  if (n < 1) throw ConfigError("sample: n must be >= 1");
  std::vector<Mat> lowers;
  lowers.reserve(spec.num_classes);
  for (const Mat& cov : spec.covariances) lowers.push_back(detail::jittered_cholesky(cov));
  Vec cumulative(spec.num_classes);
  std::partial_sum(spec.priors.begin(), spec.priors.end(), cumulative.begin());

  LabeledDataset out;
  out.features = Mat(n, spec.ambient_dim);
  out.labels.resize(n);
  Vec eps(spec.latent_dim), latent(spec.latent_dim);
  for (std::size_t i = 0; i < n; ++i) {
    const double u = rng.uniform();
    std::size_t c = 0;
    while (c + 1 < spec.num_classes && u >= cumulative[c]) ++c;
    out.labels[i] = static_cast<int>(c);
    for (double& e : eps) e = rng.normal();
    for (std::size_t r = 0; r < spec.latent_dim; ++r) {
      double v = spec.means[c][r];
      for (std::size_t k = 0; k <= r; ++k) v += lowers[c](r, k) * eps[k];
      latent[r] = v;
    }
    auto row = out.features.row(i);
    for (std::size_t a = 0; a < spec.ambient_dim; ++a) {
      double v = 0.0;
      for (std::size_t r = 0; r < spec.latent_dim; ++r) v += spec.projection(a, r) * latent[r];
      row[a] = v;
    }
  }
  out.true_labels = out.labels;
  out.noise_prob = 0.0;
  return out;
}

/// Each label is independently replaced, with probability p, by a uniform draw
/// over the other num_classes - 1 classes. true_labels are left untouched.
inline LabeledDataset apply_label_noise(const LabeledDataset& data, double p,
                                        std::size_t num_classes, Rng& rng) {
  if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("apply_label_noise: p must be in [0, 1]");
  if (num_classes < 2 && p > 0.0) {
    throw NoiseImpossible("cannot flip labels with a single class");
  }
  LabeledDataset out = data;
  out.noise_prob = p;
  for (std::size_t i = 0; i < out.labels.size(); ++i) {
    const double u = rng.uniform();
    if (u < p) {
      const auto shift = 1 + rng.index(num_classes - 1);
      out.labels[i] = static_cast<int>((static_cast<std::size_t>(out.labels[i]) + shift) %
                                       num_classes);
    }
  }
  return out;
}

/// Monte-Carlo I(X; C) = E[log p(c|x) / p(c)] over draws from the joint.
inline MIEstimate oracle_mi(const GMMSpec& spec, std::size_t n_mc, Rng& rng) {
  if (n_mc < 1000) throw ConfigError("oracle_mi: n_mc must be >= 1000");
  const PosteriorModel model(spec);
  constexpr std::size_t kChunk = 8192;
  std::vector<double> terms;
  terms.reserve(n_mc);
  std::size_t remaining = n_mc;
  while (remaining > 0) {
    const std::size_t m = std::min(kChunk, remaining);
    const LabeledDataset d = sample(spec, m, rng);
    for (std::size_t i = 0; i < m; ++i) {
      const Vec lp = model.log_posterior(d.features.row(i));
      const auto c = static_cast<std::size_t>(d.labels[i]);
      terms.push_back(lp[c] - std::log(spec.priors[c]));
    }
    remaining -= m;
  }
  const MeanStderr ms = mean_stderr(terms);
  MIEstimate est;
  est.value = ms.mean;
  est.method = MIMethod::oracle_mc;
  est.n = n_mc;
  est.std_error = ms.std_error;
  return est;
}

// ---------------------------------------------------------------------------
// Serialization

inline void write_dataset_csv(std::ostream& os, const LabeledDataset& data) {
  const std::size_t d = data.features.cols();
  for (std::size_t k = 0; k < d; ++k) os << 'f' << k << ',';
  os << "label,true_label\n";
  os << std::setprecision(17);
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (std::size_t k = 0; k < d; ++k) os << data.features(i, k) << ',';
    os << data.labels[i] << ',' << data.true_labels[i] << '\n';
  }
}

inline LabeledDataset read_dataset_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw FormatError("dataset csv: missing header");
  std::size_t columns = 1;
  for (char ch : line) columns += (ch == ',');
  if (columns < 3) throw FormatError("dataset csv: header needs features, label, true_label");
  const std::size_t d = columns - 2;
  std::vector<double> values;
  LabeledDataset out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::size_t col = 0;
    while (std::getline(ss, cell, ',')) {
      if (col < d) {
        values.push_back(std::stod(cell));
      } else if (col == d) {
        out.labels.push_back(std::stoi(cell));
      } else if (col == d + 1) {
        out.true_labels.push_back(std::stoi(cell));
      }
      ++col;
    }
    if (col != columns) throw FormatError("dataset csv: ragged row");
  }
  out.features = Mat(out.labels.size(), d, std::move(values));
  return out;
}

inline constexpr std::uint32_t kDatasetFormatVersion = 1;

/// Binary layout (little endian): "PJNC", u32 version, u64 rows, u64 dims,
/// f64 noise_prob, rows*dims f64 features (row-major), rows i32 labels,
/// rows i32 true labels.
inline void write_dataset_binary(std::ostream& os, const LabeledDataset& data) {
  binio::write_magic(os, "PJNC");
  binio::write_le<std::uint32_t>(os, kDatasetFormatVersion);
  binio::write_le<std::uint64_t>(os, data.features.rows());
  binio::write_le<std::uint64_t>(os, data.features.cols());
  binio::write_f64(os, data.noise_prob);
  for (double v : data.features.data()) binio::write_f64(os, v);
  for (int l : data.labels) binio::write_i32(os, l);
  for (int l : data.true_labels) binio::write_i32(os, l);
}

inline LabeledDataset read_dataset_binary(std::istream& is) {
  binio::expect_magic(is, "PJNC");
  const auto version = binio::read_le<std::uint32_t>(is);
  if (version != kDatasetFormatVersion) {
    throw FormatError("unsupported PJNC version " + std::to_string(version));
  }
  const auto rows = binio::read_le<std::uint64_t>(is);
  const auto dims = binio::read_le<std::uint64_t>(is);
  LabeledDataset out;
  out.noise_prob = binio::read_f64(is);
  std::vector<double> values(rows * dims);
  for (double& v : values) v = binio::read_f64(is);
  out.features = Mat(rows, dims, std::move(values));
  out.labels.resize(rows);
  out.true_labels.resize(rows);
  for (int& l : out.labels) l = binio::read_i32(is);
  for (int& l : out.true_labels) l = binio::read_i32(is);
  return out;
}

}  // namespace projnce
