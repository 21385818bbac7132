#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "projnce/batch.hpp"
#include "projnce/errors.hpp"
#include "projnce/numerics.hpp"

namespace projnce {

enum class Metric { l1, l2, cosine };

inline std::string to_string(Metric m) {
  switch (m) {
    case Metric::l1: return "l1";
    case Metric::l2: return "l2";
    case Metric::cosine: return "cos";
  }
  return "unknown";
}

inline Metric parse_metric(const std::string& s) {
  if (s == "l1") return Metric::l1;
  if (s == "l2") return Metric::l2;
  if (s == "cos") return Metric::cosine;
  throw ConfigError("unknown metric '" + s + "' (expected l1, l2 or cos)");
}

/// Kernel K(t) = 1 - t^2 on [0, 1], scaled to K_h(t) = K(t / h) / h.
struct KernelConfig {
  double bandwidth = 0.6;
  Metric metric = Metric::l1;

  void validate() const {
    if (!(bandwidth > 0.0) || !std::isfinite(bandwidth)) {
      throw ConfigError("kernel bandwidth must be positive");
    }
  }
};

inline constexpr const char* kKernelName = "epanechnikov_scaled";

enum class ProjectionKind { identity, centroid, nw_soft, median };

inline std::string to_string(ProjectionKind k) {
  switch (k) {
    case ProjectionKind::identity: return "identity";
    case ProjectionKind::centroid: return "centroid";
    case ProjectionKind::nw_soft: return "nw_soft";
    case ProjectionKind::median: return "median";
  }
  return "unknown";
}

inline ProjectionKind parse_projection_kind(const std::string& s) {
  if (s == "identity") return ProjectionKind::identity;
  if (s == "centroid") return ProjectionKind::centroid;
  if (s == "nw_soft") return ProjectionKind::nw_soft;
  if (s == "median") return ProjectionKind::median;
  throw ConfigError("unknown projection '" + s + "'");
}

/// Choice of positive and negative class-embedding functions.
struct ProjectionSpec {
  ProjectionKind positive = ProjectionKind::centroid;
  ProjectionKind negative = ProjectionKind::identity;
  std::optional<KernelConfig> kernel;
  bool renormalize = false;

  bool uses_kernel() const {
    return positive == ProjectionKind::nw_soft || negative == ProjectionKind::nw_soft;
  }

  void validate() const {
    if (uses_kernel() && !kernel) throw ConfigError("nw_soft projection requires a kernel");
    if (kernel) kernel->validate();
  }
};

enum class SoftSource { nw_estimated, analytic };

/// Per-sample class posteriors, N x M.
struct SoftLabelTable {
  Mat probs;
  SoftSource source = SoftSource::nw_estimated;
  std::size_t self_only_rows = 0;  // rows whose only support was the query itself
};

// ---------------------------------------------------------------------------
// Kernel machinery

inline double kernel_distance(Metric metric, std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) throw DimensionError("kernel_distance: length mismatch");
  switch (metric) {
    case Metric::l1: {
      double s = 0.0;
      for (std::size_t k = 0; k < u.size(); ++k) s += std::abs(u[k] - v[k]);
      return s;
    }
    case Metric::l2: {
      double s = 0.0;
      for (std::size_t k = 0; k < u.size(); ++k) s += (u[k] - v[k]) * (u[k] - v[k]);
      return std::sqrt(s);
    }
    case Metric::cosine: {
      const double nu = norm2(u), nv = norm2(v);
      return 0.5 - 0.5 * dot(u, v) / (nu * nv);
    }
  }
  return 0.0;
}

/// Gradient of kernel_distance with respect to its first argument. Points of
/// non-differentiability (coincident coordinates) get the zero subgradient.
inline void kernel_distance_grad_u(Metric metric, std::span<const double> u,
                                   std::span<const double> v, std::span<double> out) {
  switch (metric) {
    case Metric::l1:
      for (std::size_t k = 0; k < u.size(); ++k) {
        const double diff = u[k] - v[k];
        out[k] = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
      }
      return;
    case Metric::l2: {
      const double d = kernel_distance(Metric::l2, u, v);
      for (std::size_t k = 0; k < u.size(); ++k) out[k] = d > 0.0 ? (u[k] - v[k]) / d : 0.0;
      return;
    }
    case Metric::cosine: {
      const double nu = norm2(u), nv = norm2(v);
      const double uv = dot(u, v);
      for (std::size_t k = 0; k < u.size(); ++k) {
        out[k] = -0.5 * (v[k] / (nu * nv) - uv * u[k] / (nu * nu * nu * nv));
      }
      return;
    }
  }
}

/// K_h evaluated at a distance; zero outside the support.
inline double kernel_value(double bandwidth, double distance) {
  const double t = distance / bandwidth;
  if (t > 1.0) return 0.0;
  return (1.0 - t * t) / bandwidth;
}

/// dK_h / d distance.
inline double kernel_slope(double bandwidth, double distance) {
  const double t = distance / bandwidth;
  if (t > 1.0) return 0.0;
  return -2.0 * t / (bandwidth * bandwidth);
}

inline double kernel_weight(const KernelConfig& cfg, std::span<const double> z,
                            std::span<const double> zj) {
  return kernel_value(cfg.bandwidth, kernel_distance(cfg.metric, z, zj));
}

/// Nadaraya-Watson class posteriors for each query row against a labelled
/// reference set. Throws EmptySupport when a query has no reference point
/// within the bandwidth.
inline SoftLabelTable nw_soft_labels(const Mat& queries, const Mat& reference,
                                     const std::vector<int>& reference_labels,
                                     std::size_t num_classes, const KernelConfig& cfg) {
  cfg.validate();
  if (reference.rows() == 0) throw EmptySupport("reference set is empty");
  if (reference.rows() != reference_labels.size()) {
    throw DimensionError("nw_soft_labels: reference label count mismatch");
  }
  if (queries.cols() != reference.cols()) throw DimensionError("nw_soft_labels: dim mismatch");
  SoftLabelTable table;
  table.source = SoftSource::nw_estimated;
  table.probs = Mat(queries.rows(), num_classes);
  for (std::size_t q = 0; q < queries.rows(); ++q) {
    double total = 0.0;
    auto row = table.probs.row(q);
    for (std::size_t j = 0; j < reference.rows(); ++j) {
      const double w = kernel_weight(cfg, queries.row(q), reference.row(j));
      if (w == 0.0) continue;
      const auto c = static_cast<std::size_t>(reference_labels[j]);
      if (c >= num_classes) throw DimensionError("nw_soft_labels: label out of range");
      row[c] += w;
      total += w;
    }
    if (!(total > 0.0)) {
      throw EmptySupport("query " + std::to_string(q) + " has no reference within bandwidth " +
                         std::to_string(cfg.bandwidth));
    }
    for (double& p : row) p /= total;
  }
  return table;
}

// ---------------------------------------------------------------------------
// Class embeddings. `exclude` removes one sample (the anchor) from the pool.

inline constexpr double kSoftDenominatorEpsilon = 1e-12;

inline constexpr std::size_t kNoExclusion = static_cast<std::size_t>(-1);

inline Vec maybe_renormalize(Vec v, bool renormalize) {
  return renormalize ? normalize_sphere(v) : v;
}

/// Mean of the embeddings labelled c.
inline Vec centroid(const EmbeddingBatch& batch, int c, bool renormalize = false,
                    std::size_t exclude = kNoExclusion) {
  Vec sum(batch.dim(), 0.0);
  std::size_t count = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (batch.labels[i] != c || i == exclude) continue;
    const auto zi = batch.z.row(i);
    for (std::size_t k = 0; k < sum.size(); ++k) sum[k] += zi[k];
    ++count;
  }
  if (count == 0) throw EmptyClass("class " + std::to_string(c) + " has no members");
  for (double& s : sum) s /= static_cast<double>(count);
  return maybe_renormalize(std::move(sum), renormalize);
}

/// Soft-label weighted mean of the batch embeddings for class c.
inline Vec fhat(int c, const Mat& z, const SoftLabelTable& soft, bool renormalize = false,
                std::size_t exclude = kNoExclusion) {
  if (soft.probs.rows() != z.rows()) throw DimensionError("fhat: soft label rows != batch");
  const auto col = static_cast<std::size_t>(c);
  if (col >= soft.probs.cols()) throw DimensionError("fhat: class outside soft label table");
  Vec sum(z.cols(), 0.0);
  double den = 0.0;
  for (std::size_t j = 0; j < z.rows(); ++j) {
    if (j == exclude) continue;
    const double w = soft.probs(j, col);
    if (w == 0.0) continue;
    const auto zj = z.row(j);
    for (std::size_t k = 0; k < sum.size(); ++k) sum[k] += w * zj[k];
    den += w;
  }
  if (!(den > kSoftDenominatorEpsilon)) {
    throw EmptySupport("class " + std::to_string(c) + " has no soft-label mass");
  }
  for (double& s : sum) s /= den;
  return maybe_renormalize(std::move(sum), renormalize);
}

/// Coordinate-wise median of the embeddings labelled c. For an even count the
/// two middle order statistics are averaged.
inline Vec median_projection(const EmbeddingBatch& batch, int c, bool renormalize = false,
                             std::size_t exclude = kNoExclusion) {
  std::vector<std::size_t> members;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (batch.labels[i] == c && i != exclude) members.push_back(i);
  }
  if (members.empty()) throw EmptyClass("class " + std::to_string(c) + " has no members");
  Vec out(batch.dim());
  std::vector<double> vals(members.size());
  const std::size_t m = members.size();
  for (std::size_t k = 0; k < batch.dim(); ++k) {
    for (std::size_t r = 0; r < m; ++r) vals[r] = batch.z(members[r], k);
    std::sort(vals.begin(), vals.end());
    out[k] = (m % 2 == 1) ? vals[m / 2] : 0.5 * (vals[m / 2 - 1] + vals[m / 2]);
  }
  return maybe_renormalize(std::move(out), renormalize);
}

/// h = 2.4 * N^(-1 / (d_z + 2)); equals 0.6 at N = 256, d_z = 2.
inline double bandwidth_schedule(std::size_t n, std::size_t d_z) {
  if (n < 2) throw ConfigError("bandwidth_schedule: N must be >= 2");
  if (d_z < 1) throw ConfigError("bandwidth_schedule: d_z must be >= 1");
  constexpr double kScale = 2.4;
  return kScale * std::pow(static_cast<double>(n), -1.0 / (static_cast<double>(d_z) + 2.0));
}

}  // namespace projnce
