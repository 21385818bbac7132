#pragma once

// Straight-line reference evaluations used to cross-check the loss engine.
// Everything here loops over sample indices explicitly and never touches the
// engine's class tables or multiplicity shortcuts.

#include <algorithm>
#include <cmath>
#include <vector>

#include "projnce/batch.hpp"
#include "projnce/numerics.hpp"
#include "projnce/projections.hpp"
#include "projnce/rng.hpp"

namespace oracle {

using projnce::EmbeddingBatch;
using projnce::Mat;
using projnce::ProjectionKind;
using projnce::Vec;

inline EmbeddingBatch random_batch(projnce::Rng& rng, std::size_t n, std::size_t d,
                                   int classes, double tau = 0.5) {
  EmbeddingBatch b;
  b.z = Mat(n, d);
  b.temperature = tau;
  for (std::size_t i = 0; i < n; ++i) {
    Vec v(d);
    for (double& x : v) x = rng.normal();
    v = projnce::normalize_sphere(v);
    for (std::size_t k = 0; k < d; ++k) b.z(i, k) = v[k];
  }
  // every class gets at least two members
  b.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    b.labels[i] = i < static_cast<std::size_t>(2 * classes)
                      ? static_cast<int>(i / 2)
                      : static_cast<int>(rng.index(static_cast<std::size_t>(classes)));
  }
  rng.shuffle(b.labels);
  return b;
}

inline double ip(const Mat& z, std::size_t i, const Vec& v) {
  double s = 0.0;
  for (std::size_t k = 0; k < v.size(); ++k) s += z(i, k) * v[k];
  return s;
}

inline Vec row(const Mat& z, std::size_t j) { return Vec(z.row(j).begin(), z.row(j).end()); }

struct Options {
  ProjectionKind pos = ProjectionKind::centroid;
  ProjectionKind neg = ProjectionKind::identity;
  const Mat* soft = nullptr;
  bool renormalize = false;
  bool include_anchor = false;
};

inline Vec maybe_unit(Vec v, bool on) {
  if (!on) return v;
  double n = 0.0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  for (double& x : v) x /= n;
  return v;
}

// Class embedding of class c as seen by anchor i (anchor removed from the pool).
inline Vec class_embedding(const EmbeddingBatch& b, ProjectionKind kind, std::size_t i, int c,
                           const Options& o) {
  const std::size_t n = b.size(), d = b.dim();
  Vec out(d, 0.0);
  if (kind == ProjectionKind::centroid) {
    double cnt = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i || b.labels[j] != c) continue;
      for (std::size_t k = 0; k < d; ++k) out[k] += b.z(j, k);
      cnt += 1.0;
    }
    for (double& x : out) x /= cnt;
  } else if (kind == ProjectionKind::nw_soft) {
    double den = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const double w = (*o.soft)(j, static_cast<std::size_t>(c));
      for (std::size_t k = 0; k < d; ++k) out[k] += w * b.z(j, k);
      den += w;
    }
    for (double& x : out) x /= den;
  } else if (kind == ProjectionKind::median) {
    for (std::size_t k = 0; k < d; ++k) {
      std::vector<double> v;
      for (std::size_t j = 0; j < n; ++j) {
        if (j != i && b.labels[j] == c) v.push_back(b.z(j, k));
      }
      std::sort(v.begin(), v.end());
      const std::size_t m = v.size();
      out[k] = m % 2 ? v[m / 2] : 0.5 * (v[m / 2 - 1] + v[m / 2]);
    }
  }
  return maybe_unit(out, o.renormalize);
}

// Negative-side target g(c_j) for anchor i.
inline Vec target(const EmbeddingBatch& b, ProjectionKind kind, std::size_t i, std::size_t j,
                  const Options& o) {
  if (kind == ProjectionKind::identity) return row(b.z, j);
  return class_embedding(b, kind, i, b.labels[j], o);
}

struct Value {
  double selfp = 0.0;
  double r = 0.0;
};

// Mean over anchors of the projection loss and of the leave-one-out ratio.
inline Value evaluate(const EmbeddingBatch& b, const Options& o) {
  const std::size_t n = b.size();
  const double tau = b.temperature;
  Value v;
  for (std::size_t i = 0; i < n; ++i) {
    double align = 0.0;
    if (o.pos == ProjectionKind::identity) {
      double cnt = 0.0;
      for (std::size_t p = 0; p < n; ++p) {
        if (p == i || b.labels[p] != b.labels[i]) continue;
        align += ip(b.z, i, row(b.z, p)) / tau;
        cnt += 1.0;
      }
      align /= cnt;
    } else {
      align = ip(b.z, i, class_embedding(b, o.pos, i, b.labels[i], o)) / tau;
    }
    double den = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i && !o.include_anchor) continue;
      den += std::exp(ip(b.z, i, target(b, o.neg, i, j, o)) / tau);
    }
    v.selfp += -align + std::log(den);

    double up = 0.0, down = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      if (k == i) continue;
      up += std::exp(ip(b.z, i, target(b, o.pos, i, k, o)) / tau);
      down += std::exp(ip(b.z, i, target(b, o.neg, i, k, o)) / tau);
    }
    v.r += up / down;
  }
  v.selfp /= static_cast<double>(n);
  v.r /= static_cast<double>(n);
  return v;
}

// SupCon written as an average of per-positive log-ratios.
inline double supcon(const EmbeddingBatch& b) {
  const std::size_t n = b.size();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double den = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) den += std::exp(ip(b.z, i, row(b.z, j)) / b.temperature);
    }
    double acc = 0.0, cnt = 0.0;
    for (std::size_t p = 0; p < n; ++p) {
      if (p == i || b.labels[p] != b.labels[i]) continue;
      acc += -std::log(std::exp(ip(b.z, i, row(b.z, p)) / b.temperature) / den);
      cnt += 1.0;
    }
    total += acc / cnt;
  }
  return total / static_cast<double>(n);
}

inline double infonce(const EmbeddingBatch& b, const std::vector<std::size_t>& pos) {
  const std::size_t n = b.size();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double den = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) den += std::exp(ip(b.z, i, row(b.z, j)) / b.temperature);
    }
    total += -std::log(std::exp(ip(b.z, i, row(b.z, pos[i])) / b.temperature) / den);
  }
  return total / static_cast<double>(n);
}

// Double-loop NW soft labels with the query included in its own reference set.
inline Mat nw_soft(const EmbeddingBatch& b, const projnce::KernelConfig& cfg, int classes) {
  const std::size_t n = b.size();
  Mat out(n, static_cast<std::size_t>(classes));
  for (std::size_t q = 0; q < n; ++q) {
    double tot = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      double dist = 0.0;
      if (cfg.metric == projnce::Metric::l1) {
        for (std::size_t k = 0; k < b.dim(); ++k) dist += std::abs(b.z(q, k) - b.z(j, k));
      } else if (cfg.metric == projnce::Metric::l2) {
        for (std::size_t k = 0; k < b.dim(); ++k) {
          dist += (b.z(q, k) - b.z(j, k)) * (b.z(q, k) - b.z(j, k));
        }
        dist = std::sqrt(dist);
      } else {
        double uv = 0.0, uu = 0.0, vv = 0.0;
        for (std::size_t k = 0; k < b.dim(); ++k) {
          uv += b.z(q, k) * b.z(j, k);
          uu += b.z(q, k) * b.z(q, k);
          vv += b.z(j, k) * b.z(j, k);
        }
        dist = 0.5 - 0.5 * uv / std::sqrt(uu * vv);
      }
      if (q == j) dist = 0.0;
      const double t = dist / cfg.bandwidth;
      const double w = t <= 1.0 ? (1.0 - t * t) / cfg.bandwidth : 0.0;
      out(q, static_cast<std::size_t>(b.labels[j])) += w;
      tot += w;
    }
    for (std::size_t c = 0; c < out.cols(); ++c) out(q, c) /= tot;
  }
  return out;
}

// Brute-force mixed KSG over all pairs.
inline double mixed_ksg(const Mat& x, const std::vector<int>& labels, std::size_t k) {
  const std::size_t n = x.rows();
  std::vector<std::size_t> size;
  for (int l : labels) {
    if (static_cast<std::size_t>(l) >= size.size()) size.resize(static_cast<std::size_t>(l) + 1);
    ++size[static_cast<std::size_t>(l)];
  }
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> all(n), same;
    for (std::size_t j = 0; j < n; ++j) {
      double m = 0.0;
      for (std::size_t q = 0; q < x.cols(); ++q) m = std::max(m, std::abs(x(i, q) - x(j, q)));
      all[j] = m;
      if (j != i && labels[j] == labels[i]) same.push_back(m);
    }
    if (same.empty()) continue;
    std::sort(same.begin(), same.end());
    const std::size_t kk = std::min(k, same.size());
    const double rho = same[kk - 1];
    double kt, nx, nc;
    if (rho == 0.0) {
      kt = 1.0 + static_cast<double>(std::count(same.begin(), same.end(), 0.0));
      nx = static_cast<double>(std::count(all.begin(), all.end(), 0.0));
      nc = kt;
    } else {
      kt = static_cast<double>(kk);
      nx = 0.0;
      for (std::size_t j = 0; j < n; ++j) nx += (j != i && all[j] <= rho) ? 1.0 : 0.0;
      nc = static_cast<double>(size[static_cast<std::size_t>(labels[i])]);
    }
    total += projnce::digamma(kt) + std::log(static_cast<double>(n)) - projnce::digamma(nx) -
             projnce::digamma(nc);
  }
  return total / static_cast<double>(n);
}

}  // namespace oracle
