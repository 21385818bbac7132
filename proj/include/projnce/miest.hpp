#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "json.hpp"

#include "projnce/batch.hpp"
#include "projnce/errors.hpp"
#include "projnce/losses.hpp"
#include "projnce/mi_estimate.hpp"
#include "projnce/numerics.hpp"
#include "projnce/rng.hpp"
#include "projnce/synthdata.hpp"

namespace projnce {

inline constexpr std::size_t kDefaultKsgNeighbours = 5;

struct KsgOptions {
  std::size_t k = kDefaultKsgNeighbours;
  bool clamp_nonnegative = false;
};

/// Mixed KSG estimate of I(X; C) for continuous X and discrete C. Points with
/// different labels are infinitely far apart in the joint space, so the k-th
/// joint neighbour is searched among same-label points in the max norm. With
/// rho_i the distance to it, each point contributes
///   psi(k_i) + log N - psi(n_x,i) - psi(n_c,i)
/// where n_x,i counts points (self excluded) within rho_i in X and n_c,i is the
/// size of the label class (self included). At rho_i = 0 all three counts are
/// taken over exact duplicates, self included.
inline MIEstimate mixed_ksg(const Mat& x, const std::vector<int>& labels, KsgOptions opt = {}) {
  const std::size_t n = x.rows(), d = x.cols();
  if (labels.size() != n) throw DimensionError("mixed_ksg: label count mismatch");
  if (opt.k < 1) throw ConfigError("mixed_ksg: k must be >= 1");
  if (n <= opt.k) throw InsufficientSamples("mixed_ksg: need more than k samples");

  std::vector<std::size_t> class_size;
  for (int l : labels) {
    if (l < 0) throw DimensionError("mixed_ksg: negative label");
    const auto c = static_cast<std::size_t>(l);
    if (c >= class_size.size()) class_size.resize(c + 1, 0);
    ++class_size[c];
  }

  const double log_n = std::log(static_cast<double>(n));
  std::vector<double> terms(n, 0.0);

  // Candidates are pruned by the first coordinate: a point farther than r in
  // x_0 is farther than r in the max norm.
  auto dist = [&](std::size_t i, std::size_t j) {
    const auto xi = x.row(i), xj = x.row(j);
    double m = 0.0;
    for (std::size_t q = 0; q < d; ++q) m = std::max(m, std::abs(xi[q] - xj[q]));
    return m;
  };
  auto key = [&](std::size_t i) { return d ? x(i, 0) : 0.0; };
  auto by_key = [&](std::size_t a, std::size_t b) { return key(a) < key(b); };

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), by_key);
  std::vector<std::vector<std::size_t>> by_class(class_size.size());
  std::vector<std::size_t> pos_in_class(n);
  for (std::size_t i : order) {
    auto& v = by_class[static_cast<std::size_t>(labels[i])];
    pos_in_class[i] = v.size();
    v.push_back(i);
  }

  // Points j != i (of `pool`, sorted by key) with dist(i, j) <= r.
  auto count_within = [&](std::size_t i, double r, const std::vector<std::size_t>& pool) {
    const double k0 = key(i);
    auto lo = std::lower_bound(pool.begin(), pool.end(), k0,
                               [&](std::size_t j, double v) { return v - key(j) > r; });
    std::size_t cnt = 0;
    for (auto it = lo; it != pool.end() && key(*it) - k0 <= r; ++it) {
      if (*it != i && dist(i, *it) <= r) ++cnt;
    }
    return cnt;
  };

  std::vector<double> heap;
  for (std::size_t i = 0; i < n; ++i) {
    const auto ci = static_cast<std::size_t>(labels[i]);
    const auto& pool = by_class[ci];
    if (pool.size() < 2) continue;  // singleton class carries no neighbour information
    const std::size_t k = std::min(opt.k, pool.size() - 1);
    heap.clear();
    const double k0 = key(i);
    auto offer = [&](std::size_t j) {
      const double dj = dist(i, j);
      if (heap.size() < k) {
        heap.push_back(dj);
        std::push_heap(heap.begin(), heap.end());
      } else if (dj < heap.front()) {
        std::pop_heap(heap.begin(), heap.end());
        heap.back() = dj;
        std::push_heap(heap.begin(), heap.end());
      }
    };
    const std::size_t p = pos_in_class[i];
    std::size_t left = p, right = p + 1;
    while (left > 0 || right < pool.size()) {
      const double gl = left > 0 ? k0 - key(pool[left - 1]) : INFINITY;
      const double gr = right < pool.size() ? key(pool[right]) - k0 : INFINITY;
      const double gap = std::min(gl, gr);
      if (heap.size() == k && gap > heap.front()) break;
      if (gl <= gr) offer(pool[--left]);
      else offer(pool[right++]);
    }
    const double rho = heap.front();

    double kt, nx, nc;
    if (rho == 0.0) {
      kt = 1.0 + static_cast<double>(count_within(i, 0.0, pool));
      nx = 1.0 + static_cast<double>(count_within(i, 0.0, order));
      nc = kt;
    } else {
      kt = static_cast<double>(k);
      nx = static_cast<double>(count_within(i, rho, order));
      nc = static_cast<double>(class_size[ci]);
    }
    terms[i] = digamma(kt) + log_n - digamma(nx) - digamma(nc);
  }
  const MeanStderr ms = mean_stderr(terms);
  MIEstimate est;
  est.value = opt.clamp_nonnegative ? std::max(0.0, ms.mean) : ms.mean;
  est.method = MIMethod::mixed_ksg;
  est.k = opt.k;
  est.n = n;
  est.std_error = ms.std_error;
  return est;
}

// ---------------------------------------------------------------------------
// Lower bounds evaluated on held-out batches

namespace detail {

inline MIEstimate summarize_bound(const std::vector<double>& per_batch, MIMethod method) {
  if (per_batch.empty()) throw ConfigError("bound evaluation needs at least one batch");
  const MeanStderr ms = mean_stderr(per_batch);
  MIEstimate est;
  est.value = ms.mean;
  est.method = method;
  est.n = per_batch.size();
  est.std_error = ms.std_error;
  return est;
}

}  // namespace detail

/// 1 + log N - I_self-p - R per batch, averaged over batches. The projection
/// loss uses the full denominator j = 1..N as in the statement of the bound.
/// The batch-mean of R is stored in `mean_adjustment` when given.
inline MIEstimate bound_prop1(const std::vector<EmbeddingBatch>& batches,
                              const ProjectionSpec& spec, LossOptions opt = {},
                              const std::vector<SoftLabelTable>* soft = nullptr,
                              double* mean_adjustment = nullptr) {
  opt.literal_denominator = true;
  opt.compute_grad = false;
  opt.strict = false;
  std::vector<double> vals;
  double adj = 0.0;
  for (std::size_t b = 0; b < batches.size(); ++b) {
    EngineConfig cfg = engine_for(spec, opt, soft ? &(*soft)[b] : nullptr);
    cfg.with_adjustment = true;
    const LossBreakdown lb = evaluate_loss(batches[b], cfg);
    const double n = static_cast<double>(batches[b].size());
    vals.push_back(1.0 + std::log(n) - (lb.alignment + lb.uniformity) - lb.adjustment);
    adj += lb.adjustment;
  }
  if (mean_adjustment && !batches.empty()) {
    *mean_adjustment = adj / static_cast<double>(batches.size());
  }
  return detail::summarize_bound(vals, MIMethod::bound_prop1);
}

/// log N - SoftNCE per batch, averaged over batches.
inline MIEstimate bound_softnce(const std::vector<EmbeddingBatch>& batches,
                                const KernelConfig& kernel,
                                SoftSource source = SoftSource::nw_estimated,
                                const std::vector<SoftLabelTable>* soft = nullptr) {
  LossOptions opt;
  opt.compute_grad = false;
  opt.strict = false;
  std::vector<double> vals;
  for (std::size_t b = 0; b < batches.size(); ++b) {
    const LossBreakdown lb =
        softnce(batches[b], kernel, source, soft ? &(*soft)[b] : nullptr, opt);
    vals.push_back(std::log(static_cast<double>(batches[b].size())) - lb.total);
  }
  return detail::summarize_bound(vals, MIMethod::bound_softnce);
}

/// log N - SupCon per batch. Not a certified bound; reported for contrast.
inline MIEstimate raw_supcon_gap(const std::vector<EmbeddingBatch>& batches) {
  std::vector<double> vals;
  for (const auto& b : batches) {
    vals.push_back(std::log(static_cast<double>(b.size())) - supcon(b, false, false).total);
  }
  return detail::summarize_bound(vals, MIMethod::bound_prop1);
}

// ---------------------------------------------------------------------------
// SoftNCE with the analytic optimal critic

struct ConsistencyPoint {
  std::size_t n = 0;
  double bound = 0.0;          // trial mean of log N - SoftNCE
  double bound_std_error = 0.0;
  double gap = 0.0;            // |bound - oracle|
  std::size_t trials = 0;
};

/// SoftNCE evaluated with psi(x, c) = log p(c|x) - log p(c) on one sample.
inline double softnce_optimal_critic(const GMMSpec& spec, const LabeledDataset& data) {
  const PosteriorModel model(spec);
  const std::size_t n = data.size(), m = spec.num_classes;
  std::vector<double> counts(m, 0.0);
  for (int l : data.labels) counts[static_cast<std::size_t>(l)] += 1.0;
  std::vector<double> logs;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Vec lp = model.log_posterior(data.features.row(i));
    logs.clear();
    for (std::size_t c = 0; c < m; ++c) {
      if (counts[c] == 0.0) continue;
      logs.push_back(lp[c] - std::log(spec.priors[c]) + std::log(counts[c]));
    }
    const auto ci = static_cast<std::size_t>(data.labels[i]);
    total += -(lp[ci] - std::log(spec.priors[ci])) + logsumexp(logs);
  }
  return total / static_cast<double>(n);
}

inline std::vector<ConsistencyPoint> softnce_consistency_curve(const GMMSpec& spec,
                                                               const std::vector<std::size_t>& ns,
                                                               std::size_t trials, double oracle,
                                                               const Rng& rng) {
  if (trials < 2) throw ConfigError("consistency curve needs at least 2 trials");
  std::vector<ConsistencyPoint> out;
  for (std::size_t n : ns) {
    if (n < 2) throw ConfigError("consistency curve batch sizes must be >= 2");
    std::vector<double> vals;
    for (std::size_t t = 0; t < trials; ++t) {
      Rng r = rng.split("softnce-consistency", n * 1000003ULL + t);
      const LabeledDataset data = sample(spec, n, r);
      vals.push_back(std::log(static_cast<double>(n)) - softnce_optimal_critic(spec, data));
    }
    const MeanStderr ms = mean_stderr(vals);
    ConsistencyPoint p;
    p.n = n;
    p.bound = ms.mean;
    p.bound_std_error = ms.std_error;
    p.gap = std::abs(ms.mean - oracle);
    p.trials = trials;
    out.push_back(p);
  }
  return out;
}

// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const MIEstimate& e, std::uint64_t seed) {
  nlohmann::json j;
  j["method"] = to_string(e.method);
  j["value"] = e.value;
  j["stderr"] = e.std_error ? nlohmann::json(*e.std_error) : nlohmann::json(nullptr);
  j["k"] = e.k;
  j["n"] = e.n;
  j["seed"] = seed;
  return j;
}

}  // namespace projnce
