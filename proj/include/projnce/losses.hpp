#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "projnce/batch.hpp"
#include "projnce/errors.hpp"
#include "projnce/numerics.hpp"
#include "projnce/projections.hpp"

namespace projnce {

/// Per-batch loss value, its decomposition and the gradient with respect to
/// the embedding matrix.
struct LossBreakdown {
  double total = 0.0;
  double alignment = 0.0;
  double uniformity = 0.0;
  double adjustment = 0.0;
  double beta = 0.0;
  Mat grad;
  std::size_t anchors_used = 0;
  std::size_t anchors_skipped = 0;
  std::size_t fallback_rows = 0;  // NW rows supported only by the query itself
};

inline double critic(std::span<const double> u, std::span<const double> v, double tau) {
  if (!(tau > 0.0)) throw DomainError("critic: temperature must be positive");
  return dot(u, v) / tau;
}

/// Full configuration of one member of the loss family.
struct EngineConfig {
  ProjectionSpec spec;
  bool with_adjustment = false;
  double beta = 1.0;
  bool include_anchor_in_denominator = false;
  bool strict_class_exclusion = false;
  bool strict = true;            // MissingPositive instead of skipping anchors
  bool leave_anchor_out = true;  // class projections for anchor i exclude sample i
  bool compute_grad = true;
  const std::vector<std::size_t>* positives = nullptr;  // explicit positive per anchor
  const SoftLabelTable* soft = nullptr;  // fixed soft labels; otherwise NW over the batch
};

namespace detail {

inline constexpr std::size_t kNoPositive = static_cast<std::size_t>(-1);

struct Context {
  const EmbeddingBatch* batch = nullptr;
  std::size_t n = 0, d = 0, m = 0;
  std::vector<std::size_t> counts;
  std::vector<std::vector<std::size_t>> members;
  bool leave_out = true;
  double tau = 1.0;

  std::size_t label(std::size_t i) const { return static_cast<std::size_t>(batch->labels[i]); }
  std::span<const double> z(std::size_t i) const { return batch->z.row(i); }
};

/// NW soft labels computed from the batch itself, kept for backprop.
struct BatchNW {
  KernelConfig cfg;
  Mat dist;
  Mat k;
  Vec w;
  SoftLabelTable table;
};

inline BatchNW batch_nw(const Context& ctx, const KernelConfig& cfg) {
  BatchNW nw;
  nw.cfg = cfg;
  nw.dist = Mat(ctx.n, ctx.n);
  nw.k = Mat(ctx.n, ctx.n);
  nw.w = Vec(ctx.n, 0.0);
  nw.table.source = SoftSource::nw_estimated;
  nw.table.probs = Mat(ctx.n, ctx.m);
  for (std::size_t j = 0; j < ctx.n; ++j) {
    bool others = false;
    for (std::size_t q = 0; q < ctx.n; ++q) {
      const double dd = j == q ? 0.0 : kernel_distance(cfg.metric, ctx.z(j), ctx.z(q));
      const double kv = kernel_value(cfg.bandwidth, dd);
      nw.dist(j, q) = dd;
      nw.k(j, q) = kv;
      if (kv > 0.0) {
        nw.table.probs(j, ctx.label(q)) += kv;
        nw.w[j] += kv;
        if (q != j) others = true;
      }
    }
    if (!others) ++nw.table.self_only_rows;
    for (std::size_t c = 0; c < ctx.m; ++c) nw.table.probs(j, c) /= nw.w[j];
  }
  return nw;
}

/// Class projection G(i, c) for every anchor i and every class present in the
/// batch, flattened as [i][c][k].
struct ClassTable {
  ProjectionKind kind = ProjectionKind::centroid;
  bool renormalize = false;
  std::size_t n = 0, m = 0, d = 0;
  std::vector<double> raw;
  std::vector<double> value;
  std::vector<double> norm;
  std::vector<char> valid;
  // nw_soft state
  const Mat* soft = nullptr;
  Mat t;   // M x d weighted sums
  Vec wc;  // M soft masses
  // median state: per class, per coordinate, member indices sorted by value
  std::vector<std::vector<std::vector<std::size_t>>> order;
  std::vector<std::vector<std::vector<std::size_t>>> rank;  // [c][k][member position]
  std::vector<std::size_t> slot;  // position of each sample inside its class member list

  std::size_t off(std::size_t i, std::size_t c) const { return (i * m + c) * d; }
  std::span<const double> at(std::size_t i, std::size_t c) const {
    return {value.data() + off(i, c), d};
  }
  bool ok(std::size_t i, std::size_t c) const { return valid[i * m + c] != 0; }
};

// Positions in the full sorted member list that define the median after the
// member at rank `skip` is removed (kNoPositive keeps all). Returns one or two
// positions.
inline std::vector<std::size_t> median_positions(std::size_t count, std::size_t skip) {
  const std::size_t mm = skip == kNoPositive ? count : count - 1;
  auto lift = [&](std::size_t q) { return (skip != kNoPositive && q >= skip) ? q + 1 : q; };
  if (mm % 2 == 1) return {lift(mm / 2)};
  return {lift(mm / 2 - 1), lift(mm / 2)};
}

inline ClassTable build_class_table(const Context& ctx, ProjectionKind kind, bool renormalize,
                                    const Mat* soft) {
  ClassTable tb;
  tb.kind = kind;
  tb.renormalize = renormalize;
  tb.n = ctx.n;
  tb.m = ctx.m;
  tb.d = ctx.d;
  tb.raw.assign(ctx.n * ctx.m * ctx.d, 0.0);
  tb.valid.assign(ctx.n * ctx.m, 0);
  const std::size_t n = ctx.n, m = ctx.m, d = ctx.d;

  if (kind == ProjectionKind::centroid) {
    Mat sums(m, d);
    for (std::size_t j = 0; j < n; ++j) {
      auto zj = ctx.z(j);
      for (std::size_t k = 0; k < d; ++k) sums(ctx.label(j), k) += zj[k];
    }
    for (std::size_t i = 0; i < n; ++i) {
      auto zi = ctx.z(i);
      for (std::size_t c = 0; c < m; ++c) {
        if (ctx.counts[c] == 0) continue;
        const bool self = ctx.leave_out && ctx.label(i) == c;
        const std::size_t cnt = ctx.counts[c] - (self ? 1 : 0);
        if (cnt == 0) continue;
        double* g = tb.raw.data() + tb.off(i, c);
        for (std::size_t k = 0; k < d; ++k) {
          g[k] = (sums(c, k) - (self ? zi[k] : 0.0)) / static_cast<double>(cnt);
        }
        tb.valid[i * m + c] = 1;
      }
    }
  } else if (kind == ProjectionKind::nw_soft) {
    tb.soft = soft;
    tb.t = Mat(m, d);
    tb.wc = Vec(m, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      auto zj = ctx.z(j);
      for (std::size_t c = 0; c < m; ++c) {
        const double s = (*soft)(j, c);
        tb.wc[c] += s;
        for (std::size_t k = 0; k < d; ++k) tb.t(c, k) += s * zj[k];
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      auto zi = ctx.z(i);
      for (std::size_t c = 0; c < m; ++c) {
        if (ctx.counts[c] == 0) continue;
        const double self = ctx.leave_out ? (*soft)(i, c) : 0.0;
        const double den = tb.wc[c] - self;
        if (!(den > kSoftDenominatorEpsilon)) continue;
        double* g = tb.raw.data() + tb.off(i, c);
        for (std::size_t k = 0; k < d; ++k) g[k] = (tb.t(c, k) - self * zi[k]) / den;
        tb.valid[i * m + c] = 1;
      }
    }
  } else if (kind == ProjectionKind::median) {
    tb.order.assign(m, {});
    tb.rank.assign(m, {});
    for (std::size_t c = 0; c < m; ++c) {
      const auto& mem = ctx.members[c];
      if (mem.empty()) continue;
      tb.order[c].assign(d, {});
      tb.rank[c].assign(d, std::vector<std::size_t>(mem.size()));
      for (std::size_t k = 0; k < d; ++k) {
        std::vector<std::size_t> pos(mem.size());
        for (std::size_t p = 0; p < pos.size(); ++p) pos[p] = p;
        std::sort(pos.begin(), pos.end(), [&](std::size_t a, std::size_t b) {
          const double va = ctx.batch->z(mem[a], k), vb = ctx.batch->z(mem[b], k);
          return va < vb || (va == vb && mem[a] < mem[b]);
        });
        tb.order[c][k].resize(pos.size());
        for (std::size_t r = 0; r < pos.size(); ++r) {
          tb.order[c][k][r] = mem[pos[r]];
          tb.rank[c][k][pos[r]] = r;
        }
      }
    }
    tb.slot.assign(n, 0);
    for (std::size_t c = 0; c < m; ++c) {
      for (std::size_t p = 0; p < ctx.members[c].size(); ++p) tb.slot[ctx.members[c][p]] = p;
    }
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < m; ++c) {
        const std::size_t cnt = ctx.members[c].size();
        if (cnt == 0) continue;
        const bool self = ctx.leave_out && ctx.label(i) == c;
        if (self && cnt == 1) continue;
        double* g = tb.raw.data() + tb.off(i, c);
        for (std::size_t k = 0; k < d; ++k) {
          const auto pos = median_positions(cnt, self ? tb.rank[c][k][tb.slot[i]] : kNoPositive);
          double acc = 0.0;
          for (std::size_t p : pos) acc += ctx.batch->z(tb.order[c][k][p], k);
          g[k] = acc / static_cast<double>(pos.size());
        }
        tb.valid[i * m + c] = 1;
      }
    }
  }

  tb.value = tb.raw;
  if (renormalize) {
    tb.norm.assign(n * m, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < m; ++c) {
        if (!tb.ok(i, c)) continue;
        std::span<const double> r(tb.raw.data() + tb.off(i, c), d);
        const double nr = norm2(r);
        if (!(nr > kNormEpsilon)) throw DegenerateNorm("class projection has zero norm");
        tb.norm[i * m + c] = nr;
        for (std::size_t k = 0; k < d; ++k) tb.value[tb.off(i, c) + k] = r[k] / nr;
      }
    }
  }
  return tb;
}

/// Pulls gradients on G(i, c) back to the batch embeddings (dz) and, for
/// nw_soft, to the soft-label table (ds).
inline void class_table_backward(const Context& ctx, const ClassTable& tb, std::vector<double> dg,
                                 Mat& dz, Mat* ds) {
  const std::size_t n = tb.n, m = tb.m, d = tb.d;
  if (tb.renormalize) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < m; ++c) {
        if (!tb.ok(i, c)) continue;
        double* g = dg.data() + tb.off(i, c);
        const double* v = tb.value.data() + tb.off(i, c);
        double proj = 0.0;
        for (std::size_t k = 0; k < d; ++k) proj += v[k] * g[k];
        const double nr = tb.norm[i * m + c];
        for (std::size_t k = 0; k < d; ++k) g[k] = (g[k] - v[k] * proj) / nr;
      }
    }
  }

  if (tb.kind == ProjectionKind::centroid) {
    Mat dsum(m, d);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < m; ++c) {
        if (!tb.ok(i, c)) continue;
        const bool self = ctx.leave_out && ctx.label(i) == c;
        const double cnt = static_cast<double>(ctx.counts[c] - (self ? 1 : 0));
        const double* g = dg.data() + tb.off(i, c);
        for (std::size_t k = 0; k < d; ++k) {
          dsum(c, k) += g[k] / cnt;
          if (self) dz(i, k) -= g[k] / cnt;
        }
      }
    }
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t k = 0; k < d; ++k) dz(j, k) += dsum(ctx.label(j), k);
    }
  } else if (tb.kind == ProjectionKind::nw_soft) {
    const Mat& s = *tb.soft;
    Mat dt(m, d);
    Vec dw(m, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      auto zi = ctx.z(i);
      for (std::size_t c = 0; c < m; ++c) {
        if (!tb.ok(i, c)) continue;
        const double self = ctx.leave_out ? s(i, c) : 0.0;
        const double den = tb.wc[c] - self;
        const double* g = dg.data() + tb.off(i, c);
        const double* graw = tb.raw.data() + tb.off(i, c);
        double g_dot_z = 0.0, g_dot_raw = 0.0;
        for (std::size_t k = 0; k < d; ++k) {
          dt(c, k) += g[k] / den;
          g_dot_z += g[k] * zi[k];
          g_dot_raw += g[k] * graw[k];
          if (ctx.leave_out) dz(i, k) -= self * g[k] / den;
        }
        dw[c] -= g_dot_raw / den;
        if (ds && ctx.leave_out) (*ds)(i, c) += (-g_dot_z + g_dot_raw) / den;
      }
    }
    for (std::size_t j = 0; j < n; ++j) {
      auto zj = ctx.z(j);
      for (std::size_t c = 0; c < m; ++c) {
        const double sj = s(j, c);
        double zdt = 0.0;
        for (std::size_t k = 0; k < d; ++k) {
          dz(j, k) += sj * dt(c, k);
          zdt += zj[k] * dt(c, k);
        }
        if (ds) (*ds)(j, c) += zdt + dw[c];
      }
    }
  } else if (tb.kind == ProjectionKind::median) {
    const auto& slot = tb.slot;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < m; ++c) {
        if (!tb.ok(i, c)) continue;
        const std::size_t cnt = ctx.members[c].size();
        const bool self = ctx.leave_out && ctx.label(i) == c;
        const double* g = dg.data() + tb.off(i, c);
        for (std::size_t k = 0; k < d; ++k) {
          if (g[k] == 0.0) continue;
          const auto pos = median_positions(cnt, self ? tb.rank[c][k][slot[i]] : kNoPositive);
          const double share = g[k] / static_cast<double>(pos.size());
          for (std::size_t p : pos) dz(tb.order[c][k][p], k) += share;
        }
      }
    }
  }
}

/// Pulls gradients on batch-estimated soft labels back through the kernel.
inline void batch_nw_backward(const Context& ctx, const BatchNW& nw, const Mat& ds, Mat& dz) {
  const std::size_t n = ctx.n, m = ctx.m, d = ctx.d;
  const Mat& s = nw.table.probs;
  Vec gu(d), gv(d);
  for (std::size_t j = 0; j < n; ++j) {
    double mix = 0.0;
    for (std::size_t c = 0; c < m; ++c) mix += ds(j, c) * s(j, c);
    for (std::size_t q = 0; q < n; ++q) {
      if (q == j) continue;
      const double dd = nw.dist(j, q);
      if (!(dd < nw.cfg.bandwidth)) continue;
      const double dk = (ds(j, ctx.label(q)) - mix) / nw.w[j];
      const double gdist = dk * kernel_slope(nw.cfg.bandwidth, dd);
      if (gdist == 0.0) continue;
      kernel_distance_grad_u(nw.cfg.metric, ctx.z(j), ctx.z(q), gu);
      if (nw.cfg.metric == Metric::cosine) {
        kernel_distance_grad_u(nw.cfg.metric, ctx.z(q), ctx.z(j), gv);
      } else {
        for (std::size_t k = 0; k < d; ++k) gv[k] = -gu[k];
      }
      for (std::size_t k = 0; k < d; ++k) {
        dz(j, k) += gdist * gu[k];
        dz(q, k) += gdist * gv[k];
      }
    }
  }
}

/// log-sum-exp of the critic between anchor i and the projections g(c_j) over
/// a multiset of indices j, with the softmax weights kept for backprop.
struct TermSet {
  bool identity = true;
  std::vector<std::size_t> idx;   // identity: sample indices
  std::vector<double> mult;       // class mode: multiplicity per class
  std::vector<double> weights;
  double lse = 0.0;
};

inline TermSet eval_terms(const Context& ctx, std::size_t i, ProjectionKind kind,
                          const ClassTable* tb, bool skip_self, bool skip_same_class) {
  TermSet ts;
  ts.identity = kind == ProjectionKind::identity;
  auto zi = ctx.z(i);
  std::vector<double> vals;
  if (ts.identity) {
    ts.idx.reserve(ctx.n);
    vals.reserve(ctx.n);
    for (std::size_t j = 0; j < ctx.n; ++j) {
      if (skip_self && j == i) continue;
      if (skip_same_class && ctx.label(j) == ctx.label(i)) continue;
      ts.idx.push_back(j);
      vals.push_back(dot(zi, ctx.z(j)) / ctx.tau);
    }
    if (vals.empty()) throw MissingPositive("anchor has an empty comparison set");
    const double top = *std::max_element(vals.begin(), vals.end());
    double sum = 0.0;
    for (double& v : vals) {
      v = std::exp(v - top);
      sum += v;
    }
    ts.lse = top + std::log(sum);
    for (double& v : vals) v /= sum;
    ts.weights = std::move(vals);
    return ts;
  }
  ts.mult.assign(ctx.m, 0.0);
  for (std::size_t c = 0; c < ctx.m; ++c) {
    double cnt = static_cast<double>(ctx.counts[c]);
    if (c == ctx.label(i)) {
      if (skip_same_class) cnt = 0.0;
      else if (skip_self) cnt -= 1.0;
    }
    ts.mult[c] = cnt;
  }
  vals.assign(ctx.m, -std::numeric_limits<double>::infinity());
  std::vector<double> logs;
  for (std::size_t c = 0; c < ctx.m; ++c) {
    if (ts.mult[c] <= 0.0) continue;
    if (!tb->ok(i, c)) {
      throw EmptySupport("projection for class " + std::to_string(c) + " is undefined");
    }
    vals[c] = dot(zi, tb->at(i, c)) / ctx.tau;
    logs.push_back(vals[c] + std::log(ts.mult[c]));
  }
  if (logs.empty()) throw MissingPositive("anchor has an empty comparison set");
  ts.lse = logsumexp(logs);
  ts.weights.assign(ctx.m, 0.0);
  for (std::size_t c = 0; c < ctx.m; ++c) {
    if (ts.mult[c] > 0.0) ts.weights[c] = ts.mult[c] * std::exp(vals[c] - ts.lse);
  }
  return ts;
}

inline void backprop_terms(const Context& ctx, std::size_t i, const TermSet& ts,
                           const ClassTable* tb, double upstream, Mat& dz,
                           std::vector<double>* dg) {
  if (upstream == 0.0) return;
  auto zi = ctx.z(i);
  const double scale = upstream / ctx.tau;
  if (ts.identity) {
    for (std::size_t q = 0; q < ts.idx.size(); ++q) {
      const std::size_t j = ts.idx[q];
      const double w = ts.weights[q] * scale;
      auto zj = ctx.z(j);
      for (std::size_t k = 0; k < ctx.d; ++k) {
        dz(i, k) += w * zj[k];
        dz(j, k) += w * zi[k];
      }
    }
    return;
  }
  for (std::size_t c = 0; c < ctx.m; ++c) {
    if (ts.weights[c] == 0.0) continue;
    const double w = ts.weights[c] * scale;
    auto g = tb->at(i, c);
    double* dgc = dg->data() + tb->off(i, c);
    for (std::size_t k = 0; k < ctx.d; ++k) {
      dz(i, k) += w * g[k];
      dgc[k] += w * zi[k];
    }
  }
}

}  // namespace detail

/// Evaluates one member of the loss family on a batch.
inline LossBreakdown evaluate_loss(const EmbeddingBatch& batch, const EngineConfig& cfg) {
  using namespace detail;
  batch.validate();
  cfg.spec.validate();
  Context ctx;
  ctx.batch = &batch;
  ctx.n = batch.size();
  ctx.d = batch.dim();
  ctx.m = static_cast<std::size_t>(batch.num_classes());
  ctx.tau = batch.temperature;
  ctx.leave_out = cfg.leave_anchor_out;
  ctx.counts.assign(ctx.m, 0);
  ctx.members.assign(ctx.m, {});
  for (std::size_t i = 0; i < ctx.n; ++i) {
    ++ctx.counts[ctx.label(i)];
    ctx.members[ctx.label(i)].push_back(i);
  }
  if (cfg.positives && cfg.positives->size() != ctx.n) {
    throw DimensionError("positive map size does not match the batch");
  }

  LossBreakdown out;
  out.beta = cfg.with_adjustment ? cfg.beta : 0.0;
  out.grad = Mat(ctx.n, ctx.d);

  // Soft labels
  std::optional<BatchNW> nw;
  const Mat* soft = nullptr;
  if (cfg.spec.uses_kernel()) {
    if (cfg.soft) {
      if (cfg.soft->probs.rows() != ctx.n || cfg.soft->probs.cols() < ctx.m) {
        throw DimensionError("soft label table does not match the batch");
      }
      soft = &cfg.soft->probs;
      out.fallback_rows = cfg.soft->self_only_rows;
    } else {
      nw = batch_nw(ctx, *cfg.spec.kernel);
      soft = &nw->table.probs;
      out.fallback_rows = nw->table.self_only_rows;
    }
  }

  const ProjectionKind pos = cfg.spec.positive, neg = cfg.spec.negative;
  std::optional<ClassTable> pos_tb, neg_tb;
  if (pos != ProjectionKind::identity) {
    pos_tb = build_class_table(ctx, pos, cfg.spec.renormalize, soft);
  }
  if (neg != ProjectionKind::identity) {
    if (neg != pos) neg_tb = build_class_table(ctx, neg, cfg.spec.renormalize, soft);
  }
  const bool shared = pos_tb && neg == pos;
  const ClassTable* ptb = pos_tb ? &*pos_tb : nullptr;
  const ClassTable* ntb = shared ? ptb : (neg_tb ? &*neg_tb : nullptr);

  // Anchor eligibility
  std::vector<char> use(ctx.n, 0);
  std::vector<std::vector<std::size_t>> pos_set(ctx.n);
  for (std::size_t i = 0; i < ctx.n; ++i) {
    bool ok = false;
    if (pos == ProjectionKind::identity) {
      if (cfg.positives) {
        const std::size_t p = (*cfg.positives)[i];
        if (p != i && p < ctx.n) pos_set[i] = {p};
      } else {
        for (std::size_t p : ctx.members[ctx.label(i)]) {
          if (p != i) pos_set[i].push_back(p);
        }
      }
      ok = !pos_set[i].empty();
    } else {
      ok = ptb->ok(i, ctx.label(i));
    }
    if (ok && cfg.with_adjustment && cfg.strict_class_exclusion &&
        ctx.counts[ctx.label(i)] == ctx.n) {
      ok = false;
    }
    if (!ok) {
      if (cfg.strict) {
        throw MissingPositive("anchor " + std::to_string(i) + " has no positive");
      }
      ++out.anchors_skipped;
      continue;
    }
    use[i] = 1;
    ++out.anchors_used;
  }
  if (out.anchors_used == 0) throw MissingPositive("no anchor in the batch has a positive");
  const double inv_u = 1.0 / static_cast<double>(out.anchors_used);

  std::vector<double> dg_pos, dg_neg;
  if (cfg.compute_grad) {
    if (ptb) dg_pos.assign(ptb->raw.size(), 0.0);
    if (ntb && !shared) dg_neg.assign(ntb->raw.size(), 0.0);
  }
  std::vector<double>* dgp = ptb ? &dg_pos : nullptr;
  std::vector<double>* dgn = shared ? &dg_pos : (ntb ? &dg_neg : nullptr);

  double sum_align = 0.0, sum_unif = 0.0, sum_adj = 0.0;
  for (std::size_t i = 0; i < ctx.n; ++i) {
    if (!use[i]) continue;
    auto zi = ctx.z(i);

    // Alignment
    if (pos == ProjectionKind::identity) {
      const auto& ps = pos_set[i];
      const double inv_p = 1.0 / static_cast<double>(ps.size());
      double a = 0.0;
      for (std::size_t p : ps) a += dot(zi, ctx.z(p));
      a *= inv_p / ctx.tau;
      sum_align -= a;
      if (cfg.compute_grad) {
        const double w = -inv_u * inv_p / ctx.tau;
        for (std::size_t p : ps) {
          auto zp = ctx.z(p);
          for (std::size_t k = 0; k < ctx.d; ++k) {
            out.grad(i, k) += w * zp[k];
            out.grad(p, k) += w * zi[k];
          }
        }
      }
    } else {
      auto g = ptb->at(i, ctx.label(i));
      sum_align -= dot(zi, g) / ctx.tau;
      if (cfg.compute_grad) {
        const double w = -inv_u / ctx.tau;
        double* dgc = dgp->data() + ptb->off(i, ctx.label(i));
        for (std::size_t k = 0; k < ctx.d; ++k) {
          out.grad(i, k) += w * g[k];
          dgc[k] += w * zi[k];
        }
      }
    }

    // Uniformity
    const TermSet den = eval_terms(ctx, i, neg, ntb, !cfg.include_anchor_in_denominator, false);
    sum_unif += den.lse;
    if (cfg.compute_grad) backprop_terms(ctx, i, den, ntb, inv_u, out.grad, dgn);

    // Adjustment
    if (cfg.with_adjustment) {
      const bool skip_class = cfg.strict_class_exclusion;
      const TermSet up = eval_terms(ctx, i, pos, ptb, true, skip_class);
      const bool same_as_den = !skip_class && !cfg.include_anchor_in_denominator;
      const TermSet down = same_as_den ? den : eval_terms(ctx, i, neg, ntb, true, skip_class);
      const double r = std::exp(up.lse - down.lse);
      sum_adj += r;
      if (cfg.compute_grad) {
        const double u = cfg.beta * r * inv_u;
        backprop_terms(ctx, i, up, ptb, u, out.grad, dgp);
        backprop_terms(ctx, i, down, ntb, -u, out.grad, dgn);
      }
    }
  }

  out.alignment = sum_align * inv_u;
  out.uniformity = sum_unif * inv_u;
  out.adjustment = cfg.with_adjustment ? sum_adj * inv_u : 0.0;
  out.total = out.alignment + out.uniformity + out.beta * out.adjustment;

  if (cfg.compute_grad) {
    std::optional<Mat> ds;
    if (nw) ds = Mat(ctx.n, ctx.m);
    Mat* dsp = ds ? &*ds : nullptr;
    if (ptb) class_table_backward(ctx, *ptb, std::move(dg_pos), out.grad, dsp);
    if (ntb && !shared) class_table_backward(ctx, *ntb, std::move(dg_neg), out.grad, dsp);
    if (nw) batch_nw_backward(ctx, *nw, *ds, out.grad);
  } else {
    out.grad = Mat();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Named members of the family

enum class LossKind { ce_probe_only, infonce, supcon, projnce, softnce, softsupcon, mednce, medsupcon };

inline std::string to_string(LossKind k) {
  switch (k) {
    case LossKind::ce_probe_only: return "ce-probe-only";
    case LossKind::infonce: return "infonce";
    case LossKind::supcon: return "supcon";
    case LossKind::projnce: return "projnce";
    case LossKind::softnce: return "softnce";
    case LossKind::softsupcon: return "softsupcon";
    case LossKind::mednce: return "mednce";
    case LossKind::medsupcon: return "medsupcon";
  }
  return "unknown";
}

inline LossKind parse_loss_kind(const std::string& s) {
  for (LossKind k : {LossKind::ce_probe_only, LossKind::infonce, LossKind::supcon,
                     LossKind::projnce, LossKind::softnce, LossKind::softsupcon,
                     LossKind::mednce, LossKind::medsupcon}) {
    if (to_string(k) == s) return k;
  }
  throw ConfigError("unknown loss '" + s + "'");
}

inline const std::vector<LossKind>& trainable_losses() {
  static const std::vector<LossKind> all = {LossKind::infonce,  LossKind::supcon,
                                            LossKind::projnce,  LossKind::softnce,
                                            LossKind::softsupcon, LossKind::mednce,
                                            LossKind::medsupcon};
  return all;
}

/// Options shared by the named losses.
struct LossOptions {
  double beta = 1.0;
  KernelConfig kernel{};
  SoftSource soft_source = SoftSource::nw_estimated;
  bool renormalize = false;
  bool literal_denominator = false;
  bool strict_class_exclusion = false;
  bool strict = true;
  bool compute_grad = true;
};

/// For each anchor, the next sample of the same class in batch order
/// (cyclically); kNoPositive when the class has a single member.
inline std::vector<std::size_t> cyclic_positive_map(const std::vector<int>& labels) {
  std::vector<std::size_t> out(labels.size(), detail::kNoPositive);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    for (std::size_t s = 1; s < labels.size(); ++s) {
      const std::size_t j = (i + s) % labels.size();
      if (labels[j] == labels[i]) {
        out[i] = j;
        break;
      }
    }
  }
  return out;
}

inline LossBreakdown infonce_self(const EmbeddingBatch& batch,
                                  const std::vector<std::size_t>& positives,
                                  bool strict = true, bool compute_grad = true) {
  EngineConfig cfg;
  cfg.spec = {ProjectionKind::identity, ProjectionKind::identity, std::nullopt, false};
  cfg.positives = &positives;
  cfg.strict = strict;
  cfg.compute_grad = compute_grad;
  return evaluate_loss(batch, cfg);
}

inline LossBreakdown supcon(const EmbeddingBatch& batch, bool strict = true,
                            bool compute_grad = true) {
  EngineConfig cfg;
  cfg.spec = {ProjectionKind::identity, ProjectionKind::identity, std::nullopt, false};
  cfg.strict = strict;
  cfg.compute_grad = compute_grad;
  return evaluate_loss(batch, cfg);
}

inline EngineConfig engine_for(const ProjectionSpec& spec, const LossOptions& opt,
                               const SoftLabelTable* soft) {
  EngineConfig cfg;
  cfg.spec = spec;
  cfg.beta = opt.beta;
  cfg.include_anchor_in_denominator = opt.literal_denominator;
  cfg.strict_class_exclusion = opt.strict_class_exclusion;
  cfg.strict = opt.strict;
  cfg.compute_grad = opt.compute_grad;
  cfg.soft = soft;
  return cfg;
}

inline LossBreakdown selfp(const EmbeddingBatch& batch, const ProjectionSpec& spec,
                           const LossOptions& opt = {}, const SoftLabelTable* soft = nullptr) {
  return evaluate_loss(batch, engine_for(spec, opt, soft));
}

inline double adjustment_R(const EmbeddingBatch& batch, const ProjectionSpec& spec,
                           const LossOptions& opt = {}, const SoftLabelTable* soft = nullptr) {
  EngineConfig cfg = engine_for(spec, opt, soft);
  cfg.with_adjustment = true;
  cfg.compute_grad = false;
  return evaluate_loss(batch, cfg).adjustment;
}

inline LossBreakdown projnce(const EmbeddingBatch& batch, const ProjectionSpec& spec,
                             double beta = 1.0, LossOptions opt = {},
                             const SoftLabelTable* soft = nullptr) {
  opt.beta = beta;
  EngineConfig cfg = engine_for(spec, opt, soft);
  cfg.with_adjustment = true;
  return evaluate_loss(batch, cfg);
}

inline const SoftLabelTable* soft_for(SoftSource source, const SoftLabelTable* analytic) {
  if (source == SoftSource::analytic) {
    if (!analytic) throw ConfigError("analytic soft labels requested but none supplied");
    return analytic;
  }
  return analytic;  // a fixed NW table (held-out reference) may also be supplied
}

inline LossBreakdown softnce(const EmbeddingBatch& batch, const KernelConfig& kernel,
                             SoftSource source = SoftSource::nw_estimated,
                             const SoftLabelTable* soft = nullptr, LossOptions opt = {}) {
  opt.literal_denominator = true;
  const ProjectionSpec spec{ProjectionKind::nw_soft, ProjectionKind::nw_soft, kernel,
                            opt.renormalize};
  return selfp(batch, spec, opt, soft_for(source, soft));
}

inline LossBreakdown softsupcon(const EmbeddingBatch& batch, const KernelConfig& kernel,
                                SoftSource source = SoftSource::nw_estimated, double beta = 1.0,
                                const SoftLabelTable* soft = nullptr, LossOptions opt = {}) {
  const ProjectionSpec spec{ProjectionKind::nw_soft, ProjectionKind::identity, kernel,
                            opt.renormalize};
  return projnce(batch, spec, beta, opt, soft_for(source, soft));
}

inline LossBreakdown mednce(const EmbeddingBatch& batch, LossOptions opt = {}) {
  opt.literal_denominator = true;
  const ProjectionSpec spec{ProjectionKind::median, ProjectionKind::median, std::nullopt,
                            opt.renormalize};
  return selfp(batch, spec, opt);
}

inline LossBreakdown medsupcon(const EmbeddingBatch& batch, double beta = 1.0,
                               LossOptions opt = {}) {
  const ProjectionSpec spec{ProjectionKind::median, ProjectionKind::identity, std::nullopt,
                            opt.renormalize};
  return projnce(batch, spec, beta, opt);
}

inline ProjectionSpec supcon_projection() {
  return {ProjectionKind::centroid, ProjectionKind::identity, std::nullopt, false};
}

/// Dispatches a loss selector. `soft` carries analytic or held-out soft labels.
inline LossBreakdown compute_loss(LossKind kind, const EmbeddingBatch& batch,
                                  const LossOptions& opt = {},
                                  const SoftLabelTable* soft = nullptr) {
  switch (kind) {
    case LossKind::ce_probe_only:
      throw ConfigError("ce-probe-only has no contrastive loss");
    case LossKind::infonce:
      return infonce_self(batch, cyclic_positive_map(batch.labels), opt.strict, opt.compute_grad);
    case LossKind::supcon:
      return supcon(batch, opt.strict, opt.compute_grad);
    case LossKind::projnce: {
      ProjectionSpec spec = supcon_projection();
      spec.renormalize = opt.renormalize;
      return projnce(batch, spec, opt.beta, opt);
    }
    case LossKind::softnce:
      return softnce(batch, opt.kernel, opt.soft_source, soft, opt);
    case LossKind::softsupcon:
      return softsupcon(batch, opt.kernel, opt.soft_source, opt.beta, soft, opt);
    case LossKind::mednce:
      return mednce(batch, opt);
    case LossKind::medsupcon:
      return medsupcon(batch, opt.beta, opt);
  }
  throw ConfigError("unhandled loss");
}

inline Mat loss_gradient(LossKind kind, const EmbeddingBatch& batch, LossOptions opt = {},
                         const SoftLabelTable* soft = nullptr) {
  opt.compute_grad = true;
  return compute_loss(kind, batch, opt, soft).grad;
}

}  // namespace projnce
