#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"

#include "projnce/encoder.hpp"
#include "projnce/errors.hpp"
#include "projnce/losses.hpp"
#include "projnce/miest.hpp"
#include "projnce/rng.hpp"
#include "projnce/synthdata.hpp"

namespace projnce {

enum class GMMSetting { binary, multiclass };

inline std::string to_string(GMMSetting g) {
  return g == GMMSetting::binary ? "binary" : "multiclass";
}

inline GMMSetting parse_gmm_setting(const std::string& s) {
  if (s == "binary") return GMMSetting::binary;
  if (s == "multiclass") return GMMSetting::multiclass;
  throw ConfigError("unknown gmm setting '" + s + "'");
}

struct GMMConfig {
  GMMSetting setting = GMMSetting::binary;
  std::size_t d_x = 5;
  double sigma = 1.0;
  std::uint64_t spec_seed = 0;  // draws the random means/covariances of the multiclass model
  std::size_t dataset_size = 12800;

  GMMSpec build() const {
    if (setting == GMMSetting::binary) return binary_gmm_spec(d_x, sigma);
    return multiclass_gmm_spec(Rng(spec_seed).split("gmm-spec"));
  }
};

struct TrainConfig {
  LossKind loss = LossKind::supcon;
  LossOptions loss_options{};
  GMMConfig gmm{};
  std::vector<std::size_t> architecture{5, 16, 16, 2};
  std::size_t batch_size = 256;
  std::size_t epochs = 200;
  double lr = 1e-2;
  double weight_decay = 1e-4;
  double temperature = 0.07;
  std::uint64_t seed = 1;
  std::size_t eval_every = 20;
  double label_noise_p = 0.0;
  std::size_t eval_size = 10000;
  std::size_t eval_batches = 20;
  std::size_t ksg_k = kDefaultKsgNeighbours;
  std::size_t probe_epochs = 100;
  double probe_lr = 0.1;
  bool evaluate_mi = true;

  void validate() const {
    if (batch_size < 2) throw ConfigError("batch_size must be >= 2");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (!(label_noise_p >= 0.0 && label_noise_p <= 1.0)) {
      throw ConfigError("label_noise_p must lie in [0, 1]");
    }
    if (!(lr >= 0.0) || !(weight_decay >= 0.0)) throw ConfigError("lr and weight_decay must be >= 0");
    if (!(temperature > 0.0)) throw ConfigError("temperature must be > 0");
    if (architecture.size() < 2) throw ConfigError("architecture needs input and output sizes");
    if (eval_every < 1) throw ConfigError("eval_every must be >= 1");
    if (eval_size < 2 * batch_size) throw ConfigError("eval_size must hold at least two batches");
  }
};

/// Standard settings for the two synthetic studies.
inline TrainConfig binary_defaults() {
  TrainConfig c;
  c.gmm.setting = GMMSetting::binary;
  c.architecture = {5, 16, 16, 2};
  c.batch_size = 256;
  return c;
}

inline TrainConfig multiclass_defaults() {
  TrainConfig c;
  c.gmm.setting = GMMSetting::multiclass;
  c.gmm.d_x = 8;
  c.architecture = {8, 32, 32, 4};
  c.batch_size = 128;
  return c;
}

struct EvalMetrics {
  std::size_t epoch = 0;
  MIEstimate mi;
  std::optional<MIEstimate> bound;
  std::string bound_name;
  double probe_accuracy = 0.0;
};

struct EpochRow {
  std::size_t epoch = 0;
  double loss = 0.0;
  double alignment = 0.0;
  double uniformity = 0.0;
  double adjustment = 0.0;
  std::size_t anchors_skipped = 0;
  std::size_t fallback_rows = 0;
  std::optional<EvalMetrics> eval;
};

struct Checkpoint {
  std::size_t epoch = 0;
  MLPParams params;
};

struct RunRecord {
  TrainConfig config;
  EvalMetrics initial;
  std::vector<EpochRow> rows;
  std::vector<Checkpoint> checkpoints;
  std::string final_checkpoint_id;

  const EvalMetrics& final_eval() const {
    for (auto it = rows.rbegin(); it != rows.rend(); ++it) {
      if (it->eval) return *it->eval;
    }
    return initial;
  }
};

inline std::string checkpoint_id(const TrainConfig& c, std::size_t epoch) {
  return to_string(c.loss) + "_s" + std::to_string(c.seed) + "_e" + std::to_string(epoch);
}

// ---------------------------------------------------------------------------

/// The projection pair and bound that certify each loss.
struct BoundPlan {
  std::string name;
  bool softnce = false;
  ProjectionSpec spec;
};

inline std::optional<BoundPlan> natural_bound(LossKind kind, const LossOptions& opt) {
  switch (kind) {
    case LossKind::ce_probe_only: return std::nullopt;
    case LossKind::infonce:
      return BoundPlan{"infonce_bound", false,
                       {ProjectionKind::identity, ProjectionKind::identity, std::nullopt, false}};
    case LossKind::supcon:
    case LossKind::projnce:
      return BoundPlan{"supcon_adjusted", false, supcon_projection()};
    case LossKind::softnce:
      return BoundPlan{"softnce", true,
                       {ProjectionKind::nw_soft, ProjectionKind::nw_soft, opt.kernel, false}};
    case LossKind::softsupcon:
      return BoundPlan{"softsupcon_adjusted", false,
                       {ProjectionKind::nw_soft, ProjectionKind::identity, opt.kernel, false}};
    case LossKind::mednce:
      return BoundPlan{"mednce_bound", false,
                       {ProjectionKind::median, ProjectionKind::median, std::nullopt, false}};
    case LossKind::medsupcon:
      return BoundPlan{"medsupcon_adjusted", false,
                       {ProjectionKind::median, ProjectionKind::identity, std::nullopt, false}};
  }
  return std::nullopt;
}

inline Mat gather_rows(const Mat& src, const std::vector<std::size_t>& idx, std::size_t begin,
                       std::size_t end) {
  Mat out(end - begin, src.cols());
  for (std::size_t r = begin; r < end; ++r) {
    const auto s = src.row(idx[r]);
    std::copy(s.begin(), s.end(), out.row(r - begin).begin());
  }
  return out;
}

/// Consecutive held-out batches taken from the front of a dataset.
inline std::vector<EmbeddingBatch> heldout_batches(const Mat& z, const std::vector<int>& labels,
                                                   std::size_t batch_size, std::size_t count,
                                                   double temperature) {
  std::vector<EmbeddingBatch> out;
  for (std::size_t b = 0; b < count && (b + 1) * batch_size <= z.rows(); ++b) {
    EmbeddingBatch eb;
    eb.z = Mat(batch_size, z.cols());
    eb.temperature = temperature;
    for (std::size_t r = 0; r < batch_size; ++r) {
      const auto s = z.row(b * batch_size + r);
      std::copy(s.begin(), s.end(), eb.z.row(r).begin());
      eb.labels.push_back(labels[b * batch_size + r]);
    }
    out.push_back(std::move(eb));
  }
  return out;
}

inline std::vector<SoftLabelTable> analytic_tables(const PosteriorModel& model, const Mat& x,
                                                   std::size_t batch_size, std::size_t count) {
  std::vector<SoftLabelTable> out;
  for (std::size_t b = 0; b < count && (b + 1) * batch_size <= x.rows(); ++b) {
    Mat xb(batch_size, x.cols());
    for (std::size_t r = 0; r < batch_size; ++r) {
      const auto s = x.row(b * batch_size + r);
      std::copy(s.begin(), s.end(), xb.row(r).begin());
    }
    out.push_back({model.posterior_table(xb), SoftSource::analytic, 0});
  }
  return out;
}

/// Metrics of an encoder on a labelled evaluation set.
inline EvalMetrics evaluate(const MLPParams& params, const LabeledDataset& data,
                            const TrainConfig& cfg, const GMMSpec& spec, std::size_t epoch) {
  if (params.input_dim() != data.features.cols()) {
    throw ConfigError("checkpoint input width does not match the dataset");
  }
  if (params.layer_sizes() != cfg.architecture) {
    throw ConfigError("checkpoint architecture does not match the configuration");
  }
  EvalMetrics m;
  m.epoch = epoch;
  const Mat z = embed(params, data.features);
  if (cfg.evaluate_mi) {
    m.mi = mixed_ksg(z, data.true_labels, {cfg.ksg_k, false});
  }
  if (auto plan = natural_bound(cfg.loss, cfg.loss_options)) {
    auto batches =
        heldout_batches(z, data.true_labels, cfg.batch_size, cfg.eval_batches, cfg.temperature);
    std::optional<std::vector<SoftLabelTable>> tables;
    if (cfg.loss_options.soft_source == SoftSource::analytic && plan->spec.uses_kernel()) {
      tables = analytic_tables(PosteriorModel(spec), data.features, cfg.batch_size,
                               cfg.eval_batches);
    }
    const auto* tp = tables ? &*tables : nullptr;
    m.bound_name = plan->name;
    m.bound = plan->softnce
                  ? bound_softnce(batches, cfg.loss_options.kernel, cfg.loss_options.soft_source, tp)
                  : bound_prop1(batches, plan->spec, cfg.loss_options, tp);
  }
  Rng probe_rng = Rng(cfg.seed).split("probe", epoch);
  m.probe_accuracy = linear_probe(z, data.true_labels, cfg.probe_epochs, cfg.probe_lr, probe_rng,
                                  spec.num_classes)
                         .accuracy;
  return m;
}

inline LabeledDataset eval_dataset(const TrainConfig& cfg, const GMMSpec& spec,
                                   std::size_t epoch) {
  Rng r = Rng(cfg.seed).split("eval", epoch);
  return sample(spec, cfg.eval_size, r);
}

/// Trains one encoder. Deterministic in the configuration.
inline RunRecord train(const TrainConfig& cfg) {
  cfg.validate();
  const GMMSpec spec = cfg.gmm.build();
  if (cfg.architecture.front() != spec.ambient_dim) {
    throw ConfigError("encoder input width " + std::to_string(cfg.architecture.front()) +
                      " does not match feature dimension " + std::to_string(spec.ambient_dim));
  }
  const Rng root(cfg.seed);
  Rng data_rng = root.split("data");
  LabeledDataset train_set = sample(spec, cfg.gmm.dataset_size, data_rng);
  if (cfg.label_noise_p > 0.0) {
    Rng noise_rng = root.split("noise");
    train_set = apply_label_noise(train_set, cfg.label_noise_p, spec.num_classes, noise_rng);
  }
  Rng init_rng = root.split("init");
  MLPParams params = init_mlp(cfg.architecture, init_rng);
  AdamW opt(params.size(), {cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay});

  std::optional<Mat> train_posteriors;
  const bool analytic = cfg.loss_options.soft_source == SoftSource::analytic &&
                        (cfg.loss == LossKind::softnce || cfg.loss == LossKind::softsupcon);
  if (analytic) train_posteriors = PosteriorModel(spec).posterior_table(train_set.features);

  RunRecord rec;
  rec.config = cfg;
  rec.initial = evaluate(params, eval_dataset(cfg, spec, 0), cfg, spec, 0);

  LossOptions lopt = cfg.loss_options;
  lopt.strict = false;
  lopt.compute_grad = true;
  const std::size_t n = train_set.size();
  const bool trains = cfg.loss != LossKind::ce_probe_only;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng shuffle_rng = root.split("shuffle", epoch);
    shuffle_rng.shuffle(order);

    EpochRow row;
    row.epoch = epoch;
    double weight = 0.0;
    if (trains) {
      std::size_t batch_index = 0;
      for (std::size_t begin = 0; begin + 2 <= n; begin += cfg.batch_size, ++batch_index) {
        const std::size_t end = std::min(n, begin + cfg.batch_size);
        const Mat xb = gather_rows(train_set.features, order, begin, end);
        ForwardTape tape = forward(params, xb);
        EmbeddingBatch eb;
        eb.z = tape.embeddings;
        eb.temperature = cfg.temperature;
        for (std::size_t r = begin; r < end; ++r) eb.labels.push_back(train_set.labels[order[r]]);
        std::optional<SoftLabelTable> soft;
        if (train_posteriors) {
          soft = SoftLabelTable{gather_rows(*train_posteriors, order, begin, end),
                                SoftSource::analytic, 0};
        }
        LossBreakdown lb;
        try {
          lb = compute_loss(cfg.loss, eb, lopt, soft ? &*soft : nullptr);
        } catch (const MissingPositive&) {
          continue;  // no anchor in this batch has a positive
        }
        const MLPParams grads = backward(tape, lb.grad);
        try {
          adamw_step(params, grads, opt);
        } catch (const NonFiniteGradient& e) {
          throw NonFiniteGradient("epoch " + std::to_string(epoch) + " batch " +
                                  std::to_string(batch_index) + ": " + e.what());
        }
        const double w = static_cast<double>(end - begin);
        row.loss += w * lb.total;
        row.alignment += w * lb.alignment;
        row.uniformity += w * lb.uniformity;
        row.adjustment += w * lb.adjustment;
        row.anchors_skipped += lb.anchors_skipped;
        row.fallback_rows += lb.fallback_rows;
        weight += w;
      }
    }
    if (weight > 0.0) {
      row.loss /= weight;
      row.alignment /= weight;
      row.uniformity /= weight;
      row.adjustment /= weight;
    } else {
      const double nan = std::numeric_limits<double>::quiet_NaN();
      row.loss = row.alignment = row.uniformity = row.adjustment = nan;
    }
    const bool eval_now = epoch % cfg.eval_every == 0 || epoch == cfg.epochs;
    if (eval_now) {
      row.eval = evaluate(params, eval_dataset(cfg, spec, epoch), cfg, spec, epoch);
      rec.checkpoints.push_back({epoch, params});
    }
    rec.rows.push_back(std::move(row));
  }
  rec.final_checkpoint_id = checkpoint_id(cfg, cfg.epochs);
  return rec;
}

// ---------------------------------------------------------------------------
// Persistence

inline std::string fmt_num(double v) {
  if (std::isnan(v)) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

inline void write_run_csv(std::ostream& os, const RunRecord& rec) {
  os << "epoch,loss,alignment,uniformity,adjustment,mi,mi_stderr,bound,bound_stderr,probe_acc\n";
  for (const auto& r : rec.rows) {
    os << r.epoch << ',' << fmt_num(r.loss) << ',' << fmt_num(r.alignment) << ','
       << fmt_num(r.uniformity) << ',' << fmt_num(r.adjustment) << ',';
    if (r.eval) {
      const auto& e = *r.eval;
      os << fmt_num(e.mi.value) << ',' << fmt_num(e.mi.std_error.value_or(0.0)) << ',';
      if (e.bound) {
        os << fmt_num(e.bound->value) << ',' << fmt_num(e.bound->std_error.value_or(0.0));
      } else {
        os << ',';
      }
      os << ',' << fmt_num(e.probe_accuracy);
    } else {
      os << ",,,,";
    }
    os << '\n';
  }
}

inline nlohmann::json to_json(const KernelConfig& k) {
  return {{"kernel", kKernelName}, {"h", k.bandwidth}, {"metric", to_string(k.metric)}};
}

inline nlohmann::json to_json(const TrainConfig& c) {
  nlohmann::json j;
  j["loss"] = to_string(c.loss);
  j["beta"] = c.loss_options.beta;
  j["kernel"] = to_json(c.loss_options.kernel);
  j["soft_source"] = c.loss_options.soft_source == SoftSource::analytic ? "analytic" : "nw";
  j["renormalize"] = c.loss_options.renormalize;
  j["literal_denominator"] = c.loss_options.literal_denominator;
  j["strict_class_exclusion"] = c.loss_options.strict_class_exclusion;
  j["gmm"] = {{"setting", to_string(c.gmm.setting)},
              {"d_x", c.gmm.d_x},
              {"sigma", c.gmm.sigma},
              {"spec_seed", c.gmm.spec_seed},
              {"dataset_size", c.gmm.dataset_size}};
  j["architecture"] = format_architecture(c.architecture);
  j["batch_size"] = c.batch_size;
  j["epochs"] = c.epochs;
  j["lr"] = c.lr;
  j["weight_decay"] = c.weight_decay;
  j["temperature"] = c.temperature;
  j["seed"] = c.seed;
  j["eval_every"] = c.eval_every;
  j["label_noise_p"] = c.label_noise_p;
  j["eval_size"] = c.eval_size;
  j["eval_batches"] = c.eval_batches;
  j["ksg_k"] = c.ksg_k;
  j["probe_epochs"] = c.probe_epochs;
  j["probe_lr"] = c.probe_lr;
  return j;
}

}  // namespace projnce
