#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "projnce/encoder.hpp"
#include "projnce/losses.hpp"
#include "projnce/miest.hpp"
#include "projnce/projections.hpp"
#include "projnce/svg.hpp"
#include "projnce/synthdata.hpp"
#include "projnce/trainer.hpp"

namespace projnce {

inline constexpr const char* kCodeVersion = "0.1.0";

enum class Experiment {
  mi_binary,
  mi_multiclass,
  bandwidth_sweep,
  bound_check,
  softnce_consistency,
  nw_consistency,
  noisy_label_probe,
  gradcheck
};

inline const std::vector<Experiment>& all_experiments() {
  static const std::vector<Experiment> all = {
      Experiment::mi_binary,           Experiment::mi_multiclass,  Experiment::bandwidth_sweep,
      Experiment::bound_check,         Experiment::softnce_consistency,
      Experiment::nw_consistency,      Experiment::noisy_label_probe, Experiment::gradcheck};
  return all;
}

inline std::string to_string(Experiment e) {
  switch (e) {
    case Experiment::mi_binary: return "mi-binary";
    case Experiment::mi_multiclass: return "mi-multiclass";
    case Experiment::bandwidth_sweep: return "bandwidth-sweep";
    case Experiment::bound_check: return "bound-check";
    case Experiment::softnce_consistency: return "softnce-consistency";
    case Experiment::nw_consistency: return "nw-consistency";
    case Experiment::noisy_label_probe: return "noisy-label-probe";
    case Experiment::gradcheck: return "gradcheck";
  }
  return "unknown";
}

inline Experiment parse_experiment(const std::string& s) {
  for (Experiment e : all_experiments()) {
    if (to_string(e) == s) return e;
  }
  throw ConfigError("unknown experiment '" + s + "'");
}

struct GradcheckSettings {
  std::size_t batch = 8;
  std::size_t dim = 4;
  int classes = 3;
  double temperature = 0.5;
  double step = 1e-6;
  double tolerance = 1e-5;
  KernelConfig kernel{1.2, Metric::l1};  // wide enough that every anchor has neighbours
};

struct ExperimentConfig {
  Experiment experiment = Experiment::mi_binary;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::filesystem::path out_dir{"projnce-out"};
  std::size_t jobs = 1;
  TrainConfig train{};
  std::vector<LossKind> losses;
  std::vector<double> bandwidths;
  std::vector<Metric> metrics;
  std::vector<double> noise_levels;
  std::vector<std::size_t> sizes;
  std::size_t trials = 20;
  std::size_t oracle_samples = 1000000;
  std::string source;  // bound-check input run, relative to out_dir unless absolute
  GradcheckSettings gradcheck{};

  std::filesystem::path run_dir() const { return out_dir / to_string(experiment); }

  std::filesystem::path source_dir() const {
    std::filesystem::path p(source.empty() ? "mi-" + to_string(train.gmm.setting) : source);
    return p.is_absolute() ? p : out_dir / p;
  }

  void validate() const {
    if (seeds.empty()) throw ConfigError("seed list must not be empty");
    if (jobs < 1) throw ConfigError("jobs must be >= 1");
    if (trials < 2) throw ConfigError("trials must be >= 2");
    train.validate();
    train.loss_options.kernel.validate();
    for (double h : bandwidths) KernelConfig{h, Metric::l1}.validate();
    for (double p : noise_levels) {
      if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("noise levels must lie in [0, 1]");
    }
    for (std::size_t n : sizes) {
      if (n < 2) throw ConfigError("sizes must be >= 2");
    }
    switch (experiment) {
      case Experiment::mi_binary:
      case Experiment::mi_multiclass:
      case Experiment::noisy_label_probe:
      case Experiment::gradcheck:
        if (losses.empty()) throw ConfigError("loss list must not be empty");
        for (LossKind k : losses) {
          if (k == LossKind::ce_probe_only) throw ConfigError("ce-probe-only cannot be trained");
        }
        break;
      case Experiment::bandwidth_sweep:
        if (bandwidths.empty() || metrics.empty()) {
          throw ConfigError("bandwidth sweep needs bandwidths and metrics");
        }
        break;
      case Experiment::softnce_consistency:
      case Experiment::nw_consistency:
        if (sizes.size() < 2) throw ConfigError("consistency studies need at least two sizes");
        break;
      case Experiment::bound_check: break;
    }
    if (experiment == Experiment::noisy_label_probe && noise_levels.empty()) {
      throw ConfigError("noise level list must not be empty");
    }
  }
};

inline std::vector<LossKind> compared_losses() {
  return {LossKind::supcon, LossKind::projnce, LossKind::softnce, LossKind::softsupcon};
}

inline ExperimentConfig default_config(Experiment e) {
  ExperimentConfig c;
  c.experiment = e;
  c.train = e == Experiment::mi_multiclass ? multiclass_defaults() : binary_defaults();
  switch (e) {
    case Experiment::mi_binary:
    case Experiment::mi_multiclass: c.losses = compared_losses(); break;
    case Experiment::bandwidth_sweep:
      c.train.loss = LossKind::softnce;
      c.bandwidths = {0.2, 0.4, 0.6, 0.8, 1.0};
      c.metrics = {Metric::l1, Metric::l2, Metric::cosine};
      break;
    case Experiment::bound_check: break;
    case Experiment::softnce_consistency:
      c.seeds = {1};
      c.sizes = {64, 256, 1024, 4096};
      break;
    case Experiment::nw_consistency: c.sizes = {512, 2048, 8192}; break;
    case Experiment::noisy_label_probe:
      c.losses = {LossKind::supcon, LossKind::projnce};
      c.noise_levels = {0.0, 0.3};
      c.train.eval_every = c.train.epochs;
      break;
    case Experiment::gradcheck: {
      c.seeds.clear();
      for (std::uint64_t s = 1; s <= 20; ++s) c.seeds.push_back(s);
      c.losses = trainable_losses();
      break;
    }
  }
  return c;
}

// ---------------------------------------------------------------------------
// Configuration files and manifests share one JSON layout.

namespace detail {

using nlohmann::json;

inline void reject_unknown(const json& section, const std::string& name,
                           std::initializer_list<const char*> allowed) {
  if (!section.is_object()) throw ConfigError("config section '" + name + "' must be an object");
  for (const auto& [key, value] : section.items()) {
    if (std::find_if(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }) ==
        allowed.end()) {
      throw ConfigError("unknown key '" + key + "' in config section '" + name + "'");
    }
  }
}

template <class T>
void read_if(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

}  // namespace detail

inline std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty() || item.find_first_not_of("0123456789") != std::string::npos) {
      throw ConfigError("seed list must be comma-separated nonnegative integers: '" + text + "'");
    }
    out.push_back(std::stoull(item));
  }
  if (out.empty()) throw ConfigError("seed list is empty");
  return out;
}

inline nlohmann::json config_to_json(const ExperimentConfig& c) {
  using nlohmann::json;
  const TrainConfig& t = c.train;
  json j;
  json ex;
  ex["name"] = to_string(c.experiment);
  ex["seeds"] = c.seeds;
  std::vector<std::string> losses;
  for (LossKind k : c.losses) losses.push_back(to_string(k));
  ex["losses"] = losses;
  ex["bandwidths"] = c.bandwidths;
  std::vector<std::string> metrics;
  for (Metric m : c.metrics) metrics.push_back(to_string(m));
  ex["metrics"] = metrics;
  ex["noise_levels"] = c.noise_levels;
  ex["sizes"] = c.sizes;
  ex["trials"] = c.trials;
  ex["oracle_samples"] = c.oracle_samples;
  ex["source"] = c.source;
  ex["gradcheck"] = {{"batch", c.gradcheck.batch},
                     {"dim", c.gradcheck.dim},
                     {"classes", c.gradcheck.classes},
                     {"temperature", c.gradcheck.temperature},
                     {"step", c.gradcheck.step},
                     {"tolerance", c.gradcheck.tolerance},
                     {"h", c.gradcheck.kernel.bandwidth},
                     {"metric", to_string(c.gradcheck.kernel.metric)}};
  j["experiment"] = ex;
  j["gmm"] = {{"setting", to_string(t.gmm.setting)},
              {"d_x", t.gmm.d_x},
              {"sigma", t.gmm.sigma},
              {"spec_seed", t.gmm.spec_seed},
              {"dataset_size", t.gmm.dataset_size}};
  j["train"] = {{"loss", to_string(t.loss)},
                {"architecture", format_architecture(t.architecture)},
                {"batch_size", t.batch_size},
                {"epochs", t.epochs},
                {"lr", t.lr},
                {"weight_decay", t.weight_decay},
                {"temperature", t.temperature},
                {"eval_every", t.eval_every},
                {"label_noise_p", t.label_noise_p},
                {"eval_size", t.eval_size},
                {"eval_batches", t.eval_batches},
                {"ksg_k", t.ksg_k},
                {"probe_epochs", t.probe_epochs},
                {"probe_lr", t.probe_lr}};
  j["kernel"] = to_json(t.loss_options.kernel);
  j["projection"] = {
      {"beta", t.loss_options.beta},
      {"soft_source", t.loss_options.soft_source == SoftSource::analytic ? "analytic" : "nw"},
      {"renormalize", t.loss_options.renormalize},
      {"literal_denominator", t.loss_options.literal_denominator},
      {"strict_class_exclusion", t.loss_options.strict_class_exclusion}};
  return j;
}

/// Builds a configuration for `command` from a JSON document with sections
/// {experiment, gmm, train, kernel, projection}. Missing keys keep the
/// command's defaults; unknown keys are rejected. A manifest written by a
/// previous run is a valid input.
inline ExperimentConfig config_from_json(const nlohmann::json& j, Experiment command) {
  using namespace detail;
  ExperimentConfig c = default_config(command);
  detail::reject_unknown(j, "<root>",
                         {"experiment", "gmm", "train", "kernel", "projection", "derived",
                          "code_version"});
  if (j.contains("experiment")) {
    const json& ex = j.at("experiment");
    reject_unknown(ex, "experiment",
                   {"name", "seeds", "losses", "bandwidths", "metrics", "noise_levels", "sizes",
                    "trials", "oracle_samples", "source", "gradcheck", "jobs", "out"});
    if (ex.contains("name") && ex.at("name").get<std::string>() != to_string(command)) {
      throw ConfigError("config is for experiment '" + ex.at("name").get<std::string>() +
                        "', not '" + to_string(command) + "'");
    }
    read_if(ex, "seeds", c.seeds);
    if (ex.contains("losses")) {
      c.losses.clear();
      for (const auto& s : ex.at("losses")) c.losses.push_back(parse_loss_kind(s.get<std::string>()));
    }
    read_if(ex, "bandwidths", c.bandwidths);
    if (ex.contains("metrics")) {
      c.metrics.clear();
      for (const auto& s : ex.at("metrics")) c.metrics.push_back(parse_metric(s.get<std::string>()));
    }
    read_if(ex, "noise_levels", c.noise_levels);
    read_if(ex, "sizes", c.sizes);
    read_if(ex, "trials", c.trials);
    read_if(ex, "oracle_samples", c.oracle_samples);
    read_if(ex, "source", c.source);
    read_if(ex, "jobs", c.jobs);
    if (ex.contains("out")) c.out_dir = ex.at("out").get<std::string>();
    if (ex.contains("gradcheck")) {
      const json& g = ex.at("gradcheck");
      reject_unknown(g, "experiment.gradcheck",
                     {"batch", "dim", "classes", "temperature", "step", "tolerance", "h", "metric"});
      read_if(g, "batch", c.gradcheck.batch);
      read_if(g, "dim", c.gradcheck.dim);
      read_if(g, "classes", c.gradcheck.classes);
      read_if(g, "temperature", c.gradcheck.temperature);
      read_if(g, "step", c.gradcheck.step);
      read_if(g, "tolerance", c.gradcheck.tolerance);
      read_if(g, "h", c.gradcheck.kernel.bandwidth);
      if (g.contains("metric")) c.gradcheck.kernel.metric = parse_metric(g.at("metric"));
    }
  }
  TrainConfig& t = c.train;
  if (j.contains("gmm")) {
    const json& g = j.at("gmm");
    reject_unknown(g, "gmm", {"setting", "d_x", "sigma", "spec_seed", "dataset_size"});
    if (g.contains("setting")) {
      const GMMSetting s = parse_gmm_setting(g.at("setting"));
      if (s != t.gmm.setting) {
        // switching settings switches the matching encoder/batch defaults too
        const TrainConfig base = s == GMMSetting::binary ? binary_defaults() : multiclass_defaults();
        t.gmm.setting = s;
        t.architecture = base.architecture;
        t.batch_size = base.batch_size;
      }
    }
    read_if(g, "d_x", t.gmm.d_x);
    read_if(g, "sigma", t.gmm.sigma);
    read_if(g, "spec_seed", t.gmm.spec_seed);
    read_if(g, "dataset_size", t.gmm.dataset_size);
  }
  if (j.contains("train")) {
    const json& tr = j.at("train");
    reject_unknown(tr, "train",
                   {"loss", "architecture", "batch_size", "epochs", "lr", "weight_decay",
                    "temperature", "eval_every", "label_noise_p", "eval_size", "eval_batches",
                    "ksg_k", "probe_epochs", "probe_lr"});
    if (tr.contains("loss")) t.loss = parse_loss_kind(tr.at("loss"));
    if (tr.contains("architecture")) t.architecture = parse_architecture(tr.at("architecture"));
    read_if(tr, "batch_size", t.batch_size);
    read_if(tr, "epochs", t.epochs);
    read_if(tr, "lr", t.lr);
    read_if(tr, "weight_decay", t.weight_decay);
    read_if(tr, "temperature", t.temperature);
    read_if(tr, "eval_every", t.eval_every);
    read_if(tr, "label_noise_p", t.label_noise_p);
    read_if(tr, "eval_size", t.eval_size);
    read_if(tr, "eval_batches", t.eval_batches);
    read_if(tr, "ksg_k", t.ksg_k);
    read_if(tr, "probe_epochs", t.probe_epochs);
    read_if(tr, "probe_lr", t.probe_lr);
  }
  if (j.contains("kernel")) {
    const json& k = j.at("kernel");
    reject_unknown(k, "kernel", {"kernel", "h", "metric"});
    if (k.contains("kernel") && k.at("kernel").get<std::string>() != kKernelName) {
      throw ConfigError(std::string("only the '") + kKernelName + "' kernel is available");
    }
    read_if(k, "h", t.loss_options.kernel.bandwidth);
    if (k.contains("metric")) t.loss_options.kernel.metric = parse_metric(k.at("metric"));
  }
  if (j.contains("projection")) {
    const json& p = j.at("projection");
    reject_unknown(p, "projection",
                   {"beta", "soft_source", "renormalize", "literal_denominator",
                    "strict_class_exclusion"});
    read_if(p, "beta", t.loss_options.beta);
    if (p.contains("soft_source")) {
      const std::string s = p.at("soft_source");
      if (s == "nw") t.loss_options.soft_source = SoftSource::nw_estimated;
      else if (s == "analytic") t.loss_options.soft_source = SoftSource::analytic;
      else throw ConfigError("soft_source must be 'nw' or 'analytic'");
    }
    read_if(p, "renormalize", t.loss_options.renormalize);
    read_if(p, "literal_denominator", t.loss_options.literal_denominator);
    read_if(p, "strict_class_exclusion", t.loss_options.strict_class_exclusion);
  }
  return c;
}

inline nlohmann::json manifest(const ExperimentConfig& c) {
  nlohmann::json j = config_to_json(c);
  const GMMSpec spec = c.train.gmm.build();
  nlohmann::json derived = {{"num_classes", spec.num_classes},
                            {"latent_dim", spec.latent_dim},
                            {"ambient_dim", spec.ambient_dim},
                            {"kernel_default", {{"metric", "l1"}, {"h", 0.6}}}};
  if (c.experiment == Experiment::nw_consistency) {
    nlohmann::json hs = nlohmann::json::array();
    for (std::size_t n : c.sizes) {
      hs.push_back({{"n", n}, {"h", bandwidth_schedule(n, c.train.architecture.back())}});
    }
    derived["bandwidth_schedule"] = hs;
  }
  if (c.experiment == Experiment::bound_check) derived["source"] = c.source_dir().generic_string();
  j["derived"] = derived;
  j["code_version"] = kCodeVersion;
  return j;
}

// ---------------------------------------------------------------------------
// Output helpers

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("cannot write " + path.string());
  os << text;
  if (!os) throw ConfigError("write failed for " + path.string());
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot read " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

/// Value as it appears in a CSV cell, so plots depend only on the CSV.
inline double as_written(double v) {
  const std::string s = fmt_num(v);
  return s.empty() ? std::numeric_limits<double>::quiet_NaN() : std::stod(s);
}

inline void write_manifest(const ExperimentConfig& c) {
  write_text(c.run_dir() / "manifest.json", manifest(c).dump(2) + "\n");
}

/// Runs fn(0..count-1) on up to `jobs` threads. Results come back in index
/// order; the first failure by index is rethrown after all threads finish.
template <class T>
std::vector<T> run_jobs(std::size_t count, std::size_t jobs, const std::function<T(std::size_t)>& fn) {
  std::vector<std::optional<T>> slots(count);
  std::vector<std::exception_ptr> errors(count);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        slots[i] = fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::min(std::max<std::size_t>(jobs, 1), std::max<std::size_t>(count, 1));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  std::vector<T> out;
  out.reserve(count);
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

// ---------------------------------------------------------------------------
// MI comparison (binary and 32-class GMM)

struct LossSummary {
  LossKind loss = LossKind::supcon;
  double mi_initial = 0.0;
  MeanStderr mi;
  std::string bound_name;
  MeanStderr bound;
  MeanStderr probe;
};

struct MiCompareResult {
  ExperimentConfig config;
  std::vector<RunRecord> runs;  // loss-major, seed-minor
  std::vector<LossSummary> summary;

  const RunRecord& run(std::size_t loss_index, std::size_t seed_index) const {
    return runs[loss_index * config.seeds.size() + seed_index];
  }
};

inline TrainConfig job_config(const ExperimentConfig& c, LossKind loss, std::uint64_t seed) {
  TrainConfig t = c.train;
  t.loss = loss;
  t.seed = seed;
  return t;
}

inline std::vector<LossSummary> summarize_runs(const ExperimentConfig& c,
                                               const std::vector<RunRecord>& runs) {
  std::vector<LossSummary> out;
  const std::size_t s = c.seeds.size();
  for (std::size_t l = 0; l < c.losses.size(); ++l) {
    std::vector<double> mi, bound, probe, init;
    LossSummary ls;
    ls.loss = c.losses[l];
    for (std::size_t k = 0; k < s; ++k) {
      const RunRecord& r = runs[l * s + k];
      const EvalMetrics& e = r.final_eval();
      mi.push_back(e.mi.value);
      init.push_back(r.initial.mi.value);
      if (e.bound) bound.push_back(e.bound->value);
      probe.push_back(e.probe_accuracy);
      ls.bound_name = e.bound_name;
    }
    ls.mi = mean_stderr(mi);
    ls.mi_initial = mean_stderr(init).mean;
    if (!bound.empty()) ls.bound = mean_stderr(bound);
    ls.probe = mean_stderr(probe);
    out.push_back(ls);
  }
  return out;
}

inline std::string mi_curves_csv(const ExperimentConfig& c, const std::vector<RunRecord>& runs) {
  std::ostringstream os;
  os << "loss,epoch,loss_mean,loss_stderr,mi_mean,mi_stderr,bound_mean,bound_stderr,probe_mean,"
        "probe_stderr,seeds\n";
  const std::size_t s = c.seeds.size();
  for (std::size_t l = 0; l < c.losses.size(); ++l) {
    for (std::size_t e = 0; e < c.train.epochs; ++e) {
      std::vector<double> loss, mi, bound, probe;
      for (std::size_t k = 0; k < s; ++k) {
        const EpochRow& row = runs[l * s + k].rows[e];
        if (std::isfinite(row.loss)) loss.push_back(row.loss);
        if (row.eval) {
          mi.push_back(row.eval->mi.value);
          if (row.eval->bound) bound.push_back(row.eval->bound->value);
          probe.push_back(row.eval->probe_accuracy);
        }
      }
      auto cell = [&](const std::vector<double>& v) {
        if (v.empty()) return std::string(",");
        const MeanStderr m = mean_stderr(v);
        return fmt_num(m.mean) + "," + fmt_num(m.std_error);
      };
      os << to_string(c.losses[l]) << ',' << e + 1 << ',' << cell(loss) << ',' << cell(mi) << ','
         << cell(bound) << ',' << cell(probe) << ',' << s << '\n';
    }
  }
  return os.str();
}

inline std::string mi_summary_csv(const std::vector<LossSummary>& summary, std::size_t seeds) {
  std::ostringstream os;
  os << "loss,seeds,mi_initial,mi_final_mean,mi_final_stderr,bound_name,bound_mean,bound_stderr,"
        "probe_mean,probe_stderr\n";
  for (const auto& s : summary) {
    os << to_string(s.loss) << ',' << seeds << ',' << fmt_num(s.mi_initial) << ','
       << fmt_num(s.mi.mean) << ',' << fmt_num(s.mi.std_error) << ',' << s.bound_name << ','
       << fmt_num(s.bound.mean) << ',' << fmt_num(s.bound.std_error) << ','
       << fmt_num(s.probe.mean) << ',' << fmt_num(s.probe.std_error) << '\n';
  }
  return os.str();
}

inline std::string mi_curves_svg(const ExperimentConfig& c, const std::vector<RunRecord>& runs) {
  std::vector<svg::Series> series;
  const std::size_t s = c.seeds.size();
  for (std::size_t l = 0; l < c.losses.size(); ++l) {
    svg::Series se;
    se.name = to_string(c.losses[l]);
    std::vector<double> init;
    for (std::size_t k = 0; k < s; ++k) init.push_back(runs[l * s + k].initial.mi.value);
    const MeanStderr m0 = mean_stderr(init);
    se.x.push_back(0.0);
    se.y.push_back(as_written(m0.mean));
    se.err.push_back(as_written(m0.std_error));
    for (std::size_t e = 0; e < c.train.epochs; ++e) {
      std::vector<double> mi;
      for (std::size_t k = 0; k < s; ++k) {
        const EpochRow& row = runs[l * s + k].rows[e];
        if (row.eval) mi.push_back(row.eval->mi.value);
      }
      if (mi.empty()) continue;
      const MeanStderr m = mean_stderr(mi);
      se.x.push_back(static_cast<double>(e + 1));
      se.y.push_back(as_written(m.mean));
      se.err.push_back(as_written(m.std_error));
    }
    series.push_back(std::move(se));
  }
  svg::ChartSpec spec;
  spec.title = "I(f(X); C), " + to_string(c.train.gmm.setting) + " GMM";
  spec.x_label = "epoch";
  spec.y_label = "mixed KSG MI (nats)";
  return svg::line_chart(spec, series);
}

inline std::string checkpoint_file_name(const std::string& id) { return id + ".ckpt"; }

inline MiCompareResult run_mi_compare(const ExperimentConfig& c) {
  c.validate();
  write_manifest(c);
  const std::size_t s = c.seeds.size();
  const std::size_t count = c.losses.size() * s;
  MiCompareResult res;
  res.config = c;
  res.runs = run_jobs<RunRecord>(count, c.jobs, [&](std::size_t i) {
    return train(job_config(c, c.losses[i / s], c.seeds[i % s]));
  });
  res.summary = summarize_runs(c, res.runs);

  const auto dir = c.run_dir();
  std::ostringstream index;
  index << "id,loss,seed,epoch,file\n";
  for (const RunRecord& r : res.runs) {
    std::ostringstream run_csv;
    write_run_csv(run_csv, r);
    write_text(dir / "runs" / (to_string(r.config.loss) + "_s" + std::to_string(r.config.seed) + ".csv"),
               run_csv.str());
    for (const Checkpoint& ck : r.checkpoints) {
      const std::string id = checkpoint_id(r.config, ck.epoch);
      std::ostringstream bin;
      write_checkpoint(bin, ck.params);
      write_text(dir / "checkpoints" / checkpoint_file_name(id), bin.str());
      index << id << ',' << to_string(r.config.loss) << ',' << r.config.seed << ',' << ck.epoch
            << ",checkpoints/" << checkpoint_file_name(id) << '\n';
    }
  }
  write_text(dir / "checkpoints.csv", index.str());
  write_text(dir / "mi_curves.csv", mi_curves_csv(c, res.runs));
  write_text(dir / "mi_summary.csv", mi_summary_csv(res.summary, s));
  write_text(dir / "mi_curves.svg", mi_curves_svg(c, res.runs));
  return res;
}

// ---------------------------------------------------------------------------
// Bandwidth sweep

struct SweepRow {
  std::uint64_t seed = 0;
  Metric metric = Metric::l1;
  double h = 0.0;
  double probe_accuracy = 0.0;
  double mi = 0.0;
  double mi_std_error = 0.0;
  std::size_t fallback_rows = 0;
  double fallback_rate = 0.0;
};

inline std::vector<SweepRow> run_bandwidth_sweep(const ExperimentConfig& c) {
  c.validate();
  write_manifest(c);
  const std::size_t nh = c.bandwidths.size(), nm = c.metrics.size();
  const std::size_t cells = nh * nm;
  auto rows = run_jobs<SweepRow>(cells * c.seeds.size(), c.jobs, [&](std::size_t i) {
    const std::uint64_t seed = c.seeds[i / cells];
    const Metric metric = c.metrics[(i % cells) / nh];
    const double h = c.bandwidths[i % nh];
    TrainConfig t = c.train;
    t.seed = seed;
    t.loss_options.kernel = {h, metric};
    const RunRecord r = train(t);
    SweepRow row;
    row.seed = seed;
    row.metric = metric;
    row.h = h;
    const EvalMetrics& e = r.final_eval();
    row.probe_accuracy = e.probe_accuracy;
    row.mi = e.mi.value;
    row.mi_std_error = e.mi.std_error.value_or(0.0);
    for (const auto& er : r.rows) row.fallback_rows += er.fallback_rows;
    row.fallback_rate = static_cast<double>(row.fallback_rows) /
                        static_cast<double>(t.epochs * t.gmm.dataset_size);
    return row;
  });

  std::ostringstream os;
  os << "seed,metric,h,probe_acc,mi,mi_stderr,fallback_rows,fallback_rate\n";
  for (const auto& r : rows) {
    os << r.seed << ',' << to_string(r.metric) << ',' << fmt_num(r.h) << ','
       << fmt_num(r.probe_accuracy) << ',' << fmt_num(r.mi) << ',' << fmt_num(r.mi_std_error)
       << ',' << r.fallback_rows << ',' << fmt_num(r.fallback_rate) << '\n';
  }
  write_text(c.run_dir() / "bandwidth_sweep.csv", os.str());

  std::vector<svg::Series> series;
  for (std::size_t m = 0; m < nm; ++m) {
    svg::Series se;
    se.name = to_string(c.metrics[m]);
    for (std::size_t k = 0; k < nh; ++k) {
      std::vector<double> acc;
      for (const auto& r : rows) {
        if (r.metric == c.metrics[m] && r.h == c.bandwidths[k]) acc.push_back(as_written(r.probe_accuracy));
      }
      const MeanStderr ms = mean_stderr(acc);
      se.x.push_back(as_written(c.bandwidths[k]));
      se.y.push_back(ms.mean);
      se.err.push_back(ms.std_error);
    }
    series.push_back(std::move(se));
  }
  svg::ChartSpec spec;
  spec.title = "SoftNCE probe accuracy vs bandwidth";
  spec.x_label = "bandwidth h";
  spec.y_label = "linear probe accuracy";
  write_text(c.run_dir() / "bandwidth_sweep.svg", svg::line_chart(spec, series));
  return rows;
}

// ---------------------------------------------------------------------------
// Bound check over saved checkpoints

struct BoundRow {
  std::string checkpoint;
  LossKind loss = LossKind::supcon;
  std::uint64_t seed = 0;
  std::size_t epoch = 0;
  std::string bound;
  double value = 0.0;
  double std_error = 0.0;
  double adjustment = std::numeric_limits<double>::quiet_NaN();
  double ksg = 0.0;
  double ksg_std_error = 0.0;
  bool certified = true;
  bool pass = true;
};

struct BoundCheckResult {
  MIEstimate oracle;
  std::vector<BoundRow> rows;

  std::size_t failures() const {
    return static_cast<std::size_t>(
        std::count_if(rows.begin(), rows.end(), [](const BoundRow& r) { return r.certified && !r.pass; }));
  }
};

inline bool bound_passes(double value, double se, const MIEstimate& oracle) {
  const double so = oracle.std_error.value_or(0.0);
  return value <= oracle.value + 3.0 * std::sqrt(se * se + so * so);
}

/// The bound rows reported for one encoder on one held-out sample.
inline std::vector<BoundRow> bound_rows(const MLPParams& params, const LabeledDataset& data,
                                        const TrainConfig& t) {
  const Mat z = embed(params, data.features);
  const auto batches =
      heldout_batches(z, data.true_labels, t.batch_size, t.eval_batches, t.temperature);
  const MIEstimate ksg = mixed_ksg(z, data.true_labels, {t.ksg_k, false});
  LossOptions opt = t.loss_options;
  std::vector<BoundRow> out;
  auto add = [&](const std::string& name, const MIEstimate& e, double adj, bool certified) {
    BoundRow r;
    r.bound = name;
    r.value = e.value;
    r.std_error = e.std_error.value_or(0.0);
    r.adjustment = adj;
    r.ksg = ksg.value;
    r.ksg_std_error = ksg.std_error.value_or(0.0);
    r.certified = certified;
    out.push_back(r);
  };
  const double nan = std::numeric_limits<double>::quiet_NaN();
  double adj = nan;
  const ProjectionSpec ident{ProjectionKind::identity, ProjectionKind::identity, std::nullopt, false};
  MIEstimate e = bound_prop1(batches, ident, opt, nullptr, &adj);
  add("infonce_bound", e, adj, true);
  e = bound_prop1(batches, supcon_projection(), opt, nullptr, &adj);
  add("supcon_adjusted", e, adj, true);
  const ProjectionSpec soft{ProjectionKind::nw_soft, ProjectionKind::identity, t.loss_options.kernel,
                            false};
  e = bound_prop1(batches, soft, opt, nullptr, &adj);
  add("softsupcon_adjusted", e, adj, true);
  add("softnce", bound_softnce(batches, t.loss_options.kernel), nan, true);
  add("raw_supcon", raw_supcon_gap(batches), nan, false);
  return out;
}

inline BoundCheckResult run_bound_check(const ExperimentConfig& c) {
  c.validate();
  const auto src = c.source_dir();
  if (!std::filesystem::exists(src / "manifest.json") ||
      !std::filesystem::exists(src / "checkpoints.csv")) {
    throw ConfigError("no MI-compare run found in " + src.string() + "; run mi-" +
                      to_string(c.train.gmm.setting) + " first");
  }
  const auto src_manifest = nlohmann::json::parse(read_text(src / "manifest.json"));
  const Experiment src_kind = parse_experiment(src_manifest.at("experiment").at("name"));
  const ExperimentConfig sc = config_from_json(src_manifest, src_kind);
  write_manifest(c);

  struct Entry {
    std::string id;
    LossKind loss;
    std::uint64_t seed;
    std::size_t epoch;
    std::string file;
  };
  std::vector<Entry> entries;
  {
    std::istringstream is(read_text(src / "checkpoints.csv"));
    std::string line;
    std::getline(is, line);
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      std::vector<std::string> f;
      std::stringstream ls(line);
      std::string cell;
      while (std::getline(ls, cell, ',')) f.push_back(cell);
      if (f.size() != 5) throw FormatError("checkpoints.csv: bad row '" + line + "'");
      entries.push_back({f[0], parse_loss_kind(f[1]), std::stoull(f[2]), std::stoull(f[3]), f[4]});
    }
  }

  const GMMSpec spec = sc.train.gmm.build();
  BoundCheckResult res;
  Rng oracle_rng = Rng(sc.train.gmm.spec_seed).split("oracle-mi");
  res.oracle = oracle_mi(spec, c.oracle_samples, oracle_rng);

  auto per = run_jobs<std::vector<BoundRow>>(entries.size(), c.jobs, [&](std::size_t i) {
    const Entry& en = entries[i];
    std::ifstream is(src / en.file, std::ios::binary);
    if (!is) throw ConfigError("cannot read checkpoint " + (src / en.file).string());
    const MLPParams params = read_checkpoint(is);
    TrainConfig t = job_config(sc, en.loss, en.seed);
    if (params.layer_sizes() != t.architecture) {
      throw ConfigError("checkpoint " + en.id + " does not match the run's architecture");
    }
    Rng r = Rng(en.seed).split("bound-check", en.epoch);
    const LabeledDataset data = sample(spec, t.batch_size * t.eval_batches, r);
    auto rows = bound_rows(params, data, t);
    for (auto& row : rows) {
      row.checkpoint = en.id;
      row.loss = en.loss;
      row.seed = en.seed;
      row.epoch = en.epoch;
      row.pass = !row.certified || bound_passes(row.value, row.std_error, res.oracle);
    }
    return rows;
  });
  for (auto& v : per) res.rows.insert(res.rows.end(), v.begin(), v.end());

  std::ostringstream os;
  os << "checkpoint,loss,seed,epoch,bound,value,stderr,adjustment,ksg_mi,ksg_stderr,oracle,"
        "oracle_stderr,certified,pass\n";
  for (const auto& r : res.rows) {
    os << r.checkpoint << ',' << to_string(r.loss) << ',' << r.seed << ',' << r.epoch << ','
       << r.bound << ',' << fmt_num(r.value) << ',' << fmt_num(r.std_error) << ','
       << fmt_num(r.adjustment) << ',' << fmt_num(r.ksg) << ',' << fmt_num(r.ksg_std_error) << ','
       << fmt_num(res.oracle.value) << ',' << fmt_num(res.oracle.std_error.value_or(0.0)) << ','
       << (r.certified ? "yes" : "no") << ',' << (r.certified ? (r.pass ? "PASS" : "FAIL") : "n/a")
       << '\n';
  }
  write_text(c.run_dir() / "bound_check.csv", os.str());
  return res;
}

// ---------------------------------------------------------------------------
// SoftNCE with the analytic critic: convergence in N

struct ConsistencyCurve {
  std::uint64_t seed = 0;
  MIEstimate oracle;
  std::vector<ConsistencyPoint> points;
};

inline std::vector<ConsistencyCurve> run_softnce_consistency(const ExperimentConfig& c) {
  c.validate();
  write_manifest(c);
  const GMMSpec spec = c.train.gmm.build();
  auto curves = run_jobs<ConsistencyCurve>(c.seeds.size(), c.jobs, [&](std::size_t i) {
    ConsistencyCurve cc;
    cc.seed = c.seeds[i];
    const Rng root(cc.seed);
    Rng orng = root.split("oracle-mi");
    cc.oracle = oracle_mi(spec, c.oracle_samples, orng);
    cc.points = softnce_consistency_curve(spec, c.sizes, c.trials, cc.oracle.value, root);
    return cc;
  });
  std::ostringstream os;
  os << "seed,n,bound,bound_stderr,oracle,oracle_stderr,gap,trials\n";
  for (const auto& cc : curves) {
    for (const auto& p : cc.points) {
      os << cc.seed << ',' << p.n << ',' << fmt_num(p.bound) << ',' << fmt_num(p.bound_std_error)
         << ',' << fmt_num(cc.oracle.value) << ',' << fmt_num(cc.oracle.std_error.value_or(0.0))
         << ',' << fmt_num(p.gap) << ',' << p.trials << '\n';
    }
  }
  write_text(c.run_dir() / "softnce_consistency.csv", os.str());
  std::vector<svg::Series> series;
  for (const auto& cc : curves) {
    svg::Series se;
    se.name = "seed " + std::to_string(cc.seed);
    for (const auto& p : cc.points) {
      se.x.push_back(static_cast<double>(p.n));
      se.y.push_back(as_written(p.gap));
      se.err.push_back(as_written(p.bound_std_error));
    }
    series.push_back(std::move(se));
  }
  svg::ChartSpec spec_chart;
  spec_chart.title = "SoftNCE with the optimal critic: |log N - loss - I(X;C)|";
  spec_chart.x_label = "batch size N";
  spec_chart.y_label = "gap (nats)";
  spec_chart.log_x = true;
  write_text(c.run_dir() / "softnce_consistency.svg", svg::line_chart(spec_chart, series));
  return curves;
}

// ---------------------------------------------------------------------------
// Consistency of f-hat for a fixed encoder

struct NwPoint {
  std::uint64_t seed = 0;
  std::size_t n = 0;
  double h = 0.0;
  double error_nw = 0.0;
  double error_analytic = 0.0;
  std::size_t empty_support = 0;
};

struct NwSummary {
  std::size_t n = 0;
  double h = 0.0;
  MeanStderr nw;
  MeanStderr analytic;
};

struct NwConsistencyResult {
  std::vector<NwPoint> points;  // seed-major
  std::vector<NwSummary> summary;

  /// Mean NW error at the largest N over the mean at the smallest.
  double halving_ratio() const { return summary.back().nw.mean / summary.front().nw.mean; }
};

/// Mean over classes of the l2 distance between f-hat(c) and the reference.
inline double fhat_error(const Mat& z, const SoftLabelTable& soft, const std::vector<Vec>& ref) {
  double total = 0.0;
  for (std::size_t c = 0; c < ref.size(); ++c) {
    const Vec f = fhat(static_cast<int>(c), z, soft);
    double d2 = 0.0;
    for (std::size_t k = 0; k < f.size(); ++k) d2 += (f[k] - ref[c][k]) * (f[k] - ref[c][k]);
    total += std::sqrt(d2);
  }
  return total / static_cast<double>(ref.size());
}

inline NwConsistencyResult run_nw_consistency(const ExperimentConfig& c) {
  c.validate();
  write_manifest(c);
  const GMMSpec spec = c.train.gmm.build();
  const PosteriorModel model(spec);
  const std::size_t m = spec.num_classes;
  const std::size_t dz = c.train.architecture.back();
  const std::size_t ns = c.sizes.size();

  // reference conditional means E[f(X) | C = c], one encoder per seed
  struct SeedSetup {
    MLPParams params;
    std::vector<Vec> ref;
  };
  auto setups = run_jobs<SeedSetup>(c.seeds.size(), c.jobs, [&](std::size_t i) {
    const Rng root(c.seeds[i]);
    Rng init = root.split("init");
    SeedSetup s{init_mlp(c.train.architecture, init), std::vector<Vec>(m, Vec(dz, 0.0))};
    std::vector<double> count(m, 0.0);
    constexpr std::size_t kChunk = 8192;
    Rng mc = root.split("nw-reference");
    for (std::size_t done = 0; done < c.oracle_samples; done += kChunk) {
      const LabeledDataset d = sample(spec, std::min(kChunk, c.oracle_samples - done), mc);
      const Mat z = embed(s.params, d.features);
      for (std::size_t r = 0; r < d.size(); ++r) {
        const auto cl = static_cast<std::size_t>(d.labels[r]);
        for (std::size_t k = 0; k < dz; ++k) s.ref[cl][k] += z(r, k);
        count[cl] += 1.0;
      }
    }
    for (std::size_t cl = 0; cl < m; ++cl) {
      if (count[cl] == 0.0) throw EmptyClass("reference sample has no member of a class");
      for (double& v : s.ref[cl]) v /= count[cl];
    }
    return s;
  });

  NwConsistencyResult res;
  res.points = run_jobs<NwPoint>(c.seeds.size() * ns, c.jobs, [&](std::size_t i) {
    const std::size_t si = i / ns;
    NwPoint p;
    p.seed = c.seeds[si];
    p.n = c.sizes[i % ns];
    p.h = bandwidth_schedule(p.n, dz);
    Rng r = Rng(p.seed).split("nw-sample", p.n);
    const LabeledDataset d = sample(spec, p.n, r);
    const Mat z = embed(setups[si].params, d.features);
    const SoftLabelTable nw = nw_soft_labels(z, z, d.labels, m, {p.h, Metric::l1});
    p.error_nw = fhat_error(z, nw, setups[si].ref);
    const SoftLabelTable exact{model.posterior_table(d.features), SoftSource::analytic, 0};
    p.error_analytic = fhat_error(z, exact, setups[si].ref);
    return p;
  });
  for (std::size_t k = 0; k < ns; ++k) {
    std::vector<double> a, b;
    for (std::size_t si = 0; si < c.seeds.size(); ++si) {
      a.push_back(res.points[si * ns + k].error_nw);
      b.push_back(res.points[si * ns + k].error_analytic);
    }
    res.summary.push_back({c.sizes[k], bandwidth_schedule(c.sizes[k], dz), mean_stderr(a),
                           mean_stderr(b)});
  }

  std::ostringstream os;
  os << "seed,n,h,error_nw,error_analytic\n";
  for (const auto& p : res.points) {
    os << p.seed << ',' << p.n << ',' << fmt_num(p.h) << ',' << fmt_num(p.error_nw) << ','
       << fmt_num(p.error_analytic) << '\n';
  }
  write_text(c.run_dir() / "nw_consistency.csv", os.str());
  std::ostringstream ss;
  ss << "n,h,error_nw_mean,error_nw_stderr,error_analytic_mean,error_analytic_stderr\n";
  for (const auto& s : res.summary) {
    ss << s.n << ',' << fmt_num(s.h) << ',' << fmt_num(s.nw.mean) << ',' << fmt_num(s.nw.std_error)
       << ',' << fmt_num(s.analytic.mean) << ',' << fmt_num(s.analytic.std_error) << '\n';
  }
  write_text(c.run_dir() / "nw_consistency_summary.csv", ss.str());

  svg::Series a{"NW soft labels", {}, {}, {}}, b{"exact posteriors", {}, {}, {}};
  for (const auto& s : res.summary) {
    a.x.push_back(static_cast<double>(s.n));
    a.y.push_back(as_written(s.nw.mean));
    a.err.push_back(as_written(s.nw.std_error));
    b.x.push_back(static_cast<double>(s.n));
    b.y.push_back(as_written(s.analytic.mean));
    b.err.push_back(as_written(s.analytic.std_error));
  }
  svg::ChartSpec chart;
  chart.title = "f-hat error against the conditional mean";
  chart.x_label = "sample size N";
  chart.y_label = "mean l2 error";
  chart.log_x = true;
  write_text(c.run_dir() / "nw_consistency.svg", svg::line_chart(chart, {a, b}));
  return res;
}

// ---------------------------------------------------------------------------
// Noisy labels: probe accuracy on clean labels

struct ProbeRow {
  LossKind loss = LossKind::supcon;
  double p = 0.0;
  std::uint64_t seed = 0;
  double accuracy = 0.0;
};

inline std::vector<ProbeRow> run_noisy_label_probe(const ExperimentConfig& c) {
  c.validate();
  write_manifest(c);
  const std::size_t s = c.seeds.size(), np = c.noise_levels.size();
  auto rows = run_jobs<ProbeRow>(c.losses.size() * np * s, c.jobs, [&](std::size_t i) {
    ProbeRow row;
    row.loss = c.losses[i / (np * s)];
    row.p = c.noise_levels[(i / s) % np];
    row.seed = c.seeds[i % s];
    TrainConfig t = job_config(c, row.loss, row.seed);
    t.label_noise_p = row.p;
    t.evaluate_mi = false;
    row.accuracy = train(t).final_eval().probe_accuracy;
    return row;
  });
  std::ostringstream os;
  os << "loss,p,seed,accuracy\n";
  for (const auto& r : rows) {
    os << to_string(r.loss) << ',' << fmt_num(r.p) << ',' << r.seed << ',' << fmt_num(r.accuracy)
       << '\n';
  }
  write_text(c.run_dir() / "noisy_label_probe.csv", os.str());
  return rows;
}

// ---------------------------------------------------------------------------
// Gradient check

struct GradcheckRow {
  LossKind loss = LossKind::supcon;
  std::uint64_t seed = 0;
  double rel_error = 0.0;
  bool pass = false;
};

/// Random unit-norm batch in which every class has at least two members.
inline EmbeddingBatch random_unit_batch(Rng& rng, std::size_t n, std::size_t d, int classes,
                                        double temperature) {
  if (n < 2 * static_cast<std::size_t>(classes)) {
    throw ConfigError("batch too small for two members per class");
  }
  EmbeddingBatch b;
  b.z = Mat(n, d);
  b.temperature = temperature;
  for (std::size_t i = 0; i < n; ++i) {
    Vec v(d);
    for (double& x : v) x = rng.normal();
    const Vec u = normalize_sphere(v);
    std::copy(u.begin(), u.end(), b.z.row(i).begin());
  }
  b.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    b.labels[i] = i < 2 * static_cast<std::size_t>(classes)
                      ? static_cast<int>(i / 2)
                      : static_cast<int>(rng.index(static_cast<std::size_t>(classes)));
  }
  rng.shuffle(b.labels);
  return b;
}

/// Relative l2 error between the analytic gradient (projected on the tangent
/// space of each row) and central differences of L(normalize_rows(Z)).
inline double gradient_error(LossKind kind, const EmbeddingBatch& batch, const LossOptions& opt,
                             double step) {
  const std::size_t n = batch.size(), d = batch.dim();
  const Mat g = loss_gradient(kind, batch, opt);
  Vec analytic(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    double radial = 0.0;
    for (std::size_t k = 0; k < d; ++k) radial += g(i, k) * batch.z(i, k);
    for (std::size_t k = 0; k < d; ++k) analytic[i * d + k] = g(i, k) - radial * batch.z(i, k);
  }
  LossOptions value_opt = opt;
  value_opt.compute_grad = false;
  auto f = [&](std::span<const double> theta) {
    EmbeddingBatch b = batch;
    b.z = normalize_rows(Mat(n, d, Vec(theta.begin(), theta.end())));
    return compute_loss(kind, b, value_opt).total;
  };
  const Vec point(batch.z.data().begin(), batch.z.data().end());
  const Vec fd = central_diff_grad(f, point, step);
  return relative_l2_error(analytic, fd, 1e-12);
}

inline std::vector<GradcheckRow> run_gradcheck(const ExperimentConfig& c) {
  c.validate();
  write_manifest(c);
  const GradcheckSettings& g = c.gradcheck;
  const std::size_t s = c.seeds.size();
  auto rows = run_jobs<GradcheckRow>(c.losses.size() * s, c.jobs, [&](std::size_t i) {
    GradcheckRow row;
    row.loss = c.losses[i / s];
    row.seed = c.seeds[i % s];
    Rng r = Rng(row.seed).split("gradcheck");
    const EmbeddingBatch b = random_unit_batch(r, g.batch, g.dim, g.classes, g.temperature);
    LossOptions opt = c.train.loss_options;
    opt.kernel = g.kernel;
    row.rel_error = gradient_error(row.loss, b, opt, g.step);
    row.pass = row.rel_error <= g.tolerance;
    return row;
  });
  std::ostringstream os;
  os << "loss,seed,rel_error,pass\n";
  for (const auto& r : rows) {
    os << to_string(r.loss) << ',' << r.seed << ',' << fmt_num(r.rel_error) << ','
       << (r.pass ? "PASS" : "FAIL") << '\n';
  }
  write_text(c.run_dir() / "gradcheck.csv", os.str());
  return rows;
}

// ---------------------------------------------------------------------------

/// Runs the configured experiment and prints a short report. Returns false if
/// a check built into the experiment failed.
inline bool run_experiment(const ExperimentConfig& c, std::ostream& log) {
  switch (c.experiment) {
    case Experiment::mi_binary:
    case Experiment::mi_multiclass: {
      const auto res = run_mi_compare(c);
      for (const auto& s : res.summary) {
        log << to_string(s.loss) << ": final MI " << fmt_num(s.mi.mean) << " +- "
            << fmt_num(s.mi.std_error) << " (initial " << fmt_num(s.mi_initial) << "), probe "
            << fmt_num(s.probe.mean) << '\n';
      }
      return true;
    }
    case Experiment::bandwidth_sweep: {
      const auto rows = run_bandwidth_sweep(c);
      log << rows.size() << " sweep rows; recommended setting l1, h=0.6\n";
      return true;
    }
    case Experiment::bound_check: {
      const auto res = run_bound_check(c);
      log << "oracle MI " << fmt_num(res.oracle.value) << " +- "
          << fmt_num(res.oracle.std_error.value_or(0.0)) << "; " << res.rows.size() << " rows, "
          << res.failures() << " certified bound violations\n";
      return res.failures() == 0;
    }
    case Experiment::softnce_consistency: {
      bool ok = true;
      for (const auto& cc : run_softnce_consistency(c)) {
        for (const auto& p : cc.points) {
          log << "seed " << cc.seed << " N=" << p.n << " gap " << fmt_num(p.gap) << '\n';
        }
        ok = ok && cc.points.back().gap < cc.points.front().gap;
      }
      return ok;
    }
    case Experiment::nw_consistency: {
      const auto res = run_nw_consistency(c);
      for (const auto& s : res.summary) {
        log << "N=" << s.n << " h=" << fmt_num(s.h) << " error " << fmt_num(s.nw.mean) << '\n';
      }
      const bool ok = res.halving_ratio() <= 0.5;
      log << "halving check: ratio " << fmt_num(res.halving_ratio()) << (ok ? " PASS" : " FAIL")
          << '\n';
      return ok;
    }
    case Experiment::noisy_label_probe: {
      const auto rows = run_noisy_label_probe(c);
      std::map<std::pair<std::string, double>, std::vector<double>> acc;
      for (const auto& r : rows) acc[{to_string(r.loss), r.p}].push_back(r.accuracy);
      for (const auto& [key, v] : acc) {
        log << key.first << " p=" << fmt_num(key.second) << ": accuracy "
            << fmt_num(mean_stderr(v).mean) << '\n';
      }
      return true;
    }
    case Experiment::gradcheck: {
      const auto rows = run_gradcheck(c);
      double worst = 0.0;
      for (const auto& r : rows) worst = std::max(worst, r.rel_error);
      const bool ok = std::all_of(rows.begin(), rows.end(), [](const auto& r) { return r.pass; });
      log << rows.size() << " gradient checks, worst relative error " << fmt_num(worst)
          << (ok ? " PASS" : " FAIL") << '\n';
      return ok;
    }
  }
  return false;
}

}  // namespace projnce
