#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "projnce/experiments.hpp"

using namespace projnce;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("projnce-test-" + name);
  fs::remove_all(p);
  return p;
}

ExperimentConfig tiny(Experiment e, const std::string& dir) {
  ExperimentConfig c = default_config(e);
  c.out_dir = fresh_dir(dir);
  c.seeds = {1};
  c.train.gmm.dataset_size = 512;
  c.train.batch_size = 64;
  c.train.epochs = 2;
  c.train.eval_every = 1;
  c.train.eval_size = 512;
  c.train.eval_batches = 4;
  c.train.probe_epochs = 10;
  c.oracle_samples = 5000;
  c.trials = 3;
  return c;
}

std::size_t count_lines(const std::string& s) {
  return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

std::string first_line(const std::string& s) { return s.substr(0, s.find('\n')); }

}  // namespace

TEST(Config, ExperimentNames) {
  for (Experiment e : all_experiments()) EXPECT_EQ(parse_experiment(to_string(e)), e);
  EXPECT_EQ(to_string(Experiment::mi_binary), "mi-binary");
  EXPECT_THROW(parse_experiment("mi-ternary"), ConfigError);
}

TEST(Config, SeedList) {
  EXPECT_EQ(parse_seed_list("1,2,3"), (std::vector<std::uint64_t>{1, 2, 3}));
  EXPECT_THROW(parse_seed_list(""), ConfigError);
  EXPECT_THROW(parse_seed_list("1,,2"), ConfigError);
  EXPECT_THROW(parse_seed_list("1,-2"), ConfigError);
}

TEST(Config, ParseSections) {
  const auto j = nlohmann::json::parse(R"({
    "experiment": {"seeds": [7, 8], "losses": ["supcon", "softnce"]},
    "gmm": {"sigma": 0.5},
    "train": {"epochs": 10, "architecture": "5,8,2"},
    "kernel": {"h": 0.4, "metric": "cos"},
    "projection": {"beta": 5, "soft_source": "analytic"}
  })");
  const ExperimentConfig c = config_from_json(j, Experiment::mi_binary);
  EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{7, 8}));
  EXPECT_EQ(c.losses, (std::vector<LossKind>{LossKind::supcon, LossKind::softnce}));
  EXPECT_DOUBLE_EQ(c.train.gmm.sigma, 0.5);
  EXPECT_EQ(c.train.epochs, 10u);
  EXPECT_EQ(c.train.architecture, (std::vector<std::size_t>{5, 8, 2}));
  EXPECT_DOUBLE_EQ(c.train.loss_options.kernel.bandwidth, 0.4);
  EXPECT_EQ(c.train.loss_options.kernel.metric, Metric::cosine);
  EXPECT_DOUBLE_EQ(c.train.loss_options.beta, 5.0);
  EXPECT_EQ(c.train.loss_options.soft_source, SoftSource::analytic);
  EXPECT_EQ(c.train.batch_size, 256u);
}

TEST(Config, RejectsUnknownKeys) {
  using nlohmann::json;
  EXPECT_THROW(config_from_json(json::parse(R"({"extra": 1})"), Experiment::mi_binary),
               ConfigError);
  EXPECT_THROW(config_from_json(json::parse(R"({"train": {"epoch": 1}})"), Experiment::mi_binary),
               ConfigError);
  EXPECT_THROW(config_from_json(json::parse(R"({"kernel": {"kernel": "gauss"}})"),
                                Experiment::mi_binary),
               ConfigError);
  EXPECT_THROW(config_from_json(json::parse(R"({"experiment": {"name": "gradcheck"}})"),
                                Experiment::mi_binary),
               ConfigError);
  EXPECT_THROW(config_from_json(json::parse(R"({"train": {"epochs": "many"}})"),
                                Experiment::mi_binary),
               ConfigError);
}

TEST(Config, ManifestRoundTrip) {
  for (Experiment e : all_experiments()) {
    const ExperimentConfig c = default_config(e);
    const nlohmann::json m = manifest(c);
    EXPECT_EQ(manifest(config_from_json(m, e)), m) << to_string(e);
  }
}

TEST(Config, SettingSwitchUpdatesEncoder) {
  const auto j = nlohmann::json::parse(R"({"gmm": {"setting": "multiclass"}})");
  const ExperimentConfig c = config_from_json(j, Experiment::mi_binary);
  EXPECT_EQ(c.train.architecture, (std::vector<std::size_t>{8, 32, 32, 4}));
  EXPECT_EQ(c.train.batch_size, 128u);
}

TEST(Config, Validation) {
  ExperimentConfig c = default_config(Experiment::mi_binary);
  c.seeds.clear();
  EXPECT_THROW(c.validate(), ConfigError);
  c = default_config(Experiment::noisy_label_probe);
  c.noise_levels = {1.2};
  EXPECT_THROW(c.validate(), ConfigError);
  c = default_config(Experiment::nw_consistency);
  c.sizes = {512};
  EXPECT_THROW(c.validate(), ConfigError);
  c = default_config(Experiment::mi_binary);
  c.losses = {LossKind::ce_probe_only};
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Manifest, BinarySettingEcho) {
  const nlohmann::json m = manifest(default_config(Experiment::mi_binary));
  EXPECT_EQ(m["gmm"]["d_x"], 5);
  EXPECT_DOUBLE_EQ(m["gmm"]["sigma"].get<double>(), 1.0);
  EXPECT_EQ(m["train"]["architecture"], "5,16,16,2");
  EXPECT_EQ(m["train"]["batch_size"], 256);
  EXPECT_DOUBLE_EQ(m["train"]["temperature"].get<double>(), 0.07);
  EXPECT_EQ(m["derived"]["num_classes"], 2);
  EXPECT_EQ(m["experiment"]["losses"],
            (std::vector<std::string>{"supcon", "projnce", "softnce", "softsupcon"}));
}

TEST(Manifest, MulticlassSettingEcho) {
  const nlohmann::json m = manifest(default_config(Experiment::mi_multiclass));
  EXPECT_EQ(m["derived"]["num_classes"], 32);
  EXPECT_EQ(m["gmm"]["dataset_size"], 12800);
  EXPECT_EQ(m["train"]["batch_size"], 128);
  EXPECT_DOUBLE_EQ(m["train"]["lr"].get<double>(), 1e-2);
  EXPECT_EQ(m["train"]["architecture"], "8,32,32,4");
  EXPECT_EQ(m["train"]["epochs"], 200);
}

TEST(Manifest, KernelDefaultAndSchedule) {
  const nlohmann::json m = manifest(default_config(Experiment::bandwidth_sweep));
  EXPECT_EQ(m["derived"]["kernel_default"]["metric"], "l1");
  EXPECT_DOUBLE_EQ(m["derived"]["kernel_default"]["h"].get<double>(), 0.6);
  const nlohmann::json nw = manifest(default_config(Experiment::nw_consistency));
  EXPECT_EQ(nw["derived"]["bandwidth_schedule"].size(), 3u);
}

TEST(RunJobs, OrderAndErrors) {
  const auto out = run_jobs<int>(50, 4, [](std::size_t i) { return static_cast<int>(i * i); });
  for (std::size_t i = 0; i < 50; ++i) EXPECT_EQ(out[i], static_cast<int>(i * i));
  EXPECT_THROW(run_jobs<int>(10, 3,
                             [](std::size_t i) -> int {
                               if (i == 7) throw ConfigError("job 7");
                               return 0;
                             }),
               ConfigError);
  EXPECT_TRUE(run_jobs<int>(0, 2, [](std::size_t) { return 1; }).empty());
}

TEST(Svg, DeterministicAndValidated) {
  svg::Series a{"a&b", {1, 2, 3}, {0.1, 0.3, 0.2}, {0.01, 0.02, 0.01}};
  svg::ChartSpec spec{"title", "x", "y"};
  const std::string s1 = svg::line_chart(spec, {a}), s2 = svg::line_chart(spec, {a});
  EXPECT_EQ(s1, s2);
  EXPECT_EQ(s1.rfind("<svg", 0), 0u);
  EXPECT_NE(s1.find("a&amp;b"), std::string::npos);
  EXPECT_NE(s1.find("<polygon"), std::string::npos);
  svg::Series bad{"bad", {1, 2}, {1}, {}};
  EXPECT_THROW(svg::line_chart(spec, {bad}), DimensionError);
  spec.log_x = true;
  svg::Series neg{"neg", {0, 1}, {1, 2}, {}};
  EXPECT_THROW(svg::line_chart(spec, {neg}), DomainError);
}

TEST(MiCompare, SmokeShape) {
  ExperimentConfig c = tiny(Experiment::mi_binary, "mi");
  c.train.epochs = 5;
  c.train.eval_every = 5;
  const MiCompareResult r = run_mi_compare(c);
  EXPECT_EQ(r.runs.size(), 4u);
  EXPECT_EQ(r.summary.size(), 4u);
  const fs::path d = c.run_dir();
  EXPECT_TRUE(fs::exists(d / "manifest.json"));
  const std::string curves = read_text(d / "mi_curves.csv");
  EXPECT_EQ(count_lines(curves), 1u + 4u * 5u);
  EXPECT_EQ(first_line(curves),
            "loss,epoch,loss_mean,loss_stderr,mi_mean,mi_stderr,bound_mean,bound_stderr,"
            "probe_mean,probe_stderr,seeds");
  EXPECT_TRUE(fs::exists(d / "mi_curves.svg"));
  EXPECT_TRUE(fs::exists(d / "mi_summary.csv"));
  EXPECT_TRUE(fs::exists(d / "runs" / "softnce_s1.csv"));
  EXPECT_TRUE(fs::exists(d / "checkpoints" / "projnce_s1_e5.ckpt"));
  const nlohmann::json m = nlohmann::json::parse(read_text(d / "manifest.json"));
  EXPECT_EQ(m, manifest(c));
}

TEST(BoundCheck, MissingSource) {
  ExperimentConfig c = tiny(Experiment::bound_check, "bound-missing");
  EXPECT_THROW(run_bound_check(c), ConfigError);
}

TEST(BoundCheck, RowsForEveryCheckpoint) {
  ExperimentConfig mi = tiny(Experiment::mi_binary, "bound");
  mi.losses = {LossKind::supcon, LossKind::softnce};
  run_mi_compare(mi);
  ExperimentConfig c = tiny(Experiment::bound_check, "bound-check");
  c.out_dir = mi.out_dir;
  c.oracle_samples = 20000;
  const BoundCheckResult r = run_bound_check(c);
  std::set<std::string> names, checkpoints;
  for (const auto& row : r.rows) {
    names.insert(row.bound);
    checkpoints.insert(row.checkpoint);
    if (row.bound == "infonce_bound") EXPECT_EQ(row.adjustment, 1.0);
    if (row.bound == "raw_supcon") EXPECT_FALSE(row.certified);
  }
  EXPECT_EQ(checkpoints.size(), 4u);
  EXPECT_TRUE(names.count("supcon_adjusted"));
  EXPECT_TRUE(names.count("softnce"));
  EXPECT_TRUE(names.count("raw_supcon"));
  EXPECT_EQ(r.failures(), 0u);
  const std::string csv = read_text(c.run_dir() / "bound_check.csv");
  EXPECT_EQ(count_lines(csv), 1u + r.rows.size());
}

TEST(BandwidthSweep, GridShape) {
  ExperimentConfig c = tiny(Experiment::bandwidth_sweep, "sweep");
  c.train.epochs = 1;
  c.train.evaluate_mi = false;
  const auto rows = run_bandwidth_sweep(c);
  EXPECT_EQ(rows.size(), 15u);
  EXPECT_EQ(count_lines(read_text(c.run_dir() / "bandwidth_sweep.csv")), 16u);
  EXPECT_TRUE(fs::exists(c.run_dir() / "bandwidth_sweep.svg"));
}

TEST(BandwidthSweep, TinyBandwidthRaisesFallbacks) {
  ExperimentConfig c = tiny(Experiment::bandwidth_sweep, "sweep-tiny");
  c.train.epochs = 1;
  c.train.gmm.dataset_size = 256;
  c.bandwidths = {0.01, 0.6};
  c.metrics = {Metric::l1};
  const auto rows = run_bandwidth_sweep(c);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_GT(rows[0].fallback_rate, rows[1].fallback_rate);
  EXPECT_GT(rows[0].fallback_rows, 0u);
}

TEST(SoftnceConsistency, DeterministicOutputs) {
  ExperimentConfig c = tiny(Experiment::softnce_consistency, "cons");
  c.sizes = {32, 128};
  const auto a = run_softnce_consistency(c);
  const std::string csv = read_text(c.run_dir() / "softnce_consistency.csv");
  const std::string svg = read_text(c.run_dir() / "softnce_consistency.svg");
  run_softnce_consistency(c);
  EXPECT_EQ(read_text(c.run_dir() / "softnce_consistency.csv"), csv);
  EXPECT_EQ(read_text(c.run_dir() / "softnce_consistency.svg"), svg);
  EXPECT_EQ(count_lines(csv), 3u);
  ASSERT_EQ(a.size(), 1u);
  EXPECT_EQ(a[0].points.size(), 2u);
}

TEST(NwConsistency, PositiveErrors) {
  ExperimentConfig c = tiny(Experiment::nw_consistency, "nw");
  c.sizes = {64, 256};
  const NwConsistencyResult r = run_nw_consistency(c);
  ASSERT_EQ(r.summary.size(), 2u);
  for (const auto& p : r.points) {
    EXPECT_GT(p.error_nw, 0.0);
    EXPECT_GT(p.error_analytic, 0.0);
  }
  EXPECT_NEAR(r.summary[0].h, bandwidth_schedule(64, 2), 1e-15);
  EXPECT_TRUE(fs::exists(c.run_dir() / "nw_consistency.csv"));
}

TEST(NoisyProbe, CsvSchema) {
  ExperimentConfig c = tiny(Experiment::noisy_label_probe, "noisy");
  c.train.epochs = 1;
  const auto rows = run_noisy_label_probe(c);
  EXPECT_EQ(rows.size(), 4u);
  const std::string csv = read_text(c.run_dir() / "noisy_label_probe.csv");
  EXPECT_EQ(first_line(csv), "loss,p,seed,accuracy");
  EXPECT_EQ(count_lines(csv), 5u);
  EXPECT_NE(csv.find("projnce,0.3,1,"), std::string::npos);
}

TEST(Gradcheck, JobsDoNotChangeOutput) {
  ExperimentConfig c = tiny(Experiment::gradcheck, "grad");
  c.seeds = {1, 2, 3};
  const auto rows = run_gradcheck(c);
  const std::string one = read_text(c.run_dir() / "gradcheck.csv");
  c.jobs = 3;
  run_gradcheck(c);
  EXPECT_EQ(read_text(c.run_dir() / "gradcheck.csv"), one);
  EXPECT_EQ(rows.size(), 21u);
  for (const auto& r : rows) EXPECT_TRUE(r.pass) << to_string(r.loss) << " " << r.rel_error;
}

TEST(RunExperiment, ReportsAndStatus) {
  ExperimentConfig c = tiny(Experiment::gradcheck, "report");
  c.seeds = {4};
  std::ostringstream log;
  EXPECT_TRUE(run_experiment(c, log));
  EXPECT_NE(log.str().find("PASS"), std::string::npos);
}
