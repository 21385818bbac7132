// projnce-lab: runs the synthetic studies and writes manifests, CSVs and SVGs.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "projnce/experiments.hpp"

namespace {

struct Options {
  std::string command;
  std::string config_path;
  std::string seed_list;
  std::size_t jobs = 0;
  std::string out;
  bool dry_run = false;
  std::string arch;
  std::size_t epochs = 0;
  std::string losses;
};

projnce::ExperimentConfig resolve(const Options& o) {
  using namespace projnce;
  const Experiment e = parse_experiment(o.command);
  ExperimentConfig c = default_config(e);
  if (!o.config_path.empty()) {
    std::ifstream is(o.config_path);
    if (!is) throw ConfigError("cannot open config " + o.config_path);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(is);
    } catch (const nlohmann::json::exception& ex) {
      throw ConfigError(o.config_path + ": " + ex.what());
    }
    c = config_from_json(j, e);
  }
  if (!o.seed_list.empty()) c.seeds = parse_seed_list(o.seed_list);
  if (o.jobs > 0) c.jobs = o.jobs;
  if (!o.out.empty()) c.out_dir = o.out;
  if (const char* env = std::getenv("PROJNCE_OUT"); env && *env) c.out_dir = env;
  if (!o.arch.empty()) c.train.architecture = parse_architecture(o.arch);
  if (o.epochs > 0) {
    if (e == Experiment::noisy_label_probe && c.train.eval_every > o.epochs) {
      c.train.eval_every = o.epochs;
    }
    c.train.epochs = o.epochs;
  }
  if (!o.losses.empty()) {
    c.losses.clear();
    std::stringstream ss(o.losses);
    std::string item;
    while (std::getline(ss, item, ',')) c.losses.push_back(parse_loss_kind(item));
  }
  c.validate();
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Contrastive-learning laboratory for projection-based InfoNCE losses"};
  Options o;
  std::vector<std::string> names;
  for (auto e : projnce::all_experiments()) names.push_back(projnce::to_string(e));
  app.add_option("command", o.command, "experiment to run")
      ->required()
      ->check(CLI::IsMember(names));
  app.add_option("--config", o.config_path, "JSON config (sections experiment, gmm, train, kernel, projection)");
  app.add_option("--seed-list", o.seed_list, "comma-separated seeds, e.g. 1,2,3");
  app.add_option("--jobs", o.jobs, "parallel jobs")->check(CLI::PositiveNumber);
  app.add_option("--out", o.out, "output directory (PROJNCE_OUT overrides)");
  app.add_flag("--dry-run", o.dry_run, "print the resolved configuration and exit");
  app.add_option("--arch", o.arch, "encoder layer sizes, e.g. 5,16,16,2");
  app.add_option("--epochs", o.epochs, "training epochs")->check(CLI::PositiveNumber);
  app.add_option("--losses", o.losses, "comma-separated loss selectors");
  CLI11_PARSE(app, argc, argv);

  try {
    const projnce::ExperimentConfig c = resolve(o);
    if (o.dry_run) {
      nlohmann::json j = projnce::manifest(c);
      j["experiment"]["out"] = c.out_dir.generic_string();
      j["experiment"]["jobs"] = c.jobs;
      std::cout << j.dump(2) << '\n';
      return 0;
    }
    const bool ok = projnce::run_experiment(c, std::cout);
    std::cout << "outputs in " << c.run_dir().generic_string() << '\n';
    return ok ? 0 : 2;
  } catch (const projnce::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
