// mgd: experiment runner for matching guided distillation on synthetic data.
//
//   mgd run <config.json> [--arms a,b] [--seeds N] [--out DIR] [--dry-run]
//   mgd dump-features <run-dir> --arm amp --seed S [--sample K] [--tap P] [--out DIR]
//   mgd default-config
//   mgd export-data <config.json> --seed S --out DIR
//
// Exit status: 0 ok, 2 bad config or arguments, 1 runtime failure.

#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "mgd/experiment.hpp"

namespace {

struct RunArgs {
  std::string config;
  std::string arms;
  std::optional<std::size_t> seeds;
  std::string out;
  bool dry_run = false;
  bool quiet = false;
};

struct DumpArgs {
  std::string run_dir;
  std::string arm = "amp";
  std::uint64_t seed = 0;
  std::size_t sample = 0;
  std::size_t tap = 0;
  std::optional<std::size_t> channels;
  std::string out;
};

struct ExportArgs {
  std::string config;
  std::uint64_t seed = 0;
  std::string out;
};

// Flags override fields from the file.
mgd::ExperimentConfig resolve(const RunArgs& a) {
  auto c = mgd::load_experiment(a.config);
  if (!a.arms.empty()) c.arms = mgd::parse_arm_list(a.arms);
  if (a.seeds) c.seeds = *a.seeds;
  if (!a.out.empty()) c.out_dir = a.out;
  mgd::validate(c);
  return c;
}

int cmd_run(const RunArgs& a) {
  const auto c = resolve(a);
  if (a.dry_run) {
    std::cout << "config ok (" << mgd::config_hash(c) << "): " << c.arms.size() << " arm(s) x "
              << c.seeds << " seed(s) -> " << c.out_dir << '\n';
    return 0;
  }
  mgd::RunOptions opt;
  if (!a.quiet) opt.progress = [](const std::string& m) { std::cerr << m << '\n'; };
  const auto result = mgd::run_experiment(c, opt);
  mgd::write_summary_csv(std::cout, result.summary);
  return 0;
}

int cmd_dump(const DumpArgs& a) {
  mgd::FeatureDumpRequest req{a.sample, a.tap, a.channels};
  const std::filesystem::path out =
      a.out.empty() ? std::filesystem::path(a.run_dir) / "features" : std::filesystem::path(a.out);
  const auto written =
      mgd::dump_features_from_run(a.run_dir, mgd::parse_arm(a.arm), a.seed, req, out);
  for (const auto& p : written) std::cout << p.string() << '\n';
  return 0;
}

int cmd_export(const ExportArgs& a) {
  auto c = mgd::load_experiment(a.config);
  mgd::validate(c);
  auto spec = c.synth;
  spec.seed = a.seed;
  mgd::export_dataset(mgd::generate(spec), a.out);
  std::cout << "wrote " << spec.n_classes * spec.samples_per_class << " images to " << a.out
            << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"matching guided distillation experiments"};
  app.set_version_flag("--version", std::string("mgd ") + mgd::kVersion);
  app.require_subcommand(1);

  RunArgs run;
  auto* run_cmd = app.add_subcommand("run", "train all arms over all seeds");
  run_cmd->add_option("config", run.config, "JSON config file")->required();
  run_cmd->add_option("--arms", run.arms, "comma separated arms (baseline,sm,rd,amp,mp,avgp,no-matching)");
  run_cmd->add_option("--seeds", run.seeds, "number of seeds");
  run_cmd->add_option("--out", run.out, "output directory");
  run_cmd->add_flag("--dry-run", run.dry_run, "validate the config and exit");
  run_cmd->add_flag("-q,--quiet", run.quiet, "no progress on stderr");

  DumpArgs dump;
  auto* dump_cmd = app.add_subcommand("dump-features", "write PGM feature dumps from a finished run");
  dump_cmd->add_option("run_dir", dump.run_dir, "directory written by `run`")->required();
  dump_cmd->add_option("--arm", dump.arm, "distilled arm");
  dump_cmd->add_option("--seed", dump.seed, "seed of the run")->required();
  dump_cmd->add_option("--sample", dump.sample, "sample index in the generated dataset");
  dump_cmd->add_option("--tap", dump.tap, "distillation position");
  dump_cmd->add_option("--channels", dump.channels, "student channels to dump (default all)");
  dump_cmd->add_option("--out", dump.out, "output directory (default <run_dir>/features)");

  auto* default_cmd = app.add_subcommand("default-config", "print the default config as JSON");

  ExportArgs exp;
  auto* export_cmd = app.add_subcommand("export-data", "write the synthetic dataset as PGMs");
  export_cmd->add_option("config", exp.config, "JSON config file")->required();
  export_cmd->add_option("--seed", exp.seed, "dataset seed");
  export_cmd->add_option("--out", exp.out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*run_cmd) return cmd_run(run);
    if (*dump_cmd) return cmd_dump(dump);
    if (*default_cmd) {
      std::cout << mgd::to_json(mgd::ExperimentConfig{}).dump(2) << '\n';
      return 0;
    }
    if (*export_cmd) return cmd_export(exp);
  } catch (const mgd::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
