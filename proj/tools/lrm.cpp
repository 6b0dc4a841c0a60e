// lrm — command-line front end: run, compare, wapt, validate.
#include <iostream>

#include <CLI11.hpp>

#include "lrm/harness/commands.hpp"

int main(int argc, char** argv) {
  using namespace lrm::harness;

  CLI::App app{"Langevin-like sampler experiments"};
  app.require_subcommand(1);
  app.fallthrough();

  CliOptions opts;
  opts.log = &std::cerr;
  std::uint64_t seed = 0;
  std::string out;
  bool quiet = false;

  app.add_option("--config,-c", opts.config_path, "experiment file (YAML, or JSON by .json extension)")
      ->required()
      ->check(CLI::ExistingFile);
  auto* seed_opt = app.add_option("--seed", seed, "seed replacing the config's seed");
  app.add_option("--jobs,-j", opts.jobs, "worker threads for replicas")->check(CLI::PositiveNumber);
  auto* out_opt = app.add_option("--out", out, "output root (default $LRM_OUT_DIR, then ./runs)");
  app.add_flag("--force", opts.force, "run even when the schedule validator rejects");
  app.add_flag("--records", opts.records, "write records/<replica>.csv");
  app.add_option("--set", opts.overrides, "config override key.path=value (repeatable)");
  app.add_flag("--quiet,-q", quiet, "suppress the verdict table");

  auto* run = app.add_subcommand("run", "convergence run of one scheme");
  auto* compare = app.add_subcommand("compare", "several schemes on the same target and streams");
  auto* wapt = app.add_subcommand("wapt", "WAPT deviation study");
  auto* validate = app.add_subcommand("validate", "estimators and checkers without a sampling run");

  CLI11_PARSE(app, argc, argv);

  if (*seed_opt) opts.seed = seed;
  if (*out_opt) opts.out_dir = out;
  if (quiet) opts.log = nullptr;

  CommandResult result;
  if (run->parsed()) {
    result = cli_run(opts);
  } else if (compare->parsed()) {
    result = cli_compare(opts);
  } else if (wapt->parsed()) {
    result = cli_wapt(opts);
  } else if (validate->parsed()) {
    result = cli_validate(opts);
  }
  if (!result.run_dir.empty()) std::cout << result.run_dir << "\n";
  return result.exit_code;
}
