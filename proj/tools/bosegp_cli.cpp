#include <bosegp/cli/run.hpp>

#include <CLI11.hpp>

#include <iostream>

namespace cli = bosegp::cli;

int main(int argc, char** argv) {
  CLI::App app{"bosegp: desk-scale checks for dilute Bose gases"};
  app.require_subcommand(1);

  std::string run_cfg, validate_cfg;
  std::string out;
  std::uint64_t seed = 0;
  int threads = 1;

  auto* run = app.add_subcommand("run", "run the experiment a config describes");
  run->add_option("config", run_cfg, "config file (JSON)")->required()->check(CLI::ExistingFile);
  auto* out_opt = run->add_option("--out", out, "output directory (overrides the config's \"output\")");
  auto* seed_opt = run->add_option("--seed", seed, "random seed (overrides the config's \"seed\")");
  run->add_option("--threads", threads, "worker threads for sweep points")->check(CLI::PositiveNumber);

  auto* val = app.add_subcommand("validate", "check a config against the schema and resource caps");
  val->add_option("config", validate_cfg, "config file (JSON)")->required();

  CLI11_PARSE(app, argc, argv);

  const std::string path = run->parsed() ? run_cfg : validate_cfg;
  auto loaded = cli::load_config(path);
  if (!loaded.errors.empty()) {
    for (const auto& d : loaded.errors) std::cerr << "error: " << d.str() << "\n";
    return 2;
  }

  if (val->parsed()) {
    auto v = cli::validate(loaded.config);
    for (const auto& n : v.notes) std::cout << "ok: " << n << "\n";
    for (const auto& d : v.errors) std::cout << "error: " << d.str() << "\n";
    std::cout << (v.ok() ? "valid" : "invalid") << "\n";
    return v.ok() ? 0 : 2;
  }

  cli::RunOptions opt;
  if (*out_opt) opt.out = out;
  if (*seed_opt) opt.seed = seed;
  opt.threads = threads;
  opt.base_dir = std::filesystem::path(path).parent_path();
  if (opt.base_dir.empty()) opt.base_dir = ".";
  auto r = cli::run(loaded.config, opt);
  for (const auto& d : r.diagnostics) std::cerr << "error: " << d.str() << "\n";
  for (const auto& c : r.checks) std::cout << c.line() << "\n";
  if (!r.error.empty()) std::cerr << "error: " << r.error << "\n";
  if (r.diagnostics.empty()) std::cout << "report: " << (r.out / "report.json").string() << "\n";
  return r.exit_code;
}
