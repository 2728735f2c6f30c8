// Command-line entry point. Exit codes: 0 ok, 1 validation failure or refusal,
// 2 usage or configuration error, 3 runtime error.

#include <iostream>

#include "CLI11.hpp"

#include "cotasks/errors.hpp"
#include "cotasks/pipeline.hpp"

namespace fs = std::filesystem;
using namespace cotasks;

int main(int argc, char** argv) {
  CLI::App app{"Build CoTask datasets from object-centric video QA annotations and evaluate VideoLLMs on them"};
  app.set_version_flag("--version", std::string(kToolVersion));
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;

  auto* build = app.add_subcommand("build", "Parse, sample, construct and expand every configured split");
  build->add_option("-c,--config", config_path, "Pipeline config (JSON)")->required()->check(CLI::ExistingFile);
  build->add_option("-o,--out", out_dir, "Fresh output directory")->required();

  std::vector<std::string> validate_paths;
  bool validate_json = false;
  auto* validate = app.add_subcommand("validate", "Check bundles, instances and annotations; exit 0 iff clean");
  validate->add_option("paths", validate_paths, "Build directories or .jsonl files")->required();
  validate->add_flag("--json", validate_json, "Machine-readable report");

  std::string stats_dir;
  auto* stats = app.add_subcommand("stats", "Dataset statistics table of a build directory");
  stats->add_option("build_dir", stats_dir, "Build directory")->required()->check(CLI::ExistingDirectory);

  std::string build_dir;
  std::string split = "test";
  std::string condition;
  auto* infer = app.add_subcommand("infer", "Query the subject model under one condition");
  infer->add_option("-c,--config", config_path, "Pipeline config (JSON)")->required()->check(CLI::ExistingFile);
  infer->add_option("-b,--build", build_dir, "Build directory")->required()->check(CLI::ExistingDirectory);
  infer->add_option("-s,--split", split, "Split name")->capture_default_str();
  infer->add_option("--condition", condition, "baseline, ct12, ct34, ct14 or cotask1..cotask4")->required();
  infer->add_option("-o,--out", out_dir, "Fresh output directory")->required();

  std::string run_dir;
  auto* judge = app.add_subcommand("judge", "Score an inference run with the judge model");
  judge->add_option("-c,--config", config_path, "Pipeline config (JSON)")->required()->check(CLI::ExistingFile);
  judge->add_option("-r,--run", run_dir, "Inference run directory")->required()->check(CLI::ExistingDirectory);
  judge->add_option("-o,--out", out_dir, "Fresh output directory")->required();

  std::vector<std::string> judge_dirs;
  auto* report = app.add_subcommand("report", "Comparison table over judged runs");
  report->add_option("-r,--runs", judge_dirs, "Judge run directories")->required()->check(CLI::ExistingDirectory);
  report->add_option("-o,--out", out_dir, "Fresh output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  CommandContext ctx;
  ctx.out = &std::cout;
  ctx.err = &std::cerr;
  try {
    if (*build) return cmd_build(PipelineConfig::load(config_path), out_dir, ctx);
    if (*validate) {
      return cmd_validate(std::vector<fs::path>(validate_paths.begin(), validate_paths.end()), ctx, validate_json);
    }
    if (*stats) return cmd_stats(stats_dir, ctx);
    if (*infer) return cmd_infer(PipelineConfig::load(config_path), build_dir, split, condition, out_dir, ctx);
    if (*judge) return cmd_judge(PipelineConfig::load(config_path), run_dir, out_dir, ctx);
    if (*report) return cmd_report(std::vector<fs::path>(judge_dirs.begin(), judge_dirs.end()), out_dir, ctx);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ArgumentError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const IntegrityError& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const ParseError& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
