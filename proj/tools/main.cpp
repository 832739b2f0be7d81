#include <iostream>

#include <CLI11.hpp>

#include "commands.hpp"

namespace {

// Exit codes: 0 success, 2 config, 3 data, 4 sampler exhaustion, 5 numeric,
// 1 anything else.
int run(int argc, char** argv) {
  CLI::App app{"czsl - compositional zero-shot meta-learning experiments"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  bool force = false;
  bool resume = false;
  app.add_option("-c,--config", config_path, "Experiment config file (INI)");
  app.add_option("-s,--set", overrides, "Override a config key: section.key=value");
  app.add_flag("--force", force, "Overwrite existing outputs");
  app.add_flag("--resume", resume, "Resume training from the latest checkpoint");

  uint64_t seed_arg = 0;
  bool seed_given = false;

  CLI::App* generate = app.add_subcommand("generate", "Write the synthetic dataset manifests");
  CLI::App* pretrain = app.add_subcommand("pretrain", "Pretrain the frozen backbone");
  pretrain->add_option("--seed", seed_arg, "Run seed (default: first of evaluation.seeds)")
      ->each([&](const std::string&) { seed_given = true; });
  CLI::App* train_cmd = app.add_subcommand("train", "Meta-train the episodic model");
  train_cmd->add_option("--seed", seed_arg, "Run seed (default: first of evaluation.seeds)")
      ->each([&](const std::string&) { seed_given = true; });
  CLI::App* evaluate = app.add_subcommand("evaluate", "Evaluate on test episodes");
  evaluate->add_option("--seed", seed_arg, "Run seed (default: first of evaluation.seeds)")
      ->each([&](const std::string&) { seed_given = true; });
  CLI::App* report = app.add_subcommand("report", "Render a comparison table from record files");
  std::vector<std::string> record_files;
  std::string report_out;
  report->add_option("records", record_files, "results.jsonl files")->required();
  report->add_option("-o,--out", report_out, "Also write the table to this file");
  CLI::App* run_cmd = app.add_subcommand("run", "Pretrain, train and evaluate for every seed");

  CLI11_PARSE(app, argc, argv);

  if (app.got_subcommand(report)) {
    std::vector<std::filesystem::path> paths(record_files.begin(), record_files.end());
    czsl::cli::cmd_report(paths, report_out);
    return 0;
  }

  czsl::cli::ExperimentConfig cfg;
  if (!config_path.empty()) cfg = czsl::cli::load_config(config_path);
  for (const std::string& o : overrides) czsl::cli::apply_override(cfg, o);
  if (force) cfg.output.force = true;
  if (resume) cfg.output.resume = true;
  cfg.validate();
  uint64_t seed = seed_given ? seed_arg : cfg.evaluation.seeds.front();

  if (app.got_subcommand(generate)) {
    czsl::cli::cmd_generate(cfg);
  } else if (app.got_subcommand(pretrain)) {
    czsl::cli::cmd_pretrain(cfg, seed);
  } else if (app.got_subcommand(train_cmd)) {
    czsl::cli::cmd_train(cfg, seed);
  } else if (app.got_subcommand(evaluate)) {
    czsl::cli::cmd_evaluate(cfg, seed, /*fresh_records=*/false);
  } else if (app.got_subcommand(run_cmd)) {
    czsl::cli::cmd_run(cfg);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const czsl::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const czsl::SamplerExhausted& e) {
    std::cerr << "sampler exhaustion: " << e.what() << "\n";
    return 4;
  } catch (const czsl::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const czsl::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 5;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
