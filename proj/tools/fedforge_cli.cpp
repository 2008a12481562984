// fedforge command-line tool: train, eval, sweep, datagen.

#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fedforge/commands.hpp"

namespace {

struct Overrides {
  std::optional<std::string> config_path;
  std::map<std::string, std::string> values;  // key -> raw flag value
};

void add_config_flags(CLI::App& app, Overrides& ov) {
  app.add_option("-c,--config", ov.config_path, "key = value configuration file");
  for (const auto& f : fedforge::config_fields()) {
    app.add_option_function<std::string>(
        "--" + f.key, [&ov, key = f.key](const std::string& v) { ov.values[key] = v; }, f.help);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated residual forgery detection on a synthetic corpus"};
  app.require_subcommand(1);
  Overrides ov;

  auto* train = app.add_subcommand("train", "run federated training; writes rounds.csv, model.ffrg, config.snapshot");
  auto* eval = app.add_subcommand("eval", "score a checkpoint on the configured test split");
  auto* sweep = app.add_subcommand("sweep", "train once per value of beta, mu2 or mu3; writes sweep.csv");
  auto* datagen = app.add_subcommand("datagen", "export the configured corpus as PGM images");
  for (auto* sub : {train, eval, sweep, datagen}) add_config_flags(*sub, ov);

  std::string checkpoint;
  eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  std::string param;
  std::vector<std::string> values;
  sweep->add_option("--param", param, "beta | mu2 | mu3")->required();
  sweep->add_option("--values", values, "values to try (space or comma separated)")
      ->required()
      ->delimiter(',');

  CLI11_PARSE(app, argc, argv);

  fedforge::ExperimentConfig cfg;
  try {
    std::optional<std::filesystem::path> file;
    if (ov.config_path) file = *ov.config_path;
    cfg = fedforge::resolve_config(file, ov.values);
  } catch (const std::exception& e) {
    std::cerr << "fedforge: " << e.what() << '\n';
    return 2;
  }

  if (*train) return fedforge::cmd_train(cfg, std::cout, std::cerr);
  if (*eval) return fedforge::cmd_eval(checkpoint, cfg, std::cout, std::cerr);
  if (*sweep) return fedforge::cmd_sweep(cfg, param, values, std::cout, std::cerr);
  return fedforge::cmd_datagen(cfg, std::cout, std::cerr);
}
