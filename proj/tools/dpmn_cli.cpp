#include <iostream>

#include <CLI11.hpp>

#include "dpmn/cli.hpp"

namespace cli = dpmn::cli;

int main(int argc, char** argv) {
  CLI::App app{"Deep Poisson mixture network for hierarchical count forecasting"};
  app.require_subcommand(1);
  std::string config, checkpoint, output;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs, k;
  std::vector<std::size_t> k_list;

  auto common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", config, "run config (JSON)")->required();
    sub->add_option("--seed", seed, "override the config seed");
    sub->add_option("-o,--output-dir", output, "override the output directory");
  };
  auto* train = app.add_subcommand("train", "fit a model, write checkpoint and training log");
  common(train);
  train->add_option("--epochs", epochs, "override train.max_epochs");
  train->add_option("--k", k, "override model.n_components");
  auto* evaluate = app.add_subcommand("evaluate", "score the test window, write report.json and report.csv");
  auto* forecast = app.add_subcommand("forecast", "forecast past the last observation: quantiles, samples, rates");
  for (auto* sub : {evaluate, forecast}) {
    common(sub);
    sub->add_option("--checkpoint", checkpoint, "checkpoint file (default <output_dir>/checkpoint.bin)");
    sub->add_option("--k", k, "override model.n_components");
  }
  auto* verify = app.add_subcommand("verify", "run the self-test suites");
  common(verify);
  auto* ablate = app.add_subcommand("ablate", "test sCRPS per mixture size K");
  common(ablate);
  ablate->add_option("--epochs", epochs, "override train.max_epochs");
  ablate->add_option("--k", k_list, "K values, e.g. --k 1,4,16")->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << cli::error_record("usage", e.what()) << "\n";
    return 1;
  }

  cli::Overrides ov;
  ov.seed = seed;
  ov.epochs = epochs;
  ov.k = k;
  ov.k_list = k_list;
  ov.checkpoint = checkpoint;
  ov.output_dir = output;
  try {
    if (*train) return cli::cmd_train(config, ov, std::cout);
    if (*evaluate) return cli::cmd_evaluate(config, ov, std::cout);
    if (*forecast) return cli::cmd_forecast(config, ov, std::cout);
    if (*verify) return cli::cmd_verify(config, ov, std::cout);
    if (*ablate) return cli::cmd_ablate(config, ov, std::cout);
  } catch (const dpmn::InputError& e) {
    std::cerr << cli::error_record("input", e.what()) << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << cli::error_record("internal", e.what()) << "\n";
    return 2;
  }
  return 2;
}
