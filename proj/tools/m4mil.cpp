#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>

#include "m4/cli.hpp"
#include "m4/errors.hpp"

namespace cli = m4::cli;

int main(int argc, char** argv) {
  CLI::App app{"Multi-task mixture-of-experts MIL: synthesize, train, evaluate, map attention"};
  app.footer(cli::schema_help());
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  auto add_common = [&](CLI::App* cmd, bool needs_out) {
    cmd->add_option("--config", config_path, "run configuration file (key = value lines)");
    cmd->add_option("--seed", seed, "overrides the config seed");
    auto* o = cmd->add_option("--out", out, "output path");
    if (needs_out) o->required();
  };

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset (bags, manifest, signal table)");
  add_common(synth, true);

  std::string manifest, report, model, bag_path;
  bool ablation = false;
  auto* train = app.add_subcommand("train", "train per config and save MPR1 parameters plus a report");
  add_common(train, true);
  train->add_option("manifest", manifest, "dataset manifest")->required();
  train->add_option("--report", report, "report path (default <out>.report.csv)");
  train->add_flag("--ablation", ablation, "train all four ladder variants; --out is a file prefix");

  auto* eval = app.add_subcommand("eval", "score a saved model on the manifest's test split");
  add_common(eval, true);
  eval->add_option("model", model, "MPR1 parameter file")->required();
  eval->add_option("manifest", manifest, "dataset manifest")->required();

  std::size_t fold = 0;
  auto* heatmap = app.add_subcommand("heatmap", "write per-expert and per-task attention maps for one bag");
  add_common(heatmap, true);
  heatmap->add_option("model", model, "MPR1 parameter file")->required();
  heatmap->add_option("bag", bag_path, "MBG1 bag file")->required();
  heatmap->add_option("--fold", fold, "zero-based index of the fold model to use")->capture_default_str();

  bool corrupt = false;
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every layer and variant");
  add_common(gradcheck, false);
  gradcheck->add_flag("--corrupt-gradient", corrupt, "scale analytic gradients by 1.01 (checker self-test)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? cli::kOk : cli::kUsageError;
  }

  cli::RunConfig config;
  try {
    if (!config_path.empty()) config = cli::RunConfig::load(config_path);
    if (seed) config.set("seed", std::to_string(*seed));
  } catch (const m4::IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return cli::kIoError;
  } catch (const m4::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return cli::kUsageError;
  }

  if (*synth) return cli::cmd_synth(config, out, std::cout, std::cerr);
  if (*train) {
    if (ablation) return cli::cmd_ablation(config, manifest, out, std::cout, std::cerr);
    return cli::cmd_train(config, {manifest, out, report}, std::cout, std::cerr);
  }
  if (*eval) {
    std::optional<cli::RunConfig> expected;
    if (!config_path.empty()) expected = config;
    return cli::cmd_eval(expected, model, manifest, out, std::cout, std::cerr);
  }
  if (*heatmap) return cli::cmd_heatmap(model, bag_path, out, fold, std::cout, std::cerr);
  return cli::cmd_gradcheck(config, corrupt, std::cout, std::cerr);
}
