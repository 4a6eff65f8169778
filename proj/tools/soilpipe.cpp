// soilpipe: command-line front end for the soil nutrient pipeline.

#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "soilpipe/pipeline.hpp"

namespace sp = soilpipe;
namespace pl = soilpipe::pipeline;

int main(int argc, char** argv) {
  CLI::App app{"Soil nutrient prediction pipeline", "soilpipe"};
  app.set_version_flag("--version", std::string(pl::kPipelineVersion));
  app.require_subcommand(1, 1);
  app.fallthrough();

  std::string config_path;
  std::optional<std::uint64_t> seed;
  unsigned workers = sp::default_workers();
  std::string out = "run";
  app.add_option("--config", config_path, "JSON run configuration")->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "Seed overriding the configuration");
  app.add_option("--workers", workers, "Worker threads (1 for bit-reproducible runs)")->check(CLI::PositiveNumber);
  app.add_option("--out", out, "Run directory");

  const std::vector<std::pair<std::string, std::string>> commands = {
      {"synth", "Write a synthetic dataset in the ingest formats"},
      {"ingest", "Read sources and assemble raw feature tables"},
      {"preprocess", "Impute, normalize and inspect feature tables"},
      {"split", "Write single and spatial split plans"},
      {"tune", "Random hyperparameter search per model and nutrient"},
      {"train", "Refit the best configurations"},
      {"evaluate", "Score models on held-out test data"},
      {"report", "Render performance tables and charts"},
      {"run", "Run every stage after synth in order"},
      {"config", "Print the effective configuration"},
  };
  for (const auto& [name, help] : commands) app.add_subcommand(name, help);

  CLI11_PARSE(app, argc, argv);
  const std::string cmd = app.get_subcommands().front()->get_name();

  try {
    pl::StageContext ctx;
    ctx.out = out;
    ctx.workers = workers;
    ctx.config = config_path.empty() ? pl::RunConfig{} : pl::load_config(config_path);
    if (seed) ctx.config.seed = *seed;

    if (cmd == "config") {
      std::cout << pl::config_to_json(ctx.config).dump(2) << '\n';
      return 0;
    }
    std::filesystem::create_directories(ctx.out);
    if (cmd == "run") {
      pl::run_chain(ctx, !std::filesystem::exists(pl::stage_dir(ctx.out, "synth") / "manifest.json") &&
                             ctx.config.data.soil.empty());
    } else {
      pl::run_stage(cmd, ctx);
    }
    std::cerr << cmd << ": done (" << ctx.out.string() << ")\n";
    return 0;
  } catch (const pl::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const pl::PrerequisiteMissing& e) {
    std::cerr << "error: " << cmd << ": " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << cmd << ": " << e.what() << '\n';
    return 1;
  }
}
