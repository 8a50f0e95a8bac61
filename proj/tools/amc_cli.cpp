// amc_cli: train | attack | suite driven by one JSON config.
//
//   amc_cli train  --config desk.json --out runs/a [--seed N]
//   amc_cli attack --config desk.json --model runs/a/checkpoints/amc-target.amcm --out runs/b
//   amc_cli suite  --config desk.json --out runs/c --format markdown
//
// AMC_THREADS sets the Eigen thread count (default 1).

#include <cstdlib>
#include <iostream>

#include <Eigen/Core>

#include "CLI11.hpp"
#include "amc/experiment.hpp"

namespace {

void apply_thread_env() {
  if (const char* env = std::getenv("AMC_THREADS")) {
    const int n = std::atoi(env);
    if (n < 1) throw amc::Error("AMC_THREADS must be a positive integer");
    Eigen::setNbThreads(n);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adversarial robustness lab: attacks, adversarial training, model cascades"};
  app.require_subcommand(1);
  std::string config_path, out_dir, format = "csv", model_path;
  std::optional<std::uint64_t> seed;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", out_dir, "output directory (overrides output_dir)");
    sub->add_option("--seed", seed, "master seed (overrides seed)");
  };
  CLI::App* train = app.add_subcommand("train", "train the target per the configured defense mode");
  CLI::App* attack = app.add_subcommand("attack", "craft all attacks against a saved model");
  CLI::App* suite = app.add_subcommand("suite", "run every experiment stage and emit a report");
  common(train);
  common(attack);
  common(suite);
  attack->add_option("--model", model_path, "model checkpoint")->required();
  suite->add_option("--format", format, "report format")->check(CLI::IsMember({"csv", "markdown", "json"}));

  CLI11_PARSE(app, argc, argv);

  try {
    apply_thread_env();
    amc::ExperimentConfig cfg = amc::load_config(config_path);
    if (seed) cfg.seed = *seed;
    const std::filesystem::path out = out_dir.empty() ? std::filesystem::path(cfg.output_dir) : std::filesystem::path(out_dir);
    if (train->parsed()) {
      const auto r = amc::cmd_train(cfg, out);
      std::cout << "checkpoint " << r.checkpoint.string() << "\n"
                << "test error " << r.log["model"]["test_error"].get<double>() << "\n";
    } else if (attack->parsed()) {
      const auto r = amc::cmd_attack(cfg, model_path, out);
      std::cout << amc::table_csv(r.table);
    } else {
      const auto r = amc::cmd_suite(cfg, out, amc::report_format_from_name(format));
      for (const auto& st : r.report.logs["stages"])
        std::cout << st["stage"].get<std::string>() << ": " << st["status"].get<std::string>()
                  << (st.contains("error") ? " (" + st["error"].get<std::string>() + ")" : "") << "\n";
      if (!r.ok) return 1;
    }
  } catch (const amc::ConfigError& e) {
    std::cerr << "config error at " << e.field() << ": " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
