// Command-line front end: train, evaluate, sweep, verify.

#include "anil/anil.hpp"

#include <CLI11.hpp>

namespace {

struct Common {
  std::string config;
  std::string out = "out";
  std::optional<std::uint64_t> seed;
  std::optional<anil::Index> runs;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "experiment config (JSON)")->required();
  cmd->add_option("--out", c.out, "output directory");
  cmd->add_option("--seed", c.seed, "override the config seed");
  cmd->add_option("--runs", c.runs, "override the number of runs");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Representation learning with ANIL / MAML: training, evaluation and theory checks"};
  app.require_subcommand(1);
  Common common;
  std::vector<std::string> params_files;
  std::optional<double> tamper_beta;
  std::optional<double> tamper_lambda;

  auto* train = app.add_subcommand("train", "train meta-learners and write traces and parameters");
  add_common(train, common);
  auto* evaluate = app.add_subcommand("evaluate", "excess-risk table for trained parameters and baselines");
  add_common(evaluate, common);
  evaluate->add_option("--params", params_files, "params_run<r>.bin files written by train");
  auto* sweep = app.add_subcommand("sweep", "sweep one parameter and write long-format aggregates");
  add_common(sweep, common);
  auto* verify = app.add_subcommand("verify", "check the theory conditions and oracles; exit 2 on failure");
  add_common(verify, common);
  verify->add_option("--tamper-beta", tamper_beta, "replace beta (e.g. beta > alpha) to exercise the checks");
  verify->add_option("--tamper-lambda", tamper_lambda, "relative perturbation of the fixed point");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? anil::kExitOk : anil::kExitInvalid;
  }

  anil::ExperimentConfig cfg;
  auto errors = anil::load_config(common.config, {common.seed, common.runs}, cfg);
  if (tamper_beta) cfg.beta = *tamper_beta;
  if (tamper_lambda) cfg.verify_tamper_lambda = *tamper_lambda;
  if (!errors.empty()) {
    for (const auto& e : errors) std::cerr << "invalid config: " << e << '\n';
    return anil::kExitInvalid;
  }
  try {
    if (*train) return anil::cmd_train(cfg, common.out);
    if (*evaluate) return anil::cmd_evaluate(cfg, params_files, common.out);
    if (*sweep) return anil::cmd_sweep(cfg, common.out);
    if (*verify) return anil::cmd_verify(cfg, common.out);
  } catch (const std::exception& e) {
    // Bad inputs and failed runs (divergence, unreadable files) both end here.
    std::cerr << "error: " << e.what() << '\n';
    return anil::kExitInvalid;
  }
  return anil::kExitOk;
}
