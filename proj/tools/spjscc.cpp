#include <iostream>
#include <vector>

#include "CLI11.hpp"
#include "spjscc/harness/commands.hpp"

using namespace spjscc;

int main(int argc, char** argv) {
  CLI::App app{"Semantic-weighted deep JSCC experiments"};
  app.require_subcommand(1);

  harness::CommandOptions options;
  std::string loss;
  std::uint64_t seed = 0;
  double snr = 0.0;

  auto common = [&](CLI::App* cmd, bool needs_config) {
    auto* c = cmd->add_option("--config", options.config, "experiment config file");
    if (needs_config) c->required();
    cmd->add_option("--out", options.out, "output directory")->required();
  };
  std::vector<CLI::Option*> seed_flags, snr_flags;
  auto with_seed = [&](CLI::App* cmd) { seed_flags.push_back(cmd->add_option("--seed", seed, "override the stage seed")); };
  auto with_snr = [&](CLI::App* cmd) { snr_flags.push_back(cmd->add_option("--snr", snr, "SNR in dB")); };
  auto with_loss = [&](CLI::App* cmd) {
    cmd->add_option("--loss", loss, "distortion loss")->required()->check(CLI::IsMember({"sp", "mse"}));
  };

  auto* pretrain = app.add_subcommand("pretrain-classifier", "train the frozen task classifier");
  common(pretrain, true);
  with_seed(pretrain);
  auto* extract = app.add_subcommand("extract-weights", "compute and cache per-image semantic weight maps");
  common(extract, true);
  auto* train = app.add_subcommand("train", "train a codec with the sp or mse loss");
  common(train, true);
  with_loss(train);
  with_seed(train);
  with_snr(train);
  auto* evaluate = app.add_subcommand("evaluate", "score one trained codec over the SNR grid");
  common(evaluate, true);
  with_loss(evaluate);
  with_seed(evaluate);
  with_snr(evaluate);
  auto* compare = app.add_subcommand("compare", "score both codecs and plot them side by side");
  common(compare, true);
  with_seed(compare);
  with_snr(compare);
  auto* plot = app.add_subcommand("plot", "render SVG plots from a results CSV");
  common(plot, false);
  plot->add_option("--results", options.results, "results CSV (default <out>/comparison.csv)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  CLI::App* cmd = app.get_subcommands().front();
  for (auto* o : seed_flags) {
    if (o->count()) options.seed = seed;
  }
  for (auto* o : snr_flags) {
    if (o->count()) options.snr_db = snr;
  }
  if (!loss.empty()) options.loss = training::parse_loss_mode(loss);
  return harness::run_command_status(cmd->get_name(), options, std::cout, std::cerr);
}
