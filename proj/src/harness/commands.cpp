#include "spjscc/harness/commands.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <ostream>

#include "spjscc/harness/checkpoint.hpp"
#include "spjscc/harness/plots.hpp"
#include "spjscc/metrics/metrics.hpp"
#include "spjscc/saliency/saliency.hpp"

namespace spjscc::harness {

namespace fs = std::filesystem;

namespace {

void require_file(const fs::path& path, const std::string& what, const std::string& producer) {
  if (!fs::exists(path)) {
    throw StageError("missing " + what + " " + path.string() + " (run " + producer + " first)");
  }
}

void reject(bool present, const std::string& flag, const std::string& command) {
  if (present) throw UsageError(flag + " is not used by " + command);
}

classifier::ClassifierModel load_classifier(const fs::path& out) {
  const auto path = out / kClassifierCheckpoint;
  require_file(path, "classifier checkpoint", "pretrain-classifier");
  return classifier_from(load_checkpoint(path));
}

std::string run_id(training::LossMode mode, const std::string& hash) {
  return training::to_string(mode) + "-" + hash.substr(0, 12);
}

std::vector<metrics::EvalReport> evaluate_mode(const ExperimentConfig& cfg, const CommandOptions& options,
                                               training::LossMode mode, const classifier::ClassifierModel& cls,
                                               const dataio::LabeledImageDataset& test, std::ostream& log) {
  const auto path = options.out / codec_checkpoint_name(mode);
  require_file(path, training::to_string(mode) + " codec checkpoint",
               "train --loss " + training::to_string(mode));
  const auto bundle = codec_from(load_checkpoint(path));
  if (bundle.mode != mode) throw StageError("codec checkpoint " + path.string() + " was trained in another loss mode");
  metrics::EvalOptions eo;
  eo.snr_grid = cfg.eval_snr_db;
  eo.seeds = cfg.eval_seeds;
  eo.run_id = run_id(mode, cfg.hash());
  eo.loss_mode = training::to_string(mode);
  const auto cells = metrics::evaluate(bundle.encoder, bundle.decoder, cls, test, eo);
  for (const auto& c : cells) {
    char line[160];
    std::snprintf(line, sizeof line, "%s snr %5.1f dB: acc %.4f f1 %.4f psnr %.2f ssim %.4f cpp %.4f\n",
                  eo.loss_mode.c_str(), c.snr_db, c.mean.acc, c.mean.f1, c.mean.psnr_db, c.mean.ssim, c.mean.cpp);
    log << line;
  }
  return metrics::flatten(cells);
}

void write_results(const fs::path& path, const std::vector<metrics::EvalReport>& rows, const std::string& hash) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  metrics::write_results_csv(out, rows, hash);
}

void pretrain(const ExperimentConfig& cfg, const CommandOptions& options, std::ostream& log) {
  const auto train = load_split(cfg.data, dataio::Split::kTrain);
  std::ofstream csv(options.out / kClassifierLog, std::ios::binary | std::ios::trunc);
  csv << "# config_hash=" << cfg.hash() << "\nepoch,loss,train_acc\n";
  const auto model = classifier::pretrain_classifier(train, cfg.pretrain, cfg.classifier, [&](const auto& s) {
    char line[96];
    std::snprintf(line, sizeof line, "%zu,%.9g,%.9g\n", s.epoch, s.loss, s.accuracy);
    csv << line;
    std::snprintf(line, sizeof line, "classifier epoch %zu loss %.4f acc %.4f\n", s.epoch, s.loss, s.accuracy);
    log << line << std::flush;
  });
  save_checkpoint(classifier_checkpoint(model, cfg.hash()), options.out / kClassifierCheckpoint);
  char line[96];
  std::snprintf(line, sizeof line, "classifier train accuracy %.4f\n", classifier::classify_accuracy(model, train));
  log << line;
}

void extract(const ExperimentConfig& cfg, const CommandOptions& options, std::ostream& log) {
  const auto cls = load_classifier(options.out);
  const auto train = load_split(cfg.data, dataio::Split::kTrain);
  const auto cache = saliency::extract_weight_cache(cls, train);
  saliency::save_weight_cache(cache, options.out / kWeightCache);
  log << "weight maps " << cache.count() << ", zero-gradient fallbacks " << cache.fallback_images.size() << '\n';
}

void train(const ExperimentConfig& cfg, const CommandOptions& options, std::ostream& log) {
  const auto mode = *options.loss;
  const auto data = load_split(cfg.data, dataio::Split::kTrain);
  std::optional<classifier::ClassifierModel> cls;
  std::optional<saliency::WeightCache> cache;
  training::SemanticInputs semantic;
  if (mode == training::LossMode::kSp) {
    cls.emplace(load_classifier(options.out));
    require_file(options.out / kWeightCache, "weight cache", "extract-weights");
    try {
      cache.emplace(saliency::load_weight_cache(options.out / kWeightCache, data.content_id(), cls->hash()));
    } catch (const saliency::CacheMismatch& e) {
      throw StageError(std::string(e.what()) + " (re-run extract-weights)");
    }
    semantic = {&*cls, &*cache};
  }
  auto cfg_train = cfg.train;
  cfg_train.mode = mode;
  const auto result = training::train_jscc(cfg_train, data, semantic, [&](std::size_t e, double tl, double vl) {
    char line[96];
    std::snprintf(line, sizeof line, "%s epoch %zu train %.5f val %.5f\n", training::to_string(mode).c_str(), e, tl, vl);
    log << line << std::flush;
  });
  const std::string hash = cfg.hash();
  save_checkpoint(codec_checkpoint(result.encoder, result.decoder, mode, hash),
                  options.out / codec_checkpoint_name(mode));
  std::ofstream csv(options.out / train_log_name(mode), std::ios::binary | std::ios::trunc);
  result.log.write_csv(csv, hash);
  log << training::to_string(mode) << " best epoch " << result.best_epoch
      << (result.stopped_early ? " (stopped early)" : "") << '\n';
}

void evaluate(const ExperimentConfig& cfg, const CommandOptions& options, std::ostream& log) {
  const auto cls = load_classifier(options.out);
  const auto test = load_split(cfg.data, dataio::Split::kTest);
  const auto rows = evaluate_mode(cfg, options, *options.loss, cls, test, log);
  write_results(options.out / results_name(*options.loss), rows, cfg.hash());
}

void compare(const ExperimentConfig& cfg, const CommandOptions& options, std::ostream& log) {
  const auto cls = load_classifier(options.out);
  const auto test = load_split(cfg.data, dataio::Split::kTest);
  auto rows = evaluate_mode(cfg, options, training::LossMode::kSp, cls, test, log);
  const auto mse = evaluate_mode(cfg, options, training::LossMode::kMse, cls, test, log);
  rows.insert(rows.end(), mse.begin(), mse.end());
  write_results(options.out / kComparison, rows, cfg.hash());
  emit_plots(options.out / kComparison, options.out / kPlotDir);
}

void plot(const CommandOptions& options, std::ostream& log) {
  const fs::path csv = options.results.empty() ? options.out / kComparison : options.results;
  require_file(csv, "results CSV", "compare or evaluate");
  for (const auto& p : emit_plots(csv, options.out / kPlotDir)) log << "wrote " << p.string() << '\n';
}

}  // namespace

std::string codec_checkpoint_name(training::LossMode mode) { return "codec_" + training::to_string(mode) + ".ckpt"; }
std::string train_log_name(training::LossMode mode) { return "trainlog_" + training::to_string(mode) + ".csv"; }
std::string results_name(training::LossMode mode) { return "results_" + training::to_string(mode) + ".csv"; }

ExperimentConfig effective_config(const std::string& command, const CommandOptions& options) {
  if (options.config.empty()) throw UsageError(command + " requires --config PATH");
  ExperimentConfig cfg = load_config(options.config);
  const bool seed = options.seed.has_value(), snr = options.snr_db.has_value();
  if (command == "pretrain-classifier") {
    reject(snr, "--snr", command);
    if (seed) cfg.pretrain.seed = *options.seed;
  } else if (command == "extract-weights") {
    reject(seed, "--seed", command);
    reject(snr, "--snr", command);
  } else if (command == "train") {
    if (seed) cfg.train.seed = *options.seed;
    if (snr) cfg.train.snr_min_db = cfg.train.snr_max_db = *options.snr_db;
  } else if (command == "evaluate" || command == "compare") {
    if (seed) {
      for (std::size_t i = 0; i < cfg.eval_seeds.size(); ++i) cfg.eval_seeds[i] = *options.seed + i;
    }
    if (snr) cfg.eval_snr_db = {*options.snr_db};
  }
  cfg.validate();
  return cfg;
}

void run_command(const std::string& command, const CommandOptions& options, std::ostream& log) {
  if (std::find(kCommands.begin(), kCommands.end(), command) == kCommands.end()) {
    throw UsageError("unknown command '" + command + "'");
  }
  if (options.out.empty()) throw UsageError(command + " requires --out DIR");
  const bool needs_loss = command == "train" || command == "evaluate";
  if (needs_loss && !options.loss) throw UsageError(command + " requires --loss {sp|mse}");
  if (!needs_loss && options.loss) throw UsageError("--loss is not used by " + command);
  if (command != "plot" && !options.results.empty()) throw UsageError("--results is only used by plot");
  if (command == "plot") {
    reject(options.seed.has_value(), "--seed", command);
    reject(options.snr_db.has_value(), "--snr", command);
    fs::create_directories(options.out);
    plot(options, log);
    return;
  }
  const ExperimentConfig cfg = effective_config(command, options);
  fs::create_directories(options.out);
  log << command << " config_hash=" << cfg.hash() << '\n';
  if (command == "pretrain-classifier") {
    pretrain(cfg, options, log);
  } else if (command == "extract-weights") {
    extract(cfg, options, log);
  } else if (command == "train") {
    train(cfg, options, log);
  } else if (command == "evaluate") {
    evaluate(cfg, options, log);
  } else {
    compare(cfg, options, log);
  }
}

int run_command_status(const std::string& command, const CommandOptions& options, std::ostream& log,
                       std::ostream& err) {
  try {
    run_command(command, options, log);
    return 0;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace spjscc::harness
