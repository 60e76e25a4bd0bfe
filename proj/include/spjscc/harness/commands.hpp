#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "spjscc/harness/config.hpp"

namespace spjscc::harness {

// Bad or missing flags; the CLI maps this to exit status 2.
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A missing prerequisite artifact or a violated invariant; exit status 1.
class StageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CommandOptions {
  std::filesystem::path config;  // required except for plot
  std::filesystem::path out;     // every artifact is read from and written under here
  std::optional<std::uint64_t> seed;
  std::optional<double> snr_db;
  std::optional<training::LossMode> loss;
  std::filesystem::path results;  // plot input; defaults to <out>/comparison.csv
};

// Artifact names under --out.
inline constexpr const char* kClassifierCheckpoint = "classifier.ckpt";
inline constexpr const char* kClassifierLog = "classifier_log.csv";
inline constexpr const char* kWeightCache = "weights.cache";
inline constexpr const char* kComparison = "comparison.csv";
inline constexpr const char* kPlotDir = "plots";
std::string codec_checkpoint_name(training::LossMode mode);
std::string train_log_name(training::LossMode mode);
std::string results_name(training::LossMode mode);

// The config after applying the command's flag overrides:
//   pretrain-classifier  --seed -> classifier.seed
//   train                --seed -> train.seed, --snr -> fixed training SNR
//   evaluate, compare    --seed -> eval seeds become N, N+1, ...,
//                        --snr -> eval.snr_db = {snr}
// Flags a command does not use raise UsageError.
ExperimentConfig effective_config(const std::string& command, const CommandOptions& options);

inline const std::vector<std::string> kCommands{"pretrain-classifier", "extract-weights", "train",
                                                "evaluate",            "compare",         "plot"};

// Runs one stage, writing progress to `log`. Throws UsageError, StageError,
// ConfigError or the underlying module errors.
void run_command(const std::string& command, const CommandOptions& options, std::ostream& log);

// Exit status wrapper: 0 on success, 2 on usage or config errors, 1 on any
// other failure, with one diagnostic line on `err`.
int run_command_status(const std::string& command, const CommandOptions& options, std::ostream& log,
                       std::ostream& err);

}  // namespace spjscc::harness
