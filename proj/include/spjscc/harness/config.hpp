#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "spjscc/classifier/classifier.hpp"
#include "spjscc/dataio/dataset.hpp"
#include "spjscc/training/training.hpp"

namespace spjscc::harness {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct DatasetSpec {
  std::string source = "synthetic";  // "synthetic" or "cifar10"
  std::filesystem::path cifar_dir;
  std::uint64_t train_seed = 1;
  std::uint64_t test_seed = 2;
  std::size_t train_count = 2000;  // synthetic size; a cap for cifar10
  std::size_t test_count = 500;
  std::size_t height = 32;
  std::size_t width = 32;
};

struct ExperimentConfig {
  DatasetSpec data;
  classifier::Architecture classifier;
  classifier::PretrainConfig pretrain;
  training::TrainConfig train;  // train.codec carries the codec dims
  std::vector<double> eval_snr_db{0.0, 5.0, 10.0, 15.0, 20.0};
  std::vector<std::uint64_t> eval_seeds{0, 1, 2, 3, 4};

  // Cross-field checks: image sizes agree, every section validates.
  void validate() const;

  // Every schema key in schema order as "key = value" lines.
  std::string canonical_text() const;

  // SHA-256 of canonical_text().
  std::string hash() const;
};

struct SchemaEntry {
  std::string key;
  std::string type;  // "int", "float", "string", "path", "int-list", "float-list"
  std::string description;
};

// Every accepted key, with its default taken from ExperimentConfig{}.
const std::vector<SchemaEntry>& config_schema();

// "key = value" lines, '#' starts a comment, unset keys keep their defaults.
// Unknown or repeated keys, malformed values and failed validation throw
// ConfigError naming the line or key.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);

// Applies one "key = value" assignment, as the parser does.
void set_config_value(ExperimentConfig& config, const std::string& key, const std::string& value);

// Training or test split as described by the config.
dataio::LabeledImageDataset load_split(const DatasetSpec& spec, dataio::Split split);

}  // namespace spjscc::harness
