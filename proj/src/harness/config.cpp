#include "spjscc/harness/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "spjscc/numcore/digest.hpp"

namespace spjscc::harness {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) {
    throw ConfigError("config: '" + key + "' expects a nonnegative integer, got '" + v + "'");
  }
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) {
    throw ConfigError("config: '" + key + "' expects a number, got '" + v + "'");
  }
  return out;
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream in(v);
  std::string item;
  while (std::getline(in, item, ',')) out.push_back(trim(item));
  return out;
}

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

template <typename T>
std::string join(const std::vector<T>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ',';
    if constexpr (std::is_floating_point_v<T>) {
      out += fmt_double(xs[i]);
    } else {
      out += std::to_string(xs[i]);
    }
  }
  return out;
}

struct Field {
  SchemaEntry entry;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

#define SPJSCC_UINT(KEY, MEMBER, DESC)                                                               \
  Field {                                                                                            \
    {KEY, "int", DESC}, [](ExperimentConfig& c, const std::string& v) { c.MEMBER = parse_uint(KEY, v); }, \
        [](const ExperimentConfig& c) { return std::to_string(c.MEMBER); }                           \
  }
#define SPJSCC_FLOAT(KEY, MEMBER, TYPE, DESC)                                                            \
  Field {                                                                                                \
    {KEY, "float", DESC},                                                                                \
        [](ExperimentConfig& c, const std::string& v) { c.MEMBER = static_cast<TYPE>(parse_double(KEY, v)); }, \
        [](const ExperimentConfig& c) { return fmt_double(c.MEMBER); }                                   \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      Field{{"data.source", "string", "synthetic | cifar10"},
            [](ExperimentConfig& c, const std::string& v) {
              if (v != "synthetic" && v != "cifar10") {
                throw ConfigError("config: 'data.source' must be synthetic or cifar10, got '" + v + "'");
              }
              c.data.source = v;
            },
            [](const ExperimentConfig& c) { return c.data.source; }},
      Field{{"data.cifar_dir", "path", "directory holding the CIFAR-10 binary batches"},
            [](ExperimentConfig& c, const std::string& v) { c.data.cifar_dir = v; },
            [](const ExperimentConfig& c) { return c.data.cifar_dir.string(); }},
      SPJSCC_UINT("data.train_seed", data.train_seed, "synthetic training-set seed"),
      SPJSCC_UINT("data.test_seed", data.test_seed, "synthetic test-set seed"),
      SPJSCC_UINT("data.train_count", data.train_count, "training images (cap for cifar10)"),
      SPJSCC_UINT("data.test_count", data.test_count, "test images (cap for cifar10)"),
      SPJSCC_UINT("data.height", data.height, "image height"),
      SPJSCC_UINT("data.width", data.width, "image width"),
      Field{{"classifier.conv_channels", "int-list", "output channels of each conv+pool stage"},
            [](ExperimentConfig& c, const std::string& v) {
              c.classifier.conv_channels.clear();
              for (const auto& x : split_list(v)) {
                c.classifier.conv_channels.push_back(parse_uint("classifier.conv_channels", x));
              }
            },
            [](const ExperimentConfig& c) { return join(c.classifier.conv_channels); }},
      SPJSCC_UINT("classifier.epochs", pretrain.epochs, "pretraining epochs"),
      SPJSCC_FLOAT("classifier.lr", pretrain.lr, float, "pretraining Adam learning rate"),
      SPJSCC_UINT("classifier.batch", pretrain.batch, "pretraining batch size"),
      SPJSCC_UINT("classifier.seed", pretrain.seed, "init and shuffling seed"),
      SPJSCC_UINT("codec.features", train.codec.features, "width of the semantic and channel coders"),
      SPJSCC_UINT("codec.selective", train.codec.selective, "selective channels F_s"),
      SPJSCC_UINT("codec.nonselective", train.codec.nonselective, "non-selective channels F_n"),
      SPJSCC_UINT("codec.adapt_hidden", train.codec.adapt_hidden, "hidden units of the SNR-adaptive MLPs"),
      SPJSCC_UINT("codec.policy_hidden", train.codec.policy_hidden, "hidden units of the policy MLP"),
      SPJSCC_FLOAT("codec.policy_bias_init", train.codec.policy_bias_init, float, "initial policy logit bias"),
      SPJSCC_FLOAT("train.lambda_rate", train.lambda_rate, float, "rate penalty weight"),
      SPJSCC_UINT("train.epochs", train.epochs, "maximum epochs"),
      SPJSCC_UINT("train.batch", train.batch, "batch size"),
      SPJSCC_FLOAT("train.lr", train.lr, float, "Adam learning rate"),
      SPJSCC_UINT("train.seed", train.seed, "init, shuffling, noise and gate seed"),
      SPJSCC_FLOAT("train.snr_min_db", train.snr_min_db, double, "lower end of the per-batch SNR draw"),
      SPJSCC_FLOAT("train.snr_max_db", train.snr_max_db, double, "upper end of the per-batch SNR draw"),
      SPJSCC_FLOAT("train.temperature_start", train.temperature_start, float, "gate temperature at step 0"),
      SPJSCC_FLOAT("train.temperature_end", train.temperature_end, float, "gate temperature at the last step"),
      SPJSCC_UINT("train.patience", train.patience, "epochs without validation improvement before stopping"),
      SPJSCC_FLOAT("train.validation_fraction", train.validation_fraction, double, "held-out share of training images"),
      SPJSCC_FLOAT("train.validation_snr_db", train.validation_snr_db, double, "SNR of the validation pass"),
      Field{{"eval.snr_db", "float-list", "evaluation SNR grid"},
            [](ExperimentConfig& c, const std::string& v) {
              c.eval_snr_db.clear();
              for (const auto& x : split_list(v)) c.eval_snr_db.push_back(parse_double("eval.snr_db", x));
            },
            [](const ExperimentConfig& c) { return join(c.eval_snr_db); }},
      Field{{"eval.seeds", "int-list", "channel-noise seeds per evaluation cell"},
            [](ExperimentConfig& c, const std::string& v) {
              c.eval_seeds.clear();
              for (const auto& x : split_list(v)) c.eval_seeds.push_back(parse_uint("eval.seeds", x));
            },
            [](const ExperimentConfig& c) { return join(c.eval_seeds); }},
  };
  return table;
}

#undef SPJSCC_UINT
#undef SPJSCC_FLOAT

}  // namespace

void ExperimentConfig::validate() const {
  try {
    if (data.source == "cifar10" && data.cifar_dir.empty()) {
      throw ConfigError("data.cifar_dir is required when data.source = cifar10");
    }
    if (data.source == "cifar10" && (data.height != 32 || data.width != 32)) {
      throw ConfigError("cifar10 images are 32x32");
    }
    if (data.train_count == 0 || data.test_count == 0) throw ConfigError("data counts must be positive");
    if (classifier.height != data.height || classifier.width != data.width) {
      throw ConfigError("classifier image size differs from data size");
    }
    if (train.codec.height != data.height || train.codec.width != data.width) {
      throw ConfigError("codec image size differs from data size");
    }
    classifier.validate();
    if (pretrain.epochs == 0 || pretrain.batch == 0 || !(pretrain.lr > 0)) {
      throw ConfigError("classifier.epochs, classifier.batch and classifier.lr must be positive");
    }
    train.validate();
    if (eval_snr_db.empty()) throw ConfigError("eval.snr_db is empty");
    if (eval_seeds.empty()) throw ConfigError("eval.seeds is empty");
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

std::string ExperimentConfig::canonical_text() const {
  std::string out;
  for (const auto& f : fields()) out += f.entry.key + " = " + f.get(*this) + "\n";
  return out;
}

std::string ExperimentConfig::hash() const { return numcore::sha256_hex(canonical_text()); }

const std::vector<SchemaEntry>& config_schema() {
  static const std::vector<SchemaEntry> schema = [] {
    std::vector<SchemaEntry> s;
    for (const auto& f : fields()) s.push_back(f.entry);
    return s;
  }();
  return schema;
}

void set_config_value(ExperimentConfig& config, const std::string& key, const std::string& value) {
  for (const auto& f : fields()) {
    if (f.entry.key == key) {
      f.set(config, value);
      config.classifier.height = config.train.codec.height = config.data.height;
      config.classifier.width = config.train.codec.width = config.data.width;
      return;
    }
  }
  throw ConfigError("config: unknown key '" + key + "'");
}

ExperimentConfig parse_config(const std::string& text) {
  ExperimentConfig config;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    if (!seen.insert(key).second) {
      throw ConfigError("config line " + std::to_string(line_no) + ": '" + key + "' set twice");
    }
    try {
      set_config_value(config, key, trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  config.validate();
  return config;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot read " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

dataio::LabeledImageDataset load_split(const DatasetSpec& spec, dataio::Split split) {
  const bool train = split == dataio::Split::kTrain;
  const std::size_t count = train ? spec.train_count : spec.test_count;
  if (spec.source == "cifar10") return dataio::load_cifar10_dir(spec.cifar_dir, split).head(count);
  return dataio::generate_shapes(train ? spec.train_seed : spec.test_seed, count, spec.height, spec.width, split);
}

}  // namespace spjscc::harness
