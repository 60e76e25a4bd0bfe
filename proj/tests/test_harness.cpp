#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "spjscc/harness/checkpoint.hpp"
#include "spjscc/harness/commands.hpp"
#include "spjscc/harness/config.hpp"
#include "spjscc/harness/plots.hpp"

using namespace spjscc;
using namespace spjscc::harness;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "spjscc_test_harness" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const fs::path& p, const std::string& s) { std::ofstream(p, std::ios::binary) << s; }

const char* kTinyConfig =
    "data.train_count = 40\n"
    "data.test_count = 20\n"
    "data.height = 16\n"
    "data.width = 16\n"
    "classifier.conv_channels = 4,4,8\n"
    "classifier.epochs = 1\n"
    "codec.features = 8\n"
    "codec.selective = 4\n"
    "codec.nonselective = 4\n"
    "train.epochs = 1\n"
    "train.batch = 16\n"
    "eval.snr_db = 0,10\n"
    "eval.seeds = 3,4\n";

}  // namespace

TEST_CASE("config: defaults, comments and canonical round trip") {
  const auto d = parse_config("# nothing set\n\n");
  CHECK(d.data.train_count == 2000);
  CHECK(d.eval_seeds.size() == 5);
  CHECK(d.train.codec.selective == 8);

  const auto c = parse_config(std::string(kTinyConfig) + "train.lambda_rate = 0.25  # trailing comment\n");
  CHECK(c.classifier.conv_channels == std::vector<std::size_t>{4, 4, 8});
  CHECK(c.classifier.height == 16);
  CHECK(c.train.codec.width == 16);
  CHECK(c.train.lambda_rate == 0.25f);
  CHECK(c.eval_snr_db == std::vector<double>{0.0, 10.0});
  const auto again = parse_config(c.canonical_text());
  CHECK(again.canonical_text() == c.canonical_text());
  CHECK(again.hash() == c.hash());
  CHECK(c.hash() != d.hash());
}

TEST_CASE("config: schema covers every canonical key") {
  const std::string text = ExperimentConfig{}.canonical_text();
  std::size_t lines = 0;
  for (char ch : text) lines += ch == '\n';
  CHECK(lines == config_schema().size());
  for (const auto& e : config_schema()) CHECK(text.find(e.key + " = ") != std::string::npos);
}

TEST_CASE("config: rejects unknown keys, repeats, bad values and invariant breaks") {
  CHECK_THROWS_WITH_AS(parse_config("train.epochz = 3\n"), doctest::Contains("unknown key 'train.epochz'"),
                       ConfigError);
  CHECK_THROWS_WITH_AS(parse_config("train.epochs = 3\ntrain.epochs = 4\n"), doctest::Contains("line 2"),
                       ConfigError);
  CHECK_THROWS_WITH_AS(parse_config("train.epochs = three\n"), doctest::Contains("train.epochs"), ConfigError);
  CHECK_THROWS_AS(parse_config("train.lr = 1e-3x\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("no equals sign\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("data.source = imagenet\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("data.source = cifar10\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("data.height = 30\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("eval.seeds = \n"), ConfigError);
  CHECK_THROWS_AS(parse_config("train.snr_min_db = 30\n"), ConfigError);
}

TEST_CASE("checkpoint: save, load, save is byte-identical") {
  classifier::Architecture arch;
  arch.conv_channels = {4, 8, 8};
  const classifier::ClassifierModel model(arch, classifier::init_params(arch, 9));
  const auto dir = temp_dir("ckpt");
  save_checkpoint(classifier_checkpoint(model, "h1"), dir / "a.ckpt");
  const auto loaded = load_checkpoint(dir / "a.ckpt");
  CHECK(loaded.metadata.at("config_hash") == "h1");
  save_checkpoint(loaded, dir / "b.ckpt");
  CHECK(read_file(dir / "a.ckpt") == read_file(dir / "b.ckpt"));
}

TEST_CASE("checkpoint: classifier round trip gives bit-identical outputs on probes") {
  classifier::Architecture arch;
  arch.conv_channels = {4, 8, 8};
  const classifier::ClassifierModel model(arch, classifier::init_params(arch, 10));
  const auto back = classifier_from(parse_checkpoint(serialize_checkpoint(classifier_checkpoint(model, "h"))));
  CHECK(back.architecture() == model.architecture());
  CHECK(back.hash() == model.hash());
  const auto probes = dataio::generate_shapes(77, 10, 32, 32).head(5);
  const auto a = classifier::perceive(model, probes.images);
  const auto b = classifier::perceive(back, probes.images);
  for (std::size_t i = 0; i < 5; ++i) CHECK(a[i].logits == b[i].logits);
}

TEST_CASE("checkpoint: codec round trip gives bit-identical reconstructions") {
  jscc::CodecConfig k;
  k.height = k.width = 16;
  k.features = 8;
  k.selective = k.nonselective = 4;
  const jscc::EncoderModel enc(k, jscc::init_encoder_params(k, 3));
  const jscc::DecoderModel dec(k, jscc::init_decoder_params(k, 4));
  const auto back = codec_from(parse_checkpoint(serialize_checkpoint(codec_checkpoint(enc, dec, training::LossMode::kSp, "h"))));
  CHECK(back.mode == training::LossMode::kSp);
  CHECK(back.encoder.config() == k);
  const auto probes = dataio::generate_shapes(78, 10, 16, 16).head(5);
  const auto a = jscc::transmit(enc, dec, probes.images, {5.0, 1, true});
  const auto b = jscc::transmit(back.encoder, back.decoder, probes.images, {5.0, 1, true});
  CHECK(a.reconstruction == b.reconstruction);
}

TEST_CASE("checkpoint: truncation, version and hash failures") {
  classifier::Architecture arch;
  arch.conv_channels = {4, 4, 4};
  const auto bytes = serialize_checkpoint(classifier_checkpoint(
      classifier::ClassifierModel(arch, classifier::init_params(arch, 1)), "h"));
  CHECK_THROWS_WITH_AS(parse_checkpoint(bytes.substr(0, bytes.size() - 6)), doctest::Contains("offset"),
                       CheckpointError);
  std::string v2 = bytes;
  v2.replace(v2.find(" 1\n"), 3, " 2\n");
  CHECK_THROWS_WITH_AS(parse_checkpoint(v2), doctest::Contains("version 2"), CheckpointError);
  std::string flipped = bytes;
  flipped.back() = static_cast<char>(flipped.back() ^ 0x40);
  CHECK_THROWS_WITH_AS(parse_checkpoint(flipped), doctest::Contains("hash"), CheckpointError);
  CHECK_THROWS_AS(parse_checkpoint("not a checkpoint\n"), CheckpointError);
  Checkpoint bad;
  bad.kind = "has space";
  CHECK_THROWS_AS(serialize_checkpoint(bad), CheckpointError);
  CHECK_THROWS_AS(codec_from(parse_checkpoint(bytes)), CheckpointError);
}

TEST_CASE("plots: one polyline per mode with one vertex per SNR") {
  std::vector<metrics::EvalReport> rows;
  for (const char* mode : {"mse", "sp"}) {
    for (double snr : {0.0, 5.0, 10.0, 15.0, 20.0}) {
      for (const char* seed : {"0", "1", "mean"}) {
        rows.push_back({std::string(mode) + "-x", mode, snr, seed, 0.5, 0.1 + snr / 40, 0.1, 10 + snr, 0.5});
      }
    }
  }
  const auto dir = temp_dir("plots");
  {
    std::ofstream out(dir / "r.csv");
    metrics::write_results_csv(out, rows, "abc");
  }
  const auto files = emit_plots(dir / "r.csv", dir / "svg");
  REQUIRE(files.size() == kPlotMetrics.size());
  for (const auto& f : files) {
    const std::string svg = read_file(f);
    std::size_t lines = 0, pos = 0;
    while ((pos = svg.find("<polyline", pos)) != std::string::npos) {
      ++lines;
      const auto start = svg.find("points=\"", pos) + 8;
      const auto end = svg.find('"', start);
      const std::string pts = svg.substr(start, end - start);
      CHECK(std::count(pts.begin(), pts.end(), ',') == 5);
      pos = end;
    }
    CHECK(lines == 2);
    CHECK(svg.find("data-mode=\"mse\"") < svg.find("data-mode=\"sp\""));
    CHECK(svg.find("SNR (dB)") != std::string::npos);
    CHECK(svg.find("config_hash=abc") != std::string::npos);
  }
  const std::string first = read_file(files[0]);
  emit_plots(dir / "r.csv", dir / "svg");
  CHECK(read_file(files[0]) == first);
}

TEST_CASE("plots: empty CSV and missing metric column are rejected") {
  const auto dir = temp_dir("plots_bad");
  write_file(dir / "empty.csv", std::string(metrics::kResultsHeader) + "\n");
  CHECK_THROWS_WITH_AS(emit_plots(dir / "empty.csv", dir), doctest::Contains("no rows"), std::invalid_argument);
  write_file(dir / "nopsnr.csv", "run_id,loss_mode,snr_db,seed,cpp,acc,f1,ssim\nr,sp,0,0,0.5,0.5,0.5,0.5\n");
  CHECK_THROWS_WITH_AS(emit_plots(dir / "nopsnr.csv", dir), doctest::Contains("psnr_db"), std::invalid_argument);
}

TEST_CASE("commands: dependency order and usage errors") {
  const auto dir = temp_dir("order");
  write_file(dir / "tiny.cfg", kTinyConfig);
  CommandOptions o;
  o.config = dir / "tiny.cfg";
  o.out = dir / "out";
  std::ostringstream log, err;
  CHECK(run_command_status("extract-weights", o, log, err) == 1);
  CHECK(err.str().find("classifier checkpoint") != std::string::npos);

  CommandOptions no_config;
  no_config.out = dir / "out";
  no_config.loss = training::LossMode::kSp;
  std::ostringstream err2;
  CHECK(run_command_status("train", no_config, log, err2) == 2);
  CHECK(err2.str().find("--config") != std::string::npos);

  CommandOptions no_loss = o;
  CHECK_THROWS_AS(run_command("train", no_loss, log), UsageError);
  CommandOptions stray_snr = o;
  stray_snr.snr_db = 5.0;
  CHECK_THROWS_AS(run_command("pretrain-classifier", stray_snr, log), UsageError);
  CHECK_THROWS_AS(run_command("bogus", o, log), UsageError);

  write_file(dir / "bad.cfg", "train.nonsense = 1\n");
  CommandOptions bad = o;
  bad.config = dir / "bad.cfg";
  std::ostringstream err3;
  CHECK(run_command_status("pretrain-classifier", bad, log, err3) == 2);
  CHECK(err3.str().find("train.nonsense") != std::string::npos);
}

TEST_CASE("commands: flag overrides change the config hash") {
  const auto dir = temp_dir("overrides");
  write_file(dir / "tiny.cfg", kTinyConfig);
  CommandOptions o;
  o.config = dir / "tiny.cfg";
  const auto base = effective_config("evaluate", o);
  o.seed = 10;
  o.snr_db = 5.0;
  const auto eval = effective_config("evaluate", o);
  CHECK(eval.eval_seeds == std::vector<std::uint64_t>{10, 11});
  CHECK(eval.eval_snr_db == std::vector<double>{5.0});
  CHECK(eval.hash() != base.hash());
  const auto train = effective_config("train", o);
  CHECK(train.train.seed == 10);
  CHECK(train.train.snr_min_db == 5.0);
  CHECK(train.train.snr_max_db == 5.0);
}

TEST_CASE("commands: full pipeline is byte-identical across re-runs") {
  const auto dir = temp_dir("pipeline");
  write_file(dir / "tiny.cfg", kTinyConfig);
  auto run_all = [&](const fs::path& out) {
    CommandOptions o;
    o.config = dir / "tiny.cfg";
    o.out = out;
    std::ostringstream log;
    run_command("pretrain-classifier", o, log);
    run_command("extract-weights", o, log);
    CommandOptions sp = o, mse = o;
    sp.loss = training::LossMode::kSp;
    mse.loss = training::LossMode::kMse;
    run_command("train", sp, log);
    run_command("train", mse, log);
    run_command("evaluate", sp, log);
    run_command("compare", o, log);
    run_command("plot", o, log);
  };
  run_all(dir / "a");
  run_all(dir / "b");
  for (const char* name : {"classifier_log.csv", "trainlog_sp.csv", "trainlog_mse.csv", "results_sp.csv",
                           "comparison.csv", "classifier.ckpt", "codec_sp.ckpt", "codec_mse.ckpt", "weights.cache",
                           "plots/acc.svg"}) {
    CAPTURE(name);
    const std::string a = read_file(dir / "a" / name);
    CHECK_FALSE(a.empty());
    CHECK(a == read_file(dir / "b" / name));
  }
  std::ifstream csv(dir / "a" / "comparison.csv");
  const auto rows = metrics::read_results_csv(csv);
  CHECK(rows.size() == 2 * 2 * 3);
  const std::string svg = read_file(dir / "a" / "plots" / "psnr_db.svg");
  CHECK(svg.find("data-mode=\"sp\"") != std::string::npos);
  CHECK(svg.find("data-mode=\"mse\"") != std::string::npos);
}

TEST_CASE("commands: sp training needs a matching weight cache") {
  const auto dir = temp_dir("cache");
  write_file(dir / "tiny.cfg", kTinyConfig);
  CommandOptions o;
  o.config = dir / "tiny.cfg";
  o.out = dir / "out";
  std::ostringstream log;
  run_command("pretrain-classifier", o, log);
  CommandOptions sp = o;
  sp.loss = training::LossMode::kSp;
  CHECK_THROWS_WITH_AS(run_command("train", sp, log), doctest::Contains("extract-weights"), StageError);
  run_command("extract-weights", o, log);
  CommandOptions reseeded = o;
  reseeded.seed = 99;
  run_command("pretrain-classifier", reseeded, log);
  CHECK_THROWS_WITH_AS(run_command("train", sp, log), doctest::Contains("extract-weights"), StageError);
}
