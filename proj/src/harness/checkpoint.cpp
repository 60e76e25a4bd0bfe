#include "spjscc/harness/checkpoint.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "spjscc/numcore/binary_io.hpp"
#include "spjscc/numcore/digest.hpp"

namespace spjscc::harness {

namespace {

constexpr const char* kMagic = "spjscc-checkpoint";

void require_token(const std::string& what, const std::string& s) {
  if (s.empty() || s.find_first_of(" \t\r\n") != std::string::npos) {
    throw CheckpointError("checkpoint: " + what + " '" + s + "' is empty or contains whitespace");
  }
}

std::string shape_text(const numcore::Shape& shape) {
  std::string out;
  for (std::size_t i = 0; i < shape.size(); ++i) out += (i ? "x" : "") + std::to_string(shape[i]);
  return shape.empty() ? "scalar" : out;
}

numcore::Shape parse_shape(const std::string& s) {
  numcore::Shape shape;
  if (s == "scalar") return shape;
  std::stringstream in(s);
  std::string d;
  while (std::getline(in, d, 'x')) shape.push_back(std::stoull(d));
  return shape;
}

std::string join_sizes(const std::vector<std::size_t>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? "," : "") + std::to_string(xs[i]);
  return out;
}

std::size_t meta_size(const Checkpoint& c, const std::string& key) {
  const auto it = c.metadata.find(key);
  if (it == c.metadata.end()) throw CheckpointError("checkpoint: metadata '" + key + "' missing");
  try {
    return std::stoull(it->second);
  } catch (const std::exception&) {
    throw CheckpointError("checkpoint: metadata '" + key + "' is not an integer");
  }
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& checkpoint) {
  require_token("kind", checkpoint.kind);
  std::string blob;
  std::ostringstream table;
  for (const auto& [name, t] : checkpoint.params.entries()) {
    require_token("tensor name", name);
    const std::size_t offset = blob.size();
    numcore::append_f32_le(blob, t.values());
    table << "tensor " << name << ' ' << shape_text(t.shape()) << ' ' << offset << ' ' << blob.size() - offset << '\n';
  }
  std::ostringstream out;
  out << kMagic << ' ' << kCheckpointVersion << "\nkind " << checkpoint.kind << '\n';
  for (const auto& [k, v] : checkpoint.metadata) {
    require_token("metadata key", k);
    require_token("metadata value", v);
    out << "meta " << k << ' ' << v << '\n';
  }
  out << table.str() << "hash " << numcore::sha256_hex(blob) << "\nend\n";
  return out.str() + blob;
}

Checkpoint parse_checkpoint(const std::string& bytes) {
  std::size_t pos = 0;
  auto next_line = [&]() {
    const auto nl = bytes.find('\n', pos);
    if (nl == std::string::npos) throw CheckpointError("checkpoint: manifest ends without 'end'");
    std::string line = bytes.substr(pos, nl - pos);
    pos = nl + 1;
    return line;
  };
  std::istringstream head(next_line());
  std::string magic;
  int version = -1;
  head >> magic >> version;
  if (magic != kMagic) throw CheckpointError("checkpoint: not a checkpoint file");
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint: format version " + std::to_string(version) + " is not supported (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint c;
  struct Row {
    std::string name;
    numcore::Shape shape;
    std::size_t offset, bytes;
  };
  std::vector<Row> rows;
  std::string hash;
  for (std::string line = next_line(); line != "end"; line = next_line()) {
    std::istringstream in(line);
    std::string tag;
    in >> tag;
    if (tag == "kind") {
      in >> c.kind;
    } else if (tag == "meta") {
      std::string k, v;
      in >> k >> v;
      c.metadata[k] = v;
    } else if (tag == "tensor") {
      Row r;
      std::string shape;
      if (!(in >> r.name >> shape >> r.offset >> r.bytes)) throw CheckpointError("checkpoint: bad tensor line: " + line);
      r.shape = parse_shape(shape);
      rows.push_back(std::move(r));
    } else if (tag == "hash") {
      in >> hash;
    } else {
      throw CheckpointError("checkpoint: unknown manifest line: " + line);
    }
  }
  const std::string_view blob(bytes.data() + pos, bytes.size() - pos);
  for (const auto& r : rows) {
    const std::size_t n = numcore::element_count(r.shape);
    if (r.bytes != n * 4) throw CheckpointError("checkpoint: tensor '" + r.name + "' byte length disagrees with shape");
    if (r.offset + r.bytes > blob.size()) {
      throw CheckpointError("checkpoint: blob truncated, tensor '" + r.name + "' needs bytes up to offset " +
                            std::to_string(r.offset + r.bytes) + " but the blob ends at offset " +
                            std::to_string(blob.size()));
    }
  }
  if (numcore::sha256_hex(blob) != hash) throw CheckpointError("checkpoint: content hash mismatch");
  for (const auto& r : rows) {
    numcore::Tensor<float> t(r.shape);
    numcore::read_f32_le(blob.data() + r.offset, t.values());
    c.params.add(r.name, std::move(t));
  }
  return c;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  const std::string bytes = serialize_checkpoint(checkpoint);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("checkpoint: cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("checkpoint: write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("checkpoint: cannot read " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_checkpoint(buf.str());
}

Checkpoint classifier_checkpoint(const classifier::ClassifierModel& model, const std::string& config_hash) {
  const auto& a = model.architecture();
  Checkpoint c;
  c.kind = "classifier";
  c.metadata = {{"config_hash", config_hash},
                {"in_channels", std::to_string(a.in_channels)},
                {"height", std::to_string(a.height)},
                {"width", std::to_string(a.width)},
                {"conv_channels", join_sizes(a.conv_channels)},
                {"classes", std::to_string(a.classes)}};
  c.params = model.params();
  return c;
}

classifier::ClassifierModel classifier_from(const Checkpoint& checkpoint) {
  if (checkpoint.kind != "classifier") {
    throw CheckpointError("checkpoint: expected kind classifier, found " + checkpoint.kind);
  }
  classifier::Architecture a;
  a.in_channels = meta_size(checkpoint, "in_channels");
  a.height = meta_size(checkpoint, "height");
  a.width = meta_size(checkpoint, "width");
  a.classes = meta_size(checkpoint, "classes");
  a.conv_channels.clear();
  const auto it = checkpoint.metadata.find("conv_channels");
  if (it == checkpoint.metadata.end()) throw CheckpointError("checkpoint: metadata 'conv_channels' missing");
  std::stringstream in(it->second);
  std::string d;
  while (std::getline(in, d, ',')) a.conv_channels.push_back(std::stoull(d));
  return classifier::ClassifierModel(a, checkpoint.params);
}

Checkpoint codec_checkpoint(const jscc::EncoderModel& encoder, const jscc::DecoderModel& decoder,
                            training::LossMode mode, const std::string& config_hash) {
  const auto& k = encoder.config();
  char bias[32];
  std::snprintf(bias, sizeof bias, "%.9g", static_cast<double>(k.policy_bias_init));
  Checkpoint c;
  c.kind = "jscc";
  c.metadata = {{"config_hash", config_hash},
                {"loss_mode", training::to_string(mode)},
                {"height", std::to_string(k.height)},
                {"width", std::to_string(k.width)},
                {"features", std::to_string(k.features)},
                {"selective", std::to_string(k.selective)},
                {"nonselective", std::to_string(k.nonselective)},
                {"adapt_hidden", std::to_string(k.adapt_hidden)},
                {"policy_hidden", std::to_string(k.policy_hidden)},
                {"policy_bias_init", bias}};
  for (const auto& [n, t] : encoder.params().entries()) c.params.add("encoder/" + n, t);
  for (const auto& [n, t] : decoder.params().entries()) c.params.add("decoder/" + n, t);
  return c;
}

CodecBundle codec_from(const Checkpoint& checkpoint) {
  if (checkpoint.kind != "jscc") throw CheckpointError("checkpoint: expected kind jscc, found " + checkpoint.kind);
  jscc::CodecConfig k;
  k.height = meta_size(checkpoint, "height");
  k.width = meta_size(checkpoint, "width");
  k.features = meta_size(checkpoint, "features");
  k.selective = meta_size(checkpoint, "selective");
  k.nonselective = meta_size(checkpoint, "nonselective");
  k.adapt_hidden = meta_size(checkpoint, "adapt_hidden");
  k.policy_hidden = meta_size(checkpoint, "policy_hidden");
  const auto bias = checkpoint.metadata.find("policy_bias_init");
  const auto mode = checkpoint.metadata.find("loss_mode");
  if (bias == checkpoint.metadata.end() || mode == checkpoint.metadata.end()) {
    throw CheckpointError("checkpoint: codec metadata incomplete");
  }
  k.policy_bias_init = std::stof(bias->second);
  numcore::ParamSet enc, dec;
  for (const auto& [n, t] : checkpoint.params.entries()) {
    if (n.rfind("encoder/", 0) == 0) {
      enc.add(n.substr(8), t);
    } else if (n.rfind("decoder/", 0) == 0) {
      dec.add(n.substr(8), t);
    } else {
      throw CheckpointError("checkpoint: tensor '" + n + "' belongs to neither encoder nor decoder");
    }
  }
  return CodecBundle{jscc::EncoderModel(k, std::move(enc)), jscc::DecoderModel(k, std::move(dec)),
                     training::parse_loss_mode(mode->second)};
}

}  // namespace spjscc::harness
