#pragma once

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>

#include "spjscc/classifier/classifier.hpp"
#include "spjscc/jscc/codec.hpp"
#include "spjscc/numcore/params.hpp"
#include "spjscc/training/training.hpp"

namespace spjscc::harness {

inline constexpr int kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// On disk: a text manifest followed by the float blob.
//   spjscc-checkpoint <version>
//   kind <kind>
//   meta <key> <value>                                  (sorted by key)
//   tensor <name> <d0>x<d1>... <offset> <bytes>          (blob-relative)
//   hash <sha256 of the blob>
//   end
//   <little-endian float32 blob>
// Names, keys and values may not contain whitespace.
struct Checkpoint {
  std::string kind;
  std::map<std::string, std::string> metadata;
  numcore::ParamSet params;
};

std::string serialize_checkpoint(const Checkpoint& checkpoint);
// Throws CheckpointError on a version mismatch, a malformed manifest, a blob
// that is shorter than the table says (with the failing offset), or a hash
// mismatch.
Checkpoint parse_checkpoint(const std::string& bytes);

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Classifier: architecture in metadata, kind "classifier".
Checkpoint classifier_checkpoint(const classifier::ClassifierModel& model, const std::string& config_hash);
classifier::ClassifierModel classifier_from(const Checkpoint& checkpoint);

// Codec: encoder params prefixed "encoder/", decoder params "decoder/",
// codec dims and loss mode in metadata, kind "jscc".
struct CodecBundle {
  jscc::EncoderModel encoder;
  jscc::DecoderModel decoder;
  training::LossMode mode;
};
Checkpoint codec_checkpoint(const jscc::EncoderModel& encoder, const jscc::DecoderModel& decoder,
                            training::LossMode mode, const std::string& config_hash);
CodecBundle codec_from(const Checkpoint& checkpoint);

}  // namespace spjscc::harness
