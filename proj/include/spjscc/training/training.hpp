#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "spjscc/classifier/classifier.hpp"
#include "spjscc/jscc/codec.hpp"
#include "spjscc/saliency/saliency.hpp"

namespace spjscc::training {

using numcore::NodeId;
using numcore::Tape;
using numcore::Tensor;

enum class LossMode { kSp, kMse };

std::string to_string(LossMode mode);
// "sp" or "mse"; throws std::invalid_argument otherwise.
LossMode parse_loss_mode(const std::string& text);

// sum_i (x_i - x'_i)^2 per image, averaged over the batch.
template <typename T>
NodeId loss_mse(Tape<T>& tape, NodeId x, NodeId reconstruction);

// sum_i w'_i (x'_i - x_i)^2 per image, averaged over the batch. `weights`
// has the batch shape.
template <typename T>
NodeId loss_sp(Tape<T>& tape, NodeId x, NodeId reconstruction, NodeId weights);

// distortion + lambda * mean(mask).
template <typename T>
NodeId total_loss(Tape<T>& tape, NodeId distortion, NodeId mask, T lambda_rate);

double loss_mse(const Tensor<float>& x, const Tensor<float>& reconstruction);
// Rejects weight maps that are negative or not unit-norm per image.
double loss_sp(const Tensor<float>& x, const Tensor<float>& reconstruction, const Tensor<float>& weights);
double total_loss(double distortion, double mask_mean, double lambda_rate);

struct TrainConfig {
  LossMode mode = LossMode::kSp;
  float lambda_rate = 0.0f;
  std::size_t epochs = 30;
  std::size_t batch = 32;
  float lr = 1e-3f;
  std::uint64_t seed = 1;
  double snr_min_db = 0.0;
  double snr_max_db = 20.0;
  float temperature_start = 5.0f;
  float temperature_end = 0.5f;
  std::size_t patience = 5;            // epochs without validation improvement
  double validation_fraction = 0.1;    // held out from the training images
  double validation_snr_db = 10.0;
  jscc::CodecConfig codec;

  void validate() const;
};

// Linear from start to end over `total` steps.
float temperature_at(const TrainConfig& config, std::size_t step, std::size_t total);

struct TrainStep {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double loss = 0.0;
  double distortion = 0.0;
  double rate = 0.0;       // lambda * mean(mask)
  double mask_mean = 0.0;
  double snr_db = 0.0;
};

struct TrainLog {
  std::vector<TrainStep> steps;
  std::vector<double> validation_loss;  // one per completed epoch

  // Columns: epoch,step,loss,distortion,rate,mask_mean,snr_db. The first line
  // is a "# config_hash=<hash>" comment.
  void write_csv(std::ostream& out, const std::string& config_hash) const;
  double epoch_mean_loss(std::size_t epoch) const;
};

struct TrainResult {
  jscc::EncoderModel encoder;
  jscc::DecoderModel decoder;
  TrainLog log;
  std::size_t best_epoch = 0;
  bool stopped_early = false;
};

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Inputs for sp mode: the frozen classifier and its weight cache over
// `train`. In mse mode both may be null.
struct SemanticInputs {
  const classifier::ClassifierModel* classifier = nullptr;
  const saliency::WeightCache* weights = nullptr;
};

// Algorithm: per step sample snr ~ U[snr_min, snr_max], encode (train mode),
// add AWGN, decode, take the sp or mse distortion plus the rate term and
// update encoder and decoder with Adam. Returns the parameters of the epoch
// with the lowest validation loss.
TrainResult train_jscc(const TrainConfig& config, const dataio::LabeledImageDataset& train,
                       const SemanticInputs& semantic = {},
                       const std::function<void(std::size_t epoch, double train_loss, double val_loss)>& on_epoch = {});

}  // namespace spjscc::training
