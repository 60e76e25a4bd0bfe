#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "spjscc/dataio/dataset.hpp"
#include "spjscc/numcore/params.hpp"

namespace spjscc::classifier {

using numcore::NodeId;
using numcore::ParamSet;
using numcore::Tape;
using numcore::Tensor;

// Layer list: one block per entry of conv_channels (conv3x3 + ReLU + 2x2 mean
// pool), then a dense layer to `classes` logits. An empty conv list gives a
// single dense layer over the flattened image.
struct Architecture {
  std::size_t in_channels = 3;
  std::size_t height = 32;
  std::size_t width = 32;
  std::vector<std::size_t> conv_channels{32, 64, 128};
  std::size_t classes = 10;

  // Throws std::invalid_argument if the pooling chain does not divide H, W.
  void validate() const;
  std::size_t dense_inputs() const;
  friend bool operator==(const Architecture&, const Architecture&) = default;
};

// Parameters: "conv<i>.w" (Co,Ci,3,3), "conv<i>.b" (Co), "dense.w" (C,I), "dense.b" (C).
ParamSet init_params(const Architecture& arch, std::uint64_t seed);

class ClassifierModel {
 public:
  // Validates parameter names and shapes against the architecture.
  ClassifierModel(Architecture arch, ParamSet params);

  const Architecture& architecture() const { return arch_; }
  const ParamSet& params() const { return params_; }
  std::size_t classes() const { return arch_.classes; }
  std::string hash() const { return params_.content_hash(); }

  // Logits node (N, C) for an image node (N, in_channels, H, W). Parameters
  // are bound as constants: no gradient ever flows into them.
  template <typename T>
  NodeId forward(Tape<T>& tape, NodeId images) const;

 private:
  Architecture arch_;
  ParamSet params_;
};

struct PerceptionResult {
  std::vector<float> logits;
  std::vector<float> probabilities;
  int predicted = 0;
};

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PretrainConfig {
  std::size_t epochs = 20;
  float lr = 1e-3f;
  std::size_t batch = 32;
  std::uint64_t seed = 1;
};

struct EpochStats {
  std::size_t epoch = 0;
  double loss = 0.0;
  double accuracy = 0.0;
};

// Cross-entropy training with Adam. Throws DivergenceError naming the epoch if
// the loss becomes non-finite.
ClassifierModel pretrain_classifier(const dataio::LabeledImageDataset& train,
                                    const PretrainConfig& config, Architecture arch,
                                    const std::function<void(const EpochStats&)>& on_epoch = {});

// Images (N, in_channels, H, W).
std::vector<PerceptionResult> perceive(const ClassifierModel& model, const Tensor<float>& images);

std::vector<int> predict(const ClassifierModel& model, const Tensor<float>& images);

double classify_accuracy(const ClassifierModel& model, const Tensor<float>& images,
                         std::span<const int> labels);
double classify_accuracy(const ClassifierModel& model, const dataio::LabeledImageDataset& data);

}  // namespace spjscc::classifier
