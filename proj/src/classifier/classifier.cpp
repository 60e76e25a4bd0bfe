#include "spjscc/classifier/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "spjscc/numcore/ops.hpp"

namespace spjscc::classifier {

namespace ops = numcore::ops;
using numcore::BoundParams;
using numcore::Shape;

namespace {

constexpr std::size_t kInferenceChunk = 100;

std::string conv_name(std::size_t i, const char* suffix) {
  return "conv" + std::to_string(i) + "." + suffix;
}

template <typename T>
NodeId run_layers(const Architecture& arch, Tape<T>& tape, NodeId x, const BoundParams<T>& p) {
  NodeId h = x;
  for (std::size_t i = 0; i < arch.conv_channels.size(); ++i) {
    h = ops::conv2d(tape, h, p[conv_name(i, "w")], p[conv_name(i, "b")], 1);
    h = ops::relu(tape, h);
    h = ops::mean_pool2x2(tape, h);
  }
  return ops::dense(tape, h, p["dense.w"], p["dense.b"]);
}

void check_images(const Architecture& arch, const Shape& s) {
  if (s.size() != 4 || s[1] != arch.in_channels || s[2] != arch.height || s[3] != arch.width) {
    throw numcore::ShapeError("classifier: images " + numcore::to_string(s) + " do not match (N," +
                              std::to_string(arch.in_channels) + "," + std::to_string(arch.height) +
                              "," + std::to_string(arch.width) + ")");
  }
}

Tensor<float> chunk(const Tensor<float>& images, std::size_t begin, std::size_t end) {
  const std::size_t per = images.size() / images.dim(0);
  Shape s = images.shape();
  s[0] = end - begin;
  auto first = images.values().begin() + static_cast<std::ptrdiff_t>(begin * per);
  return Tensor<float>(s, std::vector<float>(first, first + static_cast<std::ptrdiff_t>((end - begin) * per)));
}

std::vector<std::vector<float>> logits_of(const ClassifierModel& model, const Tensor<float>& images) {
  check_images(model.architecture(), images.shape());
  const std::size_t n = images.dim(0), c = model.classes();
  std::vector<std::vector<float>> out;
  out.reserve(n);
  for (std::size_t b = 0; b < n; b += kInferenceChunk) {
    const std::size_t e = std::min(n, b + kInferenceChunk);
    Tape<float> tape;
    NodeId x = tape.constant(chunk(images, b, e));
    const auto& logits = tape.value(model.forward(tape, x));
    for (std::size_t i = 0; i < e - b; ++i) {
      out.emplace_back(logits.data() + i * c, logits.data() + (i + 1) * c);
    }
  }
  return out;
}

int argmax(const std::vector<float>& v) {
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace

void Architecture::validate() const {
  if (in_channels == 0 || height == 0 || width == 0 || classes == 0) {
    throw std::invalid_argument("classifier: architecture dims must be positive");
  }
  const std::size_t div = std::size_t{1} << conv_channels.size();
  if (height % div != 0 || width % div != 0) {
    throw std::invalid_argument("classifier: " + std::to_string(conv_channels.size()) +
                                " pooling stages need H and W divisible by " + std::to_string(div));
  }
  for (std::size_t c : conv_channels) {
    if (c == 0) throw std::invalid_argument("classifier: conv block with 0 channels");
  }
}

std::size_t Architecture::dense_inputs() const {
  const std::size_t div = std::size_t{1} << conv_channels.size();
  const std::size_t ch = conv_channels.empty() ? in_channels : conv_channels.back();
  return ch * (height / div) * (width / div);
}

ParamSet init_params(const Architecture& arch, std::uint64_t seed) {
  arch.validate();
  std::mt19937_64 rng(seed);
  ParamSet p;
  std::size_t ci = arch.in_channels;
  for (std::size_t i = 0; i < arch.conv_channels.size(); ++i) {
    const std::size_t co = arch.conv_channels[i];
    p.add(conv_name(i, "w"), numcore::he_normal({co, ci, 3, 3}, ci * 9, rng));
    p.add(conv_name(i, "b"), Tensor<float>({co}));
    ci = co;
  }
  p.add("dense.w", numcore::he_normal({arch.classes, arch.dense_inputs()}, arch.dense_inputs(), rng));
  p.add("dense.b", Tensor<float>({arch.classes}));
  return p;
}

ClassifierModel::ClassifierModel(Architecture arch, ParamSet params)
    : arch_(std::move(arch)), params_(std::move(params)) {
  arch_.validate();
  const ParamSet expected = init_params(arch_, 0);
  if (expected.size() != params_.size()) {
    throw std::invalid_argument("classifier: expected " + std::to_string(expected.size()) +
                                " parameter tensors, got " + std::to_string(params_.size()));
  }
  for (const auto& [name, t] : expected.entries()) {
    if (!params_.contains(name)) throw std::invalid_argument("classifier: missing parameter '" + name + "'");
    if (params_.get(name).shape() != t.shape()) {
      throw numcore::ShapeError("classifier: parameter '" + name + "' is " +
                                numcore::to_string(params_.get(name).shape()) + ", expected " +
                                numcore::to_string(t.shape()));
    }
  }
}

template <typename T>
NodeId ClassifierModel::forward(Tape<T>& tape, NodeId images) const {
  check_images(arch_, tape.shape(images));
  const auto bound = numcore::bind<T>(tape, params_, false);
  return run_layers(arch_, tape, images, bound);
}

template NodeId ClassifierModel::forward<float>(Tape<float>&, NodeId) const;
template NodeId ClassifierModel::forward<double>(Tape<double>&, NodeId) const;

ClassifierModel pretrain_classifier(const dataio::LabeledImageDataset& train,
                                    const PretrainConfig& config, Architecture arch,
                                    const std::function<void(const EpochStats&)>& on_epoch) {
  train.validate();
  if (train.classes != arch.classes) {
    throw std::invalid_argument("classifier: dataset has " + std::to_string(train.classes) +
                                " classes, architecture " + std::to_string(arch.classes));
  }
  check_images(arch, train.images.shape());
  if (config.epochs == 0 || config.batch == 0) {
    throw std::invalid_argument("classifier: epochs and batch must be >= 1");
  }
  ParamSet params = init_params(arch, config.seed);
  numcore::Adam adam(numcore::Adam::Options{config.lr});
  const dataio::BatchIterator batches(train.count(), config.batch, config.seed ^ 0x9e3779b97f4a7c15ULL);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (const auto& idx : batches.epoch(epoch)) {
      auto batch = dataio::gather(train, idx);
      Tape<float> tape;
      const auto bound = numcore::bind<float>(tape, params, true);
      NodeId x = tape.constant(std::move(batch.images));
      NodeId logits = run_layers(arch, tape, x, bound);
      NodeId loss = ops::cross_entropy_with_logits<float>(tape, logits, batch.labels);
      const float l = tape.value(loss)[0];
      if (!std::isfinite(l)) {
        throw DivergenceError("classifier: non-finite loss in epoch " + std::to_string(epoch));
      }
      loss_sum += static_cast<double>(l) * static_cast<double>(idx.size());
      const auto& lv = tape.value(logits);
      for (std::size_t i = 0; i < idx.size(); ++i) {
        const float* row = lv.data() + i * arch.classes;
        const int pred = static_cast<int>(std::max_element(row, row + arch.classes) - row);
        correct += pred == batch.labels[i];
      }
      try {
        adam.step(params, numcore::collect_gradients(bound, tape.backward(loss)));
      } catch (const numcore::NonFiniteGradient& e) {
        throw DivergenceError("classifier: epoch " + std::to_string(epoch) + ": " + e.what());
      }
    }
    if (on_epoch) {
      on_epoch(EpochStats{epoch, loss_sum / static_cast<double>(train.count()),
                          static_cast<double>(correct) / static_cast<double>(train.count())});
    }
  }
  return ClassifierModel(std::move(arch), std::move(params));
}

std::vector<PerceptionResult> perceive(const ClassifierModel& model, const Tensor<float>& images) {
  std::vector<PerceptionResult> out;
  for (auto& logits : logits_of(model, images)) {
    PerceptionResult r;
    r.predicted = argmax(logits);
    const double top = logits[static_cast<std::size_t>(r.predicted)];
    double z = 0.0;
    for (float v : logits) z += std::exp(static_cast<double>(v) - top);
    for (float v : logits) r.probabilities.push_back(static_cast<float>(std::exp(static_cast<double>(v) - top) / z));
    r.logits = std::move(logits);
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<int> predict(const ClassifierModel& model, const Tensor<float>& images) {
  std::vector<int> out;
  for (const auto& logits : logits_of(model, images)) out.push_back(argmax(logits));
  return out;
}

double classify_accuracy(const ClassifierModel& model, const Tensor<float>& images,
                         std::span<const int> labels) {
  if (labels.empty()) throw std::invalid_argument("classify_accuracy: empty input");
  if (images.rank() == 0 || images.dim(0) != labels.size()) {
    throw numcore::ShapeError("classify_accuracy: " + std::to_string(labels.size()) +
                              " labels for images " + numcore::to_string(images.shape()));
  }
  const auto pred = predict(model, images);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

double classify_accuracy(const ClassifierModel& model, const dataio::LabeledImageDataset& data) {
  return classify_accuracy(model, data.images, data.labels);
}

}  // namespace spjscc::classifier
