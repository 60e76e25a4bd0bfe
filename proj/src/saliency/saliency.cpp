#include "spjscc/saliency/saliency.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "spjscc/numcore/binary_io.hpp"
#include "spjscc/numcore/ops.hpp"

namespace spjscc::saliency {

using numcore::NodeId;
using numcore::Shape;
using numcore::Tape;

namespace {

constexpr std::size_t kChunk = 100;
constexpr const char* kMagic = "spjscc-weights";
constexpr int kVersion = 1;

Tensor<float> as_batch(const Tensor<float>& image) {
  if (image.rank() == 3) {
    Shape s{1};
    s.insert(s.end(), image.shape().begin(), image.shape().end());
    return image.reshaped(std::move(s));
  }
  if (image.rank() == 4 && image.dim(0) == 1) return image;
  throw numcore::ShapeError("saliency: expected one image (3,H,W), got " + numcore::to_string(image.shape()));
}

std::string field(const std::string& manifest, const std::string& key) {
  std::istringstream in(manifest);
  std::string tok;
  while (in >> tok) {
    if (tok.rfind(key + "=", 0) == 0) return tok.substr(key.size() + 1);
  }
  throw CacheMismatch("weight cache: manifest lacks '" + key + "'");
}

}  // namespace

template <typename T>
Tensor<T> class_gradient(const classifier::ClassifierModel& model, const Tensor<float>& image, int c) {
  if (c < 0 || static_cast<std::size_t>(c) >= model.classes()) {
    throw std::invalid_argument("class_gradient: class " + std::to_string(c) + " outside [0," +
                                std::to_string(model.classes()) + ")");
  }
  Tensor<float> batch = as_batch(image);
  Tape<T> tape;
  NodeId x = tape.variable(batch.cast<T>());
  NodeId logits = model.forward(tape, x);
  Tensor<T> seed(tape.shape(logits));
  seed[static_cast<std::size_t>(c)] = T{1};
  return tape.backward(logits, std::move(seed))[x].reshaped(image.shape());
}

template Tensor<float> class_gradient<float>(const classifier::ClassifierModel&, const Tensor<float>&, int);
template Tensor<double> class_gradient<double>(const classifier::ClassifierModel&, const Tensor<float>&, int);

Tensor<double> average_gradients(std::span<const Tensor<double>> maps) {
  if (maps.empty()) throw std::invalid_argument("average_gradients: no maps");
  Tensor<double> out(maps[0].shape());
  for (const auto& m : maps) {
    if (m.shape() != out.shape()) {
      throw numcore::ShapeError("average_gradients: map " + numcore::to_string(m.shape()) +
                                " differs from " + numcore::to_string(out.shape()));
    }
    for (std::size_t i = 0; i < m.size(); ++i) out[i] += m[i];
  }
  const double inv = 1.0 / static_cast<double>(maps.size());
  for (double& v : out.values()) v *= inv;
  return out;
}

Tensor<double> mean_class_gradient(const classifier::ClassifierModel& model, const Tensor<float>& images) {
  if (images.rank() != 4) {
    throw numcore::ShapeError("mean_class_gradient: expected (N,3,H,W), got " + numcore::to_string(images.shape()));
  }
  const std::size_t n = images.dim(0), per = images.size() / n;
  std::vector<double> out;
  out.reserve(images.size());
  for (std::size_t b = 0; b < n; b += kChunk) {
    const std::size_t e = std::min(n, b + kChunk);
    Shape s = images.shape();
    s[0] = e - b;
    auto first = images.values().begin() + static_cast<std::ptrdiff_t>(b * per);
    Tape<float> tape;
    NodeId x = tape.variable(Tensor<float>(s, std::vector<float>(first, first + static_cast<std::ptrdiff_t>((e - b) * per))));
    NodeId logits = model.forward(tape, x);
    Tensor<float> seed(tape.shape(logits), 1.0f / static_cast<float>(model.classes()));
    const auto g = tape.backward(logits, std::move(seed));
    for (float v : g[x].values()) out.push_back(v);
  }
  return Tensor<double>(images.shape(), std::move(out));
}

NormalizedWeights normalize_weights(const Tensor<double>& w) {
  double sq = 0.0;
  for (double v : w.values()) {
    if (!std::isfinite(v)) throw std::invalid_argument("normalize_weights: non-finite entry");
    sq += v * v;
  }
  NormalizedWeights out;
  const double norm = std::sqrt(sq);
  if (norm < kZeroGradientNorm) {
    out.fallback = true;
    out.weights = Tensor<float>(w.shape(), static_cast<float>(1.0 / std::sqrt(static_cast<double>(w.size()))));
    return out;
  }
  out.weights = Tensor<float>(w.shape());
  for (std::size_t i = 0; i < w.size(); ++i) out.weights[i] = static_cast<float>(std::abs(w[i]) / norm);
  return out;
}

void check_weight_map(std::span<const float> w) {
  double sq = 0.0;
  for (float v : w) {
    if (!(v >= 0.0f)) throw std::invalid_argument("weight map: negative or non-finite entry");
    sq += static_cast<double>(v) * v;
  }
  if (std::abs(std::sqrt(sq) - 1.0) > 1e-6) {
    throw std::invalid_argument("weight map: L2 norm " + std::to_string(std::sqrt(sq)) + " is not 1");
  }
}

std::span<const float> WeightCache::map(std::size_t i) const {
  const std::size_t per = maps.size() / count();
  if (i >= count()) throw std::out_of_range("weight cache: map " + std::to_string(i) + " out of range");
  return {maps.data() + i * per, per};
}

WeightCache extract_weight_cache(const classifier::ClassifierModel& model,
                                 const dataio::LabeledImageDataset& data) {
  data.validate();
  const Tensor<double> grads = mean_class_gradient(model, data.images);
  WeightCache cache;
  cache.dataset_id = data.content_id();
  cache.classifier_hash = model.hash();
  cache.maps = Tensor<float>(data.images.shape());
  const std::size_t per = data.pixels_per_image();
  Shape one(data.images.shape().begin() + 1, data.images.shape().end());
  for (std::size_t n = 0; n < data.count(); ++n) {
    auto first = grads.values().begin() + static_cast<std::ptrdiff_t>(n * per);
    auto w = normalize_weights(Tensor<double>(one, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(per))));
    if (w.fallback) cache.fallback_images.push_back(n);
    std::copy(w.weights.values().begin(), w.weights.values().end(), cache.maps.data() + n * per);
  }
  return cache;
}

void save_weight_cache(const WeightCache& cache, const std::filesystem::path& path) {
  std::ostringstream head;
  head << kMagic << ' ' << kVersion << " dataset=" << cache.dataset_id
       << " classifier=" << cache.classifier_hash << " count=" << cache.count()
       << " shape=" << cache.maps.dim(1) << 'x' << cache.maps.dim(2) << 'x' << cache.maps.dim(3)
       << " fallbacks=";
  if (cache.fallback_images.empty()) head << '-';
  for (std::size_t i = 0; i < cache.fallback_images.size(); ++i) {
    head << (i ? "," : "") << cache.fallback_images[i];
  }
  head << '\n';
  std::string bytes = head.str();
  numcore::append_f32_le(bytes, cache.maps.values());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

WeightCache load_weight_cache(const std::filesystem::path& path, const std::string& dataset_id,
                              const std::string& classifier_hash) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string manifest;
  std::getline(in, manifest);
  std::istringstream head(manifest);
  std::string magic;
  int version = 0;
  head >> magic >> version;
  if (magic != kMagic || version != kVersion) {
    throw CacheMismatch("weight cache: unsupported header '" + manifest.substr(0, 40) + "'");
  }
  WeightCache cache;
  cache.dataset_id = field(manifest, "dataset");
  cache.classifier_hash = field(manifest, "classifier");
  if (cache.classifier_hash != classifier_hash) {
    throw CacheMismatch("weight cache: classifier hash " + cache.classifier_hash.substr(0, 12) +
                        " does not match " + classifier_hash.substr(0, 12));
  }
  if (cache.dataset_id != dataset_id) {
    throw CacheMismatch("weight cache: dataset id " + cache.dataset_id.substr(0, 12) +
                        " does not match " + dataset_id.substr(0, 12));
  }
  const std::size_t count = std::stoul(field(manifest, "count"));
  std::size_t c = 0, h = 0, w = 0;
  char x1 = 0, x2 = 0;
  std::istringstream shape(field(manifest, "shape"));
  shape >> c >> x1 >> h >> x2 >> w;
  if (count == 0 || c == 0 || h == 0 || w == 0) throw CacheMismatch("weight cache: bad shape in manifest");
  cache.maps = Tensor<float>({count, c, h, w});
  std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (blob.size() != cache.maps.size() * sizeof(float)) {
    throw CacheMismatch("weight cache: payload is " + std::to_string(blob.size()) + " bytes, expected " +
                        std::to_string(cache.maps.size() * sizeof(float)));
  }
  numcore::read_f32_le(blob.data(), cache.maps.values());
  const std::size_t per = c * h * w;
  for (std::size_t n = 0; n < count; ++n) check_weight_map({cache.maps.data() + n * per, per});
  const std::string fallbacks = field(manifest, "fallbacks");
  if (fallbacks != "-") {
    std::istringstream list(fallbacks);
    std::string item;
    while (std::getline(list, item, ',')) {
      const std::size_t i = std::stoul(item);
      if (i >= count) throw CacheMismatch("weight cache: fallback index " + item + " out of range");
      cache.fallback_images.push_back(i);
    }
  }
  return cache;
}

}  // namespace spjscc::saliency
