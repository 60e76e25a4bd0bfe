#pragma once

#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "spjscc/classifier/classifier.hpp"

namespace spjscc::saliency {

using numcore::Tensor;

// d y^c / d x for one image (3,H,W) or (1,3,H,W); y are the pre-softmax
// logits. Result has the image's shape.
template <typename T>
Tensor<T> class_gradient(const classifier::ClassifierModel& model, const Tensor<float>& image, int c);

// Elementwise mean of equally shaped maps.
Tensor<double> average_gradients(std::span<const Tensor<double>> maps);

// (1/C) sum_c d y^c / d x for a batch (N,3,H,W), from a single reverse pass
// seeded with 1/C on every logit. Images never interact in the classifier,
// so each item receives exactly its own average.
Tensor<double> mean_class_gradient(const classifier::ClassifierModel& model, const Tensor<float>& images);

struct NormalizedWeights {
  Tensor<float> weights;
  bool fallback = false;  // zero gradient: uniform 1/sqrt(n) map
};

inline constexpr double kZeroGradientNorm = 1e-12;

// |w| / || |w| ||_2, or the uniform unit-norm map if ||w||_2 < 1e-12.
// Throws std::invalid_argument on non-finite input.
NormalizedWeights normalize_weights(const Tensor<double>& w);

// Throws std::invalid_argument unless w is nonnegative with unit L2 norm
// (tolerance 1e-6).
void check_weight_map(std::span<const float> w);

class CacheMismatch : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// One normalized map per image of the dataset, in dataset order.
struct WeightCache {
  std::string dataset_id;
  std::string classifier_hash;
  Tensor<float> maps;  // (N,3,H,W)
  std::vector<std::size_t> fallback_images;

  std::size_t count() const { return maps.dim(0); }
  std::span<const float> map(std::size_t i) const;
};

WeightCache extract_weight_cache(const classifier::ClassifierModel& model,
                                 const dataio::LabeledImageDataset& data);

// File: one manifest line
//   "spjscc-weights 1 dataset=<id> classifier=<hash> count=<N> shape=<C>x<H>x<W> fallbacks=<i,j,...|->\n"
// then N maps of little-endian float32.
void save_weight_cache(const WeightCache& cache, const std::filesystem::path& path);

// Throws CacheMismatch when the stored dataset id or classifier hash differs
// from the expected ones (the caller then recomputes).
WeightCache load_weight_cache(const std::filesystem::path& path, const std::string& dataset_id,
                              const std::string& classifier_hash);

}  // namespace spjscc::saliency
