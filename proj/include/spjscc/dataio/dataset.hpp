#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "spjscc/numcore/tensor.hpp"

namespace spjscc::dataio {

using numcore::Tensor;

enum class Split { kTrain, kTest };

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Images (count, 3, H, W) with pixels in [0,1] and one label per image.
struct LabeledImageDataset {
  Tensor<float> images;
  std::vector<int> labels;
  std::size_t classes = 0;
  Split split = Split::kTrain;
  // Per-pixel object mask (count, H, W), 1 = foreground. Only the synthetic
  // generator knows it; empty otherwise.
  std::vector<std::uint8_t> foreground;

  std::size_t count() const { return labels.size(); }
  std::size_t height() const { return images.dim(2); }
  std::size_t width() const { return images.dim(3); }
  std::size_t pixels_per_image() const { return images.size() / count(); }

  // Throws DatasetError naming the first broken invariant.
  void validate() const;

  // SHA-256 (hex) over labels and pixels; identifies the dataset in caches.
  std::string content_id() const;

  // First `n` items (or fewer) as a new dataset, order preserved.
  LabeledImageDataset head(std::size_t n) const;
  LabeledImageDataset subset(const std::vector<std::size_t>& indices) const;
};

inline constexpr std::size_t kCifarRecordBytes = 3073;

// Reads one or more CIFAR-10 binary batch files, concatenated in the given
// order. Planes are red, green, blue, each row-major 32x32.
LabeledImageDataset load_cifar10(const std::vector<std::filesystem::path>& files, Split split);

// data_batch_1..5.bin for train, test_batch.bin for test.
LabeledImageDataset load_cifar10_dir(const std::filesystem::path& dir, Split split);

inline constexpr std::size_t kShapeClasses = 10;

// Ten classes: {circle, square, triangle, cross, ring} x {filled, outline},
// label = 2 * shape + style. Each image is one shape of random position,
// size, rotation and colour over a noisy colour-gradient background.
// Deterministic for a fixed seed; class counts differ by at most one.
LabeledImageDataset generate_shapes(std::uint64_t seed, std::size_t count, std::size_t height,
                                    std::size_t width, Split split = Split::kTrain);

std::string shape_class_name(int label);

// Cache format: one text manifest line
//   "spjscc-dataset 1 count=<n> classes=<C> height=<H> width=<W>\n"
// followed by, per image, the label and then 3*H*W pixels, all little-endian
// float32.
void save_dataset_cache(const LabeledImageDataset& data, const std::filesystem::path& path);
LabeledImageDataset load_dataset_cache(const std::filesystem::path& path, Split split);

// Mini-batches in a seeded permutation that is fixed per (seed, epoch).
struct ImageBatch {
  Tensor<float> images;
  std::vector<int> labels;
  std::vector<std::size_t> indices;
};

class BatchIterator {
 public:
  BatchIterator(std::size_t count, std::size_t batch_size, std::uint64_t shuffle_seed,
                bool shuffle = true);

  // Index lists for one epoch; the final partial batch is included.
  std::vector<std::vector<std::size_t>> epoch(std::size_t epoch_index) const;

 private:
  std::size_t count_;
  std::size_t batch_size_;
  std::uint64_t seed_;
  bool shuffle_;
};

ImageBatch gather(const LabeledImageDataset& data, const std::vector<std::size_t>& indices);

}  // namespace spjscc::dataio
