#include "spjscc/dataio/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "spjscc/numcore/binary_io.hpp"
#include "spjscc/numcore/digest.hpp"

namespace spjscc::dataio {
namespace {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

void LabeledImageDataset::validate() const {
  if (labels.empty()) throw DatasetError("dataset is empty");
  if (images.rank() != 4 || images.dim(0) != labels.size() || images.dim(1) != 3) {
    throw DatasetError("images " + numcore::to_string(images.shape()) + " do not match " +
                       std::to_string(labels.size()) + " labels of 3-channel images");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
      throw DatasetError("label " + std::to_string(labels[i]) + " at index " + std::to_string(i) +
                         " outside [0," + std::to_string(classes) + ")");
    }
  }
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (!(images[i] >= 0.0f && images[i] <= 1.0f)) {
      throw DatasetError("pixel " + std::to_string(i) + " outside [0,1]");
    }
  }
  if (!foreground.empty() && foreground.size() != count() * height() * width()) {
    throw DatasetError("foreground mask size does not match images");
  }
}

std::string LabeledImageDataset::content_id() const {
  numcore::Sha256 digest;
  for (std::size_t d : images.shape()) {
    const std::uint64_t dim = d;
    digest.update(&dim, sizeof dim);
  }
  digest.update(labels.data(), labels.size() * sizeof(int));
  digest.update(images.data(), images.size() * sizeof(float));
  return digest.hex();
}

LabeledImageDataset LabeledImageDataset::subset(const std::vector<std::size_t>& indices) const {
  if (indices.empty()) throw DatasetError("subset: no indices");
  const std::size_t px = pixels_per_image();
  const std::size_t plane = height() * width();
  LabeledImageDataset out;
  out.classes = classes;
  out.split = split;
  std::vector<float> values;
  values.reserve(indices.size() * px);
  for (std::size_t i : indices) {
    if (i >= count()) throw DatasetError("subset: index " + std::to_string(i) + " out of range");
    values.insert(values.end(), images.data() + i * px, images.data() + (i + 1) * px);
    out.labels.push_back(labels[i]);
    if (!foreground.empty()) {
      out.foreground.insert(out.foreground.end(), foreground.begin() + static_cast<long>(i * plane),
                            foreground.begin() + static_cast<long>((i + 1) * plane));
    }
  }
  out.images = Tensor<float>({indices.size(), 3, height(), width()}, std::move(values));
  return out;
}

LabeledImageDataset LabeledImageDataset::head(std::size_t n) const {
  std::vector<std::size_t> idx(std::min(n, count()));
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return subset(idx);
}

LabeledImageDataset load_cifar10(const std::vector<std::filesystem::path>& files, Split split) {
  constexpr std::size_t side = 32, plane = side * side;
  std::vector<float> pixels;
  std::vector<int> labels;
  for (const auto& path : files) {
    const std::string bytes = read_file(path);
    if (bytes.empty() || bytes.size() % kCifarRecordBytes != 0) {
      const std::size_t offset = bytes.size() - bytes.size() % kCifarRecordBytes;
      throw DatasetError(path.string() + ": truncated record at byte offset " +
                         std::to_string(offset) + " (file is " + std::to_string(bytes.size()) +
                         " bytes, records are " + std::to_string(kCifarRecordBytes) + ")");
    }
    for (std::size_t off = 0; off < bytes.size(); off += kCifarRecordBytes) {
      const auto label = static_cast<unsigned char>(bytes[off]);
      if (label > 9) {
        throw DatasetError(path.string() + ": label byte " + std::to_string(label) +
                           " > 9 at byte offset " + std::to_string(off));
      }
      labels.push_back(label);
      for (std::size_t i = 0; i < 3 * plane; ++i) {
        pixels.push_back(static_cast<float>(static_cast<unsigned char>(bytes[off + 1 + i])) / 255.0f);
      }
    }
  }
  if (labels.empty()) throw DatasetError("no CIFAR-10 files given");
  LabeledImageDataset out;
  out.images = Tensor<float>({labels.size(), 3, side, side}, std::move(pixels));
  out.labels = std::move(labels);
  out.classes = 10;
  out.split = split;
  return out;
}

LabeledImageDataset load_cifar10_dir(const std::filesystem::path& dir, Split split) {
  std::vector<std::filesystem::path> files;
  if (split == Split::kTrain) {
    for (int i = 1; i <= 5; ++i) files.push_back(dir / ("data_batch_" + std::to_string(i) + ".bin"));
  } else {
    files.push_back(dir / "test_batch.bin");
  }
  return load_cifar10(files, split);
}

std::string shape_class_name(int label) {
  static constexpr std::array<const char*, 5> shapes{"circle", "square", "triangle", "cross", "ring"};
  if (label < 0 || label >= static_cast<int>(kShapeClasses)) return "unknown";
  return std::string(shapes[static_cast<std::size_t>(label / 2)]) +
         (label % 2 ? "-outline" : "-filled");
}

namespace {

enum class ShapeKind { kCircle, kSquare, kTriangle, kCross, kRing };

bool inside(ShapeKind kind, double u, double v, double r) {
  switch (kind) {
    case ShapeKind::kCircle:
      return u * u + v * v <= r * r;
    case ShapeKind::kSquare:
      return std::abs(u) <= 0.8 * r && std::abs(v) <= 0.8 * r;
    case ShapeKind::kTriangle: {
      // Equilateral, circumradius r, one vertex pointing along -v.
      for (int k = 0; k < 3; ++k) {
        const double a = std::numbers::pi / 2 + 2 * std::numbers::pi * k / 3;
        if (u * std::cos(a) + v * std::sin(a) > 0.5 * r) return false;
      }
      return true;
    }
    case ShapeKind::kCross:
      return (std::abs(u) <= 0.32 * r && std::abs(v) <= r) ||
             (std::abs(v) <= 0.32 * r && std::abs(u) <= r);
    case ShapeKind::kRing: {
      const double d2 = u * u + v * v;
      return d2 <= r * r && d2 >= 0.2 * r * r;
    }
  }
  return false;
}

}  // namespace

LabeledImageDataset generate_shapes(std::uint64_t seed, std::size_t count, std::size_t height,
                                    std::size_t width, Split split) {
  if (height < 16 || width < 16) throw std::invalid_argument("generate_shapes: H and W must be >= 16");
  if (count < kShapeClasses) {
    throw std::invalid_argument("generate_shapes: count must be >= " + std::to_string(kShapeClasses));
  }
  std::mt19937_64 rng(seed);
  std::vector<int> labels(count);
  for (std::size_t i = 0; i < count; ++i) labels[i] = static_cast<int>(i % kShapeClasses);
  std::shuffle(labels.begin(), labels.end(), rng);

  const std::size_t plane = height * width;
  const double side = static_cast<double>(std::min(height, width));
  std::vector<float> pixels(count * 3 * plane);
  std::vector<std::uint8_t> fg(count * plane);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<std::uint8_t> solid(plane);

  for (std::size_t n = 0; n < count; ++n) {
    const auto kind = static_cast<ShapeKind>(labels[n] / 2);
    const bool outline = labels[n] % 2 == 1;
    const double cx = (0.35 + 0.3 * unit(rng)) * static_cast<double>(width);
    const double cy = (0.35 + 0.3 * unit(rng)) * static_cast<double>(height);
    const double r = (0.22 + 0.1 * unit(rng)) * side;
    const double theta = 2 * std::numbers::pi * unit(rng);
    const double ct = std::cos(theta), sn = std::sin(theta);

    std::array<double, 3> bg{}, fgc{}, grad{};
    for (int c = 0; c < 3; ++c) {
      bg[c] = 0.25 + 0.5 * unit(rng);
      grad[c] = 0.3 * (unit(rng) - 0.5);
    }
    // Foreground colour differs from the background mean by at least 0.3 on
    // average across channels.
    do {
      for (int c = 0; c < 3; ++c) fgc[c] = unit(rng);
    } while ((std::abs(fgc[0] - bg[0]) + std::abs(fgc[1] - bg[1]) + std::abs(fgc[2] - bg[2])) / 3 < 0.3);
    const double noise_amp = 0.08 + 0.1 * unit(rng);

    for (std::size_t y = 0; y < height; ++y) {
      for (std::size_t x = 0; x < width; ++x) {
        const double dx = static_cast<double>(x) + 0.5 - cx, dy = static_cast<double>(y) + 0.5 - cy;
        const double u = ct * dx + sn * dy, v = -sn * dx + ct * dy;
        solid[y * width + x] = inside(kind, u, v, r) ? 1 : 0;
      }
    }
    std::uint8_t* mask = fg.data() + n * plane;
    for (std::size_t y = 0; y < height; ++y) {
      for (std::size_t x = 0; x < width; ++x) {
        const std::size_t i = y * width + x;
        if (!solid[i]) continue;
        if (!outline) {
          mask[i] = 1;
          continue;
        }
        // Outline: keep pixels adjacent to the shape boundary.
        bool edge = false;
        for (int oy = -1; oy <= 1 && !edge; ++oy) {
          for (int ox = -1; ox <= 1 && !edge; ++ox) {
            const long yy = static_cast<long>(y) + oy, xx = static_cast<long>(x) + ox;
            if (yy < 0 || xx < 0 || yy >= static_cast<long>(height) || xx >= static_cast<long>(width) ||
                !solid[static_cast<std::size_t>(yy) * width + static_cast<std::size_t>(xx)]) {
              edge = true;
            }
          }
        }
        mask[i] = edge ? 1 : 0;
      }
    }

    float* img = pixels.data() + n * 3 * plane;
    for (std::size_t y = 0; y < height; ++y) {
      const double ramp = static_cast<double>(y) / static_cast<double>(height - 1) - 0.5;
      for (std::size_t x = 0; x < width; ++x) {
        const std::size_t i = y * width + x;
        const double jitter = noise_amp * (2 * unit(rng) - 1);
        for (std::size_t c = 0; c < 3; ++c) {
          const double base = mask[i] ? fgc[c] : bg[c] + grad[c] * ramp;
          img[c * plane + i] = static_cast<float>(std::clamp(base + jitter, 0.0, 1.0));
        }
      }
    }
  }

  LabeledImageDataset out;
  out.images = Tensor<float>({count, 3, height, width}, std::move(pixels));
  out.labels = std::move(labels);
  out.classes = kShapeClasses;
  out.split = split;
  out.foreground = std::move(fg);
  return out;
}

void save_dataset_cache(const LabeledImageDataset& data, const std::filesystem::path& path) {
  data.validate();
  std::string blob = "spjscc-dataset 1 count=" + std::to_string(data.count()) +
                     " classes=" + std::to_string(data.classes) + " height=" +
                     std::to_string(data.height()) + " width=" + std::to_string(data.width()) + "\n";
  const std::size_t px = data.pixels_per_image();
  for (std::size_t i = 0; i < data.count(); ++i) {
    const float label = static_cast<float>(data.labels[i]);
    numcore::append_f32_le(blob, std::span<const float>(&label, 1));
    numcore::append_f32_le(blob, std::span<const float>(data.images.data() + i * px, px));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DatasetError("cannot write " + path.string());
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
}

LabeledImageDataset load_dataset_cache(const std::filesystem::path& path, Split split) {
  const std::string bytes = read_file(path);
  const std::size_t eol = bytes.find('\n');
  if (eol == std::string::npos) throw DatasetError(path.string() + ": missing manifest line");
  std::istringstream manifest(bytes.substr(0, eol));
  std::string magic;
  int version = 0;
  manifest >> magic >> version;
  if (magic != "spjscc-dataset" || version != 1) {
    throw DatasetError(path.string() + ": not a version-1 dataset cache");
  }
  std::size_t count = 0, classes = 0, h = 0, w = 0;
  std::string field;
  while (manifest >> field) {
    const auto eq = field.find('=');
    if (eq == std::string::npos) throw DatasetError(path.string() + ": bad manifest field " + field);
    const std::string key = field.substr(0, eq);
    const std::size_t value = std::stoul(field.substr(eq + 1));
    if (key == "count") count = value;
    else if (key == "classes") classes = value;
    else if (key == "height") h = value;
    else if (key == "width") w = value;
    else throw DatasetError(path.string() + ": unknown manifest field " + key);
  }
  if (count == 0 || classes == 0 || h == 0 || w == 0) {
    throw DatasetError(path.string() + ": incomplete manifest");
  }
  const std::size_t px = 3 * h * w;
  const std::size_t record = (1 + px) * 4;
  const std::size_t body = bytes.size() - eol - 1;
  if (body != count * record) {
    throw DatasetError(path.string() + ": expected " + std::to_string(count * record) +
                       " payload bytes, found " + std::to_string(body));
  }
  LabeledImageDataset out;
  std::vector<float> pixels(count * px);
  const char* src = bytes.data() + eol + 1;
  for (std::size_t i = 0; i < count; ++i) {
    float label = 0;
    numcore::read_f32_le(src, std::span<float>(&label, 1));
    out.labels.push_back(static_cast<int>(label));
    numcore::read_f32_le(src + 4, std::span<float>(pixels.data() + i * px, px));
    src += record;
  }
  out.images = Tensor<float>({count, 3, h, w}, std::move(pixels));
  out.classes = classes;
  out.split = split;
  out.validate();
  return out;
}

BatchIterator::BatchIterator(std::size_t count, std::size_t batch_size, std::uint64_t shuffle_seed,
                             bool shuffle)
    : count_(count), batch_size_(batch_size), seed_(shuffle_seed), shuffle_(shuffle) {
  if (batch_size == 0) throw std::invalid_argument("batch size must be >= 1");
}

std::vector<std::vector<std::size_t>> BatchIterator::epoch(std::size_t epoch_index) const {
  std::vector<std::size_t> order(count_);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (shuffle_) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed_), static_cast<std::uint32_t>(seed_ >> 32),
                      static_cast<std::uint32_t>(epoch_index)};
    std::mt19937_64 rng(seq);
    std::shuffle(order.begin(), order.end(), rng);
  }
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < count_; start += batch_size_) {
    const std::size_t end = std::min(count_, start + batch_size_);
    batches.emplace_back(order.begin() + static_cast<long>(start), order.begin() + static_cast<long>(end));
  }
  return batches;
}

ImageBatch gather(const LabeledImageDataset& data, const std::vector<std::size_t>& indices) {
  const std::size_t px = data.pixels_per_image();
  std::vector<float> values;
  values.reserve(indices.size() * px);
  ImageBatch batch;
  for (std::size_t i : indices) {
    values.insert(values.end(), data.images.data() + i * px, data.images.data() + (i + 1) * px);
    batch.labels.push_back(data.labels[i]);
  }
  batch.images = Tensor<float>({indices.size(), 3, data.height(), data.width()}, std::move(values));
  batch.indices = indices;
  return batch;
}

}  // namespace spjscc::dataio
