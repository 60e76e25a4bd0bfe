#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "doctest.h"
#include "spjscc/numcore/ops.hpp"
#include "spjscc/saliency/saliency.hpp"
#include "support/finite_difference.hpp"

using namespace spjscc;
using namespace spjscc::saliency;
using classifier::Architecture;
using classifier::ClassifierModel;
namespace fs = std::filesystem;

namespace {

fs::path temp_path(const std::string& name) {
  auto dir = fs::temp_directory_path() / "spjscc_test_saliency";
  fs::create_directories(dir);
  return dir / name;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Tensor<float> random_image(numcore::Shape s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> d(0.0f, 1.0f);
  Tensor<float> t(std::move(s));
  for (float& v : t.values()) v = d(rng);
  return t;
}

Tensor<double> random_map(numcore::Shape s, std::mt19937_64& rng) {
  std::normal_distribution<double> d(0.0, 1.0);
  Tensor<double> t(std::move(s));
  for (double& v : t.values()) v = d(rng);
  return t;
}

ClassifierModel small_conv(std::uint64_t seed) {
  Architecture arch{3, 8, 8, {4}, 3};
  return ClassifierModel(arch, classifier::init_params(arch, seed));
}

}  // namespace

TEST_CASE("class_gradient of a dense model is the weight row") {
  Architecture arch{3, 2, 2, {}, 2};
  numcore::ParamSet p;
  std::vector<float> a(24);
  for (std::size_t i = 0; i < 24; ++i) a[i] = static_cast<float>(i) * 0.25f - 3.0f;
  p.add("dense.w", Tensor<float>({2, 12}, a));
  p.add("dense.b", Tensor<float>({2}, {1.0f, -1.0f}));
  ClassifierModel model(arch, std::move(p));
  auto img = random_image({3, 2, 2}, 1);
  for (int c = 0; c < 2; ++c) {
    auto g = class_gradient<double>(model, img, c);
    CHECK(g.shape() == img.shape());
    for (std::size_t i = 0; i < 12; ++i) CHECK(g[i] == a[static_cast<std::size_t>(c) * 12 + i]);
  }
  CHECK_THROWS_AS(class_gradient<double>(model, img, 2), std::invalid_argument);
}

TEST_CASE("class_gradient matches central differences on an 8x8 image") {
  const auto model = small_conv(4);
  const auto img = random_image({3, 8, 8}, 2);
  for (int c = 0; c < 3; ++c) {
    const auto g = class_gradient<double>(model, img, c);
    testing::GraphBuilder logit = [&model, c](numcore::Tape<double>& t, const std::vector<numcore::NodeId>& l) {
      auto y = model.forward(t, numcore::ops::reshape(t, l[0], {1, 3, 8, 8}));
      return numcore::ops::slice(t, numcore::ops::reshape(t, y, {1, 3, 1, 1}), static_cast<std::size_t>(c),
                                 static_cast<std::size_t>(c) + 1);
    };
    const auto numeric = testing::numeric_gradients(logit, {img.cast<double>()});
    CHECK(testing::max_relative_error({g}, numeric) < 1e-3);
  }
}

TEST_CASE("doubling the last layer doubles every class gradient") {
  const auto base = small_conv(5);
  numcore::ParamSet doubled = base.params();
  for (float& v : doubled.get("dense.w").values()) v *= 2.0f;
  const ClassifierModel twice(base.architecture(), doubled);
  const auto img = random_image({3, 8, 8}, 3);
  const auto g1 = class_gradient<double>(base, img, 1);
  const auto g2 = class_gradient<double>(twice, img, 1);
  for (std::size_t i = 0; i < g1.size(); ++i) CHECK(g2[i] == doctest::Approx(2.0 * g1[i]).epsilon(1e-12));
}

TEST_CASE("average_gradients") {
  std::mt19937_64 rng(6);
  auto a = random_map({3, 4, 4}, rng);
  CHECK(average_gradients(std::vector<Tensor<double>>{a}) == a);

  auto neg = a;
  for (double& v : neg.values()) v = -v;
  const auto cancelled = average_gradients(std::vector<Tensor<double>>{a, neg});
  for (double v : cancelled.values()) CHECK(v == 0.0);

  std::vector<Tensor<double>> three{random_map({3, 4, 4}, rng), random_map({3, 4, 4}, rng), random_map({3, 4, 4}, rng)};
  auto mean = average_gradients(three);
  for (std::size_t i = 0; i < mean.size(); ++i) {
    CHECK(mean[i] == doctest::Approx((three[0][i] + three[1][i] + three[2][i]) / 3.0).epsilon(1e-14));
  }
  CHECK_THROWS_AS(average_gradients(std::vector<Tensor<double>>{a, random_map({3, 4, 5}, rng)}), numcore::ShapeError);
  CHECK_THROWS_AS(average_gradients(std::vector<Tensor<double>>{}), std::invalid_argument);
}

TEST_CASE("batched mean gradient equals the per-class average") {
  const auto model = small_conv(7);
  const auto batch = random_image({4, 3, 8, 8}, 9);
  const auto fast = mean_class_gradient(model, batch);
  for (std::size_t n = 0; n < 4; ++n) {
    const auto img = numcore::batch_item(batch, n);
    std::vector<Tensor<double>> per;
    for (int c = 0; c < 3; ++c) per.push_back(class_gradient<double>(model, img, c));
    const auto ref = average_gradients(per);
    double peak = 0.0;
    for (double v : ref.values()) peak = std::max(peak, std::abs(v));
    // The batched path runs in 32-bit.
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::abs(fast[n * ref.size() + i] - ref[i]) <= 1e-5 * peak);
  }
}

TEST_CASE("normalize_weights") {
  auto w = normalize_weights(Tensor<double>({2}, {3.0, -4.0}));
  CHECK(w.weights[0] == doctest::Approx(0.6));
  CHECK(w.weights[1] == doctest::Approx(0.8));
  CHECK_FALSE(w.fallback);

  auto u = normalize_weights(Tensor<double>({4}, {2.0, -2.0, 2.0, -2.0}));
  for (float v : u.weights.values()) CHECK(v == doctest::Approx(0.5));

  auto z = normalize_weights(Tensor<double>({3, 2, 2}, 0.0));
  CHECK(z.fallback);
  for (float v : z.weights.values()) CHECK(v == doctest::Approx(1.0 / std::sqrt(12.0)));
  check_weight_map(z.weights.values());

  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 100; ++trial) {
    auto m = random_map({3, 5, 5}, rng);
    auto n = normalize_weights(m);
    double sq = 0.0;
    for (float v : n.weights.values()) {
      CHECK(v >= 0.0f);
      sq += static_cast<double>(v) * v;
    }
    CHECK(std::abs(std::sqrt(sq) - 1.0) <= 1e-6);
    // Scale invariance.
    for (double& v : m.values()) v *= 7.5;
    auto scaled = normalize_weights(m);
    for (std::size_t i = 0; i < m.size(); ++i) {
      CHECK(scaled.weights[i] == doctest::Approx(n.weights[i]).epsilon(1e-6));
    }
  }
  CHECK_THROWS_AS(normalize_weights(Tensor<double>({2}, {1.0, NAN})), std::invalid_argument);
  CHECK_THROWS_AS(check_weight_map(std::vector<float>{0.5f, 0.5f}), std::invalid_argument);
  CHECK_THROWS_AS(check_weight_map(std::vector<float>{-0.6f, 0.8f}), std::invalid_argument);
}

TEST_CASE("weight cache: invariants, idempotence, round trip, mismatch") {
  Architecture arch{3, 16, 16, {4, 8}, 10};
  const ClassifierModel model(arch, classifier::init_params(arch, 11));
  auto data = dataio::generate_shapes(3, 30, 16, 16);
  auto cache = extract_weight_cache(model, data);
  REQUIRE(cache.count() == 30);
  for (std::size_t i = 0; i < cache.count(); ++i) check_weight_map(cache.map(i));
  CHECK(cache.classifier_hash == model.hash());
  CHECK(cache.dataset_id == data.content_id());

  const auto p1 = temp_path("w1.bin"), p2 = temp_path("w2.bin"), p3 = temp_path("w3.bin");
  save_weight_cache(cache, p1);
  save_weight_cache(extract_weight_cache(model, data), p2);
  CHECK(slurp(p1) == slurp(p2));

  auto back = load_weight_cache(p1, data.content_id(), model.hash());
  CHECK(back.maps == cache.maps);
  CHECK(back.fallback_images == cache.fallback_images);
  save_weight_cache(back, p3);
  CHECK(slurp(p3) == slurp(p1));

  CHECK_THROWS_AS(load_weight_cache(p1, data.content_id(), std::string(64, '0')), CacheMismatch);
  CHECK_THROWS_AS(load_weight_cache(p1, std::string(64, '0'), model.hash()), CacheMismatch);
  fs::resize_file(p3, fs::file_size(p3) - 4);
  CHECK_THROWS_AS(load_weight_cache(p3, data.content_id(), model.hash()), CacheMismatch);
}

TEST_CASE("weight cache records zero-gradient fallbacks") {
  Architecture arch{3, 16, 16, {}, 10};
  numcore::ParamSet p;
  p.add("dense.w", Tensor<float>({10, 768}));
  p.add("dense.b", Tensor<float>({10}, 1.0f));
  const ClassifierModel flat(arch, std::move(p));
  auto data = dataio::generate_shapes(3, 10, 16, 16);
  auto cache = extract_weight_cache(flat, data);
  CHECK(cache.fallback_images.size() == 10);
  const auto path = temp_path("fallback.bin");
  save_weight_cache(cache, path);
  CHECK(load_weight_cache(path, data.content_id(), flat.hash()).fallback_images == cache.fallback_images);
}
