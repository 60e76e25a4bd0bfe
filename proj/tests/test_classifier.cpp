#include <algorithm>
#include <numeric>
#include <random>

#include "doctest.h"
#include "spjscc/classifier/classifier.hpp"
#include "spjscc/numcore/ops.hpp"

using namespace spjscc;
using namespace spjscc::classifier;
using numcore::Shape;

namespace {

// One dense layer over a 3x2x2 image: logits = A x + b.
ClassifierModel tiny_dense(const std::vector<float>& a, const std::vector<float>& b) {
  Architecture arch{3, 2, 2, {}, 2};
  ParamSet p;
  p.add("dense.w", Tensor<float>({2, 12}, a));
  p.add("dense.b", Tensor<float>({2}, b));
  return ClassifierModel(arch, std::move(p));
}

Architecture small_arch() { return Architecture{3, 32, 32, {8, 16, 16}, 10}; }

const ClassifierModel& small_trained() {
  static const ClassifierModel model = [] {
    auto train = dataio::generate_shapes(21, 400, 32, 32);
    return pretrain_classifier(train, PretrainConfig{15, 3e-3f, 32, 5}, small_arch());
  }();
  return model;
}

}  // namespace

TEST_CASE("dense-only model: logits are the manual matrix product") {
  std::vector<float> a(24), x(12);
  for (std::size_t i = 0; i < 24; ++i) a[i] = 0.1f * static_cast<float>(i) - 1.0f;
  for (std::size_t i = 0; i < 12; ++i) x[i] = 0.05f * static_cast<float>(i);
  auto model = tiny_dense(a, {0.5f, -0.25f});
  auto r = perceive(model, Tensor<float>({1, 3, 2, 2}, x));
  REQUIRE(r.size() == 1);
  for (std::size_t c = 0; c < 2; ++c) {
    double expect = c == 0 ? 0.5 : -0.25;
    for (std::size_t i = 0; i < 12; ++i) expect += static_cast<double>(a[c * 12 + i]) * x[i];
    CHECK(r[0].logits[c] == doctest::Approx(expect).epsilon(1e-6));
  }
  CHECK(r[0].predicted == (r[0].logits[0] >= r[0].logits[1] ? 0 : 1));
}

TEST_CASE("perceive: probabilities, argmax, duplicate positions") {
  auto model = ClassifierModel(small_arch(), init_params(small_arch(), 3));
  auto d = dataio::generate_shapes(2, 10, 32, 32);
  auto img = dataio::gather(d, {4, 1, 4}).images;
  auto r = perceive(model, img);
  REQUIRE(r.size() == 3);
  for (const auto& p : r) {
    REQUIRE(p.logits.size() == 10);
    CHECK(std::accumulate(p.probabilities.begin(), p.probabilities.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(p.predicted == std::max_element(p.logits.begin(), p.logits.end()) - p.logits.begin());
  }
  CHECK(r[0].logits == r[2].logits);
}

TEST_CASE("forward: logits shape and frozen parameters") {
  auto model = ClassifierModel(small_arch(), init_params(small_arch(), 3));
  const std::string before = model.hash();
  numcore::Tape<double> tape;
  auto d = dataio::generate_shapes(2, 10, 32, 32);
  auto x = tape.variable(dataio::gather(d, {0, 1, 2, 3, 4}).images.cast<double>());
  auto logits = model.forward(tape, x);
  CHECK(tape.shape(logits) == Shape{5, 10});
  auto g = tape.backward(numcore::ops::sum(tape, logits));
  CHECK(g.reached(x));
  for (std::size_t i = 0; i < tape.size(); ++i) {
    const numcore::NodeId id{x.tape, i};
    if (tape.kind(id) == numcore::OpKind::kLeaf && id != x) CHECK_FALSE(tape.requires_grad(id));
  }
  CHECK(model.hash() == before);
}

TEST_CASE("shape mismatches are rejected") {
  auto model = ClassifierModel(small_arch(), init_params(small_arch(), 3));
  CHECK_THROWS_AS(perceive(model, Tensor<float>({1, 3, 16, 16})), numcore::ShapeError);
  ParamSet bad = init_params(small_arch(), 3);
  bad.get("dense.b") = Tensor<float>({9});
  CHECK_THROWS_AS(ClassifierModel(small_arch(), bad), numcore::ShapeError);
  CHECK_THROWS_AS((Architecture{3, 30, 30, {8, 8, 8}, 10}.validate()), std::invalid_argument);
}

TEST_CASE("classify_accuracy: perfect, empty, permuted labels") {
  const auto& model = small_trained();
  auto test = dataio::generate_shapes(77, 400, 32, 32, dataio::Split::kTest);
  const auto pred = predict(model, test.images);
  CHECK(classify_accuracy(model, test.images, pred) == 1.0);
  CHECK_THROWS_AS(classify_accuracy(model, test.images, std::span<const int>{}), std::invalid_argument);

  const double acc = classify_accuracy(model, test);
  CHECK(acc > 0.2);
  auto shuffled = test.labels;
  std::mt19937_64 rng(4);
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  const double chance = classify_accuracy(model, test.images, shuffled);
  CHECK(chance < 0.18);
  CHECK(chance > 0.03);
}

TEST_CASE("pretraining is deterministic per seed") {
  auto train = dataio::generate_shapes(21, 60, 32, 32);
  const PretrainConfig cfg{1, 1e-3f, 16, 9};
  auto a = pretrain_classifier(train, cfg, small_arch());
  auto b = pretrain_classifier(train, cfg, small_arch());
  CHECK(a.hash() == b.hash());
  auto c = pretrain_classifier(train, PretrainConfig{1, 1e-3f, 16, 10}, small_arch());
  CHECK(a.hash() != c.hash());
}

TEST_CASE("pretraining rejects a class-count mismatch") {
  auto train = dataio::generate_shapes(21, 20, 32, 32);
  auto arch = small_arch();
  arch.classes = 5;
  CHECK_THROWS_AS(pretrain_classifier(train, PretrainConfig{}, arch), std::invalid_argument);
}
