#include <cmath>
#include <random>

#include "doctest.h"
#include "spjscc/jscc/codec.hpp"
#include "spjscc/numcore/ops.hpp"
#include "support/finite_difference.hpp"

using namespace spjscc;
using namespace spjscc::jscc;
namespace ops = numcore::ops;

namespace {

CodecConfig small_config() {
  CodecConfig c;
  c.height = 16;
  c.width = 16;
  c.features = 8;
  c.selective = 4;
  c.nonselective = 4;
  c.adapt_hidden = 4;
  c.policy_hidden = 6;
  return c;
}

Tensor<float> images(std::size_t n, std::size_t h, std::size_t w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> d(0.0f, 1.0f);
  Tensor<float> t({n, 3, h, w});
  for (float& v : t.values()) v = d(rng);
  return t;
}

EncoderModel encoder_with_policy_bias(const CodecConfig& c, float bias, std::uint64_t seed = 1) {
  auto p = init_encoder_params(c, seed);
  p.get("policy.fc1.w").fill(0.0f);
  p.get("policy.fc1.b").fill(bias);
  return EncoderModel(c, std::move(p));
}

}  // namespace

TEST_CASE("default dims give the documented rate range") {
  CodecConfig c;
  CHECK(c.l_gs() == 512);
  CHECK(c.l_gn() == 512);
  CHECK(c.cpp_min() == 0.25);
  CHECK(c.cpp_max() == 0.5);
  CHECK(channel_usage(c, 4) == 0.375);
  CHECK_THROWS_AS(channel_usage(c, 9), std::invalid_argument);
  CodecConfig bad;
  bad.height = 30;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("encode: full mask transmits every coefficient") {
  const auto c = small_config();
  const auto enc = encoder_with_policy_bias(c, 10.0f);
  std::mt19937_64 rng(0);
  auto out = encode(enc, images(2, 16, 16, 3), 5.0, Mode::kEval, rng);
  REQUIRE(out.symbols.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(out.symbols[i].coefficients.size() == c.l_gs() + c.l_gn());
    CHECK(2 * out.symbols[i].active_symbols() == c.l_gs() + c.l_gn());
    CHECK(out.masks[i] == std::vector<std::uint8_t>(c.selective, 1));
    CHECK(out.symbols[i].mean_active_power() == doctest::Approx(1.0).epsilon(1e-5));
  }
}

TEST_CASE("encode: empty mask sends only g_n, at the lower rate bound") {
  const auto c = small_config();
  const auto enc = encoder_with_policy_bias(c, -10.0f);
  std::mt19937_64 rng(0);
  auto out = encode(enc, images(1, 16, 16, 4), 5.0, Mode::kEval, rng);
  CHECK(2 * out.symbols[0].active_symbols() == c.l_gn());
  CHECK(channel_usage(c, 0) == static_cast<double>(c.l_gn()) / (2.0 * 16 * 16));
  for (std::size_t i = 0; i < c.l_gs(); ++i) CHECK(out.symbols[0].coefficients[i] == 0.0f);
}

TEST_CASE("encode: masked channels are zero, others equal gamma * features") {
  const auto c = small_config();
  auto p = init_encoder_params(c, 2);
  p.get("policy.fc1.w").fill(0.0f);
  p.get("policy.fc1.b") = Tensor<float>({4}, {5.0f, -5.0f, 5.0f, -5.0f});
  const EncoderModel enc(c, p);
  std::mt19937_64 rng(0);
  auto out = encode(enc, images(1, 16, 16, 5), 12.0, Mode::kEval, rng);
  CHECK(out.masks[0] == std::vector<std::uint8_t>{1, 0, 1, 0});
  const auto& sym = out.symbols[0];
  const std::size_t plane = c.grid_h() * c.grid_w();
  for (std::size_t ch = 0; ch < c.channels(); ++ch) {
    for (std::size_t s = 0; s < plane; ++s) {
      const float got = sym.coefficients[ch * plane + s];
      if (ch < c.selective) {
        const float g = out.g_s[ch * plane + s];
        if (out.masks[0][ch]) {
          CHECK(got == doctest::Approx(sym.gamma * g).epsilon(1e-5));
        } else {
          CHECK(got == 0.0f);
        }
      } else {
        CHECK(got == doctest::Approx(sym.gamma * out.g_n[(ch - c.selective) * plane + s]).epsilon(1e-5));
      }
    }
  }
  CHECK(channel_usage(c, 2) == doctest::Approx(2.0 * sym.active_symbols() / (2.0 * 16 * 16)));
}

TEST_CASE("encode: eval mode is bit-identical across calls") {
  const auto c = small_config();
  const EncoderModel enc(c, init_encoder_params(c, 3));
  const auto x = images(3, 16, 16, 6);
  std::mt19937_64 r1(1), r2(99);
  auto a = encode(enc, x, 7.0, Mode::kEval, r1);
  auto b = encode(enc, x, 7.0, Mode::kEval, r2);
  for (std::size_t i = 0; i < 3; ++i) CHECK(a.symbols[i].coefficients == b.symbols[i].coefficients);
  CHECK_THROWS_AS(encode(enc, images(1, 12, 12, 1), 7.0, Mode::kEval, r1), numcore::ShapeError);
}

TEST_CASE("policy_mask: eval thresholds, saturation") {
  numcore::Tape<double> tape;
  std::mt19937_64 rng(3);
  auto logits = tape.constant(Tensor<double>({1, 2}, {10.0, -10.0}));
  auto m = policy_mask(tape, logits, 1.0, Mode::kEval, rng);
  CHECK(tape.value(m) == Tensor<double>({1, 2}, {1.0, 0.0}));

  auto many = tape.constant(testing::random_tensor({4, 8}, rng, -3, 3));
  for (double v : tape.value(policy_mask(tape, many, 1.0, Mode::kEval, rng)).values()) {
    CHECK((v == 0.0 || v == 1.0));
  }
  for (double v : tape.value(policy_mask(tape, many, 0.7, Mode::kTrain, rng)).values()) {
    CHECK((v == 0.0 || v == 1.0));
  }
}

TEST_CASE("straight-through gate: hard forward, soft-sample derivative backward") {
  numcore::Tape<double> tape;
  auto l = tape.variable(Tensor<double>({1, 3}, {0.3, -1.2, 2.0}));
  const Tensor<double> noise({1, 3}, {0.1, 0.4, -2.5});
  const double tau = 0.8;
  auto m = straight_through_gate(tape, l, noise, tau);
  CHECK(tape.value(m) == Tensor<double>({1, 3}, {1.0, 0.0, 0.0}));
  auto g = tape.backward(ops::sum(tape, m));
  for (std::size_t i = 0; i < 3; ++i) {
    const double s = 1.0 / (1.0 + std::exp(-(tape.value(l)[i] + noise[i]) / tau));
    CHECK(g[l][i] == doctest::Approx(s * (1 - s) / tau).epsilon(1e-12));
  }
  CHECK_THROWS_AS(straight_through_gate(tape, l, noise, 0.0), std::invalid_argument);
}

TEST_CASE("policy gradient flows through the straight-through path") {
  const auto c = small_config();
  const auto params = init_encoder_params(c, 4);
  numcore::Tape<double> tape;
  const auto p = numcore::bind<double>(tape, params, true);
  std::mt19937_64 rng(5);
  auto x = tape.constant(images(2, 16, 16, 7).cast<double>());
  auto g = encode_graph<double>(tape, p, c, x, 10.0, Mode::kTrain, 1.0, rng);
  auto target = ops::sum(tape, ops::mul(tape, g.g_s, g.mask));
  auto grads = tape.backward(target);
  double mag = 0.0;
  for (const char* name : {"policy.fc0.w", "policy.fc1.w", "policy.fc1.b"}) {
    for (double v : grads[p[name]].values()) mag += std::abs(v);
  }
  CHECK(mag > 0.0);
}

TEST_CASE("snr_adapt: shape, bounded scales, snr sensitivity") {
  numcore::ParamSet params;
  std::mt19937_64 rng(6);
  params.add("af.fc0.w", numcore::he_normal({5, 5}, 5, rng));
  params.add("af.fc0.b", Tensor<float>({5}));
  params.add("af.fc1.w", numcore::he_normal({4, 5}, 5, rng));
  params.add("af.fc1.b", Tensor<float>({4}));
  numcore::Tape<double> tape;
  const auto p = numcore::bind<double>(tape, params, false);
  auto f = tape.constant(testing::random_tensor({2, 4, 3, 3}, rng, 0.1, 1.0));
  auto lo = snr_adapt(tape, p, "af", f, 0.0);
  auto hi = snr_adapt(tape, p, "af", f, 20.0);
  CHECK(tape.shape(lo) == tape.shape(f));
  for (std::size_t i = 0; i < tape.value(f).size(); ++i) {
    const double ratio = tape.value(lo)[i] / tape.value(f)[i];
    CHECK(ratio > 0.0);
    CHECK(ratio < 1.0);
  }
  CHECK_FALSE(tape.value(lo) == tape.value(hi));
}

TEST_CASE("decode: shape, range, determinism, malformed input") {
  const auto c = small_config();
  const EncoderModel enc(c, init_encoder_params(c, 7));
  const DecoderModel dec(c, init_decoder_params(c, 8));
  std::mt19937_64 rng(0);
  auto e = encode(enc, images(2, 16, 16, 8), 3.0, Mode::kEval, rng);
  auto x1 = decode(dec, e.symbols, e.masks, 3.0);
  auto x2 = decode(dec, e.symbols, e.masks, 3.0);
  CHECK(x1.shape() == numcore::Shape{2, 3, 16, 16});
  CHECK(x1 == x2);
  for (float v : x1.values()) {
    CHECK(v > 0.0f);
    CHECK(v < 1.0f);
  }
  auto short_sym = e.symbols;
  short_sym[0].coefficients.pop_back();
  CHECK_THROWS_AS(decode(dec, short_sym, e.masks, 3.0), std::invalid_argument);
  auto flipped = e.masks;
  flipped[1][0] = !flipped[1][0];
  CHECK_THROWS_AS(decode(dec, e.symbols, flipped, 3.0), std::invalid_argument);
}

TEST_CASE("transmit: noiseless equals decode(encode), noisy is seed-deterministic") {
  const auto c = small_config();
  const EncoderModel enc(c, init_encoder_params(c, 9));
  const DecoderModel dec(c, init_decoder_params(c, 10));
  const auto x = images(3, 16, 16, 9);
  std::mt19937_64 rng(0);
  auto e = encode(enc, x, 5.0, Mode::kEval, rng);
  auto clean = transmit(enc, dec, x, channel::ChannelConfig{5.0, 1, false});
  CHECK(clean.reconstruction == decode(dec, e.symbols, e.masks, 5.0));
  auto n1 = transmit(enc, dec, x, channel::ChannelConfig{5.0, 1, true});
  auto n2 = transmit(enc, dec, x, channel::ChannelConfig{5.0, 1, true});
  CHECK(n1.reconstruction == n2.reconstruction);
  CHECK_FALSE(n1.reconstruction == clean.reconstruction);
}

TEST_CASE("codec graph gradients match finite differences (64-bit, eval mask)") {
  CodecConfig c;
  c.height = 8;
  c.width = 8;
  c.features = 4;
  c.selective = 2;
  c.nonselective = 2;
  c.adapt_hidden = 3;
  c.policy_hidden = 3;
  auto enc = init_encoder_params(c, 11);
  enc.get("policy.fc1.b") = Tensor<float>({2}, {3.0f, -3.0f});
  const auto dec = init_decoder_params(c, 12);

  const std::vector<std::string> enc_names{"es.conv0.w", "es.af0.fc1.w", "ec.conv1.w", "es.act3"};
  const std::vector<std::string> dec_names{"dc.conv0.w", "ds.tconv0.w", "ds.conv1.b", "ds.af0.fc0.w"};
  std::vector<Tensor<double>> inputs{images(2, 8, 8, 10).cast<double>()};
  for (const auto& n : enc_names) inputs.push_back(enc.get(n).cast<double>());
  for (const auto& n : dec_names) inputs.push_back(dec.get(n).cast<double>());

  std::mt19937_64 noise_rng(3);
  Tensor<double> noise({2, 1, c.coefficients()});
  for (double& v : noise.values()) v = std::normal_distribution<double>(0.0, 0.1)(noise_rng);

  testing::GraphBuilder build = [&](numcore::Tape<double>& t, const std::vector<numcore::NodeId>& l) {
    auto be = numcore::bind<double>(t, enc, false);
    auto bd = numcore::bind<double>(t, dec, false);
    for (std::size_t i = 0; i < enc_names.size(); ++i) be.rebind(enc_names[i], l[1 + i]);
    for (std::size_t i = 0; i < dec_names.size(); ++i) bd.rebind(dec_names[i], l[1 + enc_names.size() + i]);
    std::mt19937_64 unused(0);
    auto g = encode_graph<double>(t, be, c, l[0], 6.0, Mode::kEval, 1.0, unused);
    auto received = ops::add(t, g.e, t.constant(noise));
    return testing::project(t, decode_graph<double>(t, bd, c, received, g.gamma, 6.0), 31);
  };
  // Gradients here are ~1e-4 and the graph is deep, so h = 1e-5 sits in the
  // roundoff-dominated regime; 1e-4 balances roundoff against truncation.
  const auto analytic = testing::analytic_gradients(build, inputs);
  const auto numeric = testing::numeric_gradients(build, inputs, 1e-4);
  CHECK(testing::max_relative_error(analytic, numeric) < 1e-4);
}

TEST_CASE("every encoder parameter receives a finite, nonzero gradient (train mode)") {
  const auto c = small_config();
  const auto enc = init_encoder_params(c, 13);
  const auto dec = init_decoder_params(c, 14);
  numcore::Tape<float> tape;
  const auto be = numcore::bind<float>(tape, enc, true);
  const auto bd = numcore::bind<float>(tape, dec, true);
  std::mt19937_64 rng(15);
  const auto xv = images(4, 16, 16, 11);
  auto x = tape.constant(xv);
  auto g = encode_graph<float>(tape, be, c, x, 8.0, Mode::kTrain, 2.0f, rng);
  auto xr = decode_graph<float>(tape, bd, c, g.e, g.gamma, 8.0);
  Tensor<float> w(xv.shape());
  std::uniform_real_distribution<float> d(0.0f, 1.0f);
  for (float& v : w.values()) v = d(rng);
  auto diff = ops::sub(tape, xr, x);
  auto loss = ops::sum(tape, ops::mul(tape, ops::mul(tape, diff, diff), tape.constant(w)));
  auto grads = tape.backward(loss);
  for (const auto& [name, id] : be.nodes()) {
    double mag = 0.0;
    for (float v : grads[id].values()) {
      REQUIRE(std::isfinite(v));
      mag += std::abs(v);
    }
    CHECK_MESSAGE(mag > 0.0, name);
  }
}
