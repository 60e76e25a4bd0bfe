#include <cmath>
#include <random>

#include "doctest.h"
#include "spjscc/channel/channel.hpp"
#include "spjscc/numcore/ops.hpp"
#include "support/finite_difference.hpp"

using namespace spjscc;
using namespace spjscc::channel;

namespace {

// Unit-power symbols with random phase.
ComplexSymbolVector unit_symbols(std::size_t s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> phase(0.0, 2 * 3.141592653589793);
  std::vector<float> raw(2 * s);
  for (std::size_t k = 0; k < s; ++k) {
    const double a = phase(rng);
    raw[2 * k] = static_cast<float>(std::cos(a));
    raw[2 * k + 1] = static_cast<float>(std::sin(a));
  }
  std::vector<std::uint8_t> active(s, 1);
  return normalize_power(raw, active);
}

}  // namespace

TEST_CASE("normalize_power: total power 16 over 4 symbols halves the coefficients") {
  const std::vector<float> raw{2, 0, 0, 2, -2, 0, 0, -2};
  const std::vector<std::uint8_t> active(4, 1);
  auto e = normalize_power(raw, active);
  CHECK(e.gamma == doctest::Approx(0.5));
  for (std::size_t i = 0; i < raw.size(); ++i) CHECK(e.coefficients[i] == doctest::Approx(raw[i] / 2));
  CHECK(e.mean_active_power() == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("normalize_power: unit power is left unchanged") {
  auto e = unit_symbols(64, 3);
  auto again = normalize_power(e.coefficients, e.active);
  CHECK(again.gamma == doctest::Approx(1.0).epsilon(1e-6));
  for (std::size_t i = 0; i < e.coefficients.size(); ++i) {
    CHECK(again.coefficients[i] == doctest::Approx(e.coefficients[i]).epsilon(1e-6));
  }
}

TEST_CASE("normalize_power: masked symbols do not enter the mean and are zeroed") {
  const std::vector<float> raw{1, 0, 0, 1, 5, 5, 5, 5};
  const std::vector<std::uint8_t> active{1, 1, 0, 0};
  auto e = normalize_power(raw, active);
  CHECK(e.gamma == 1.0);
  CHECK(e.coefficients == std::vector<float>{1, 0, 0, 1, 0, 0, 0, 0});
  CHECK(e.active_symbols() == 2);
}

TEST_CASE("normalize_power: degenerate and malformed inputs") {
  const std::vector<float> zeros(4, 0.0f);
  CHECK_THROWS_AS(normalize_power(zeros, std::vector<std::uint8_t>{1, 1}), DegenerateSignal);
  CHECK_THROWS_AS(normalize_power(std::vector<float>{1, 1, 1, 1}, std::vector<std::uint8_t>{0, 0}), DegenerateSignal);
  CHECK_THROWS_AS(normalize_power(std::vector<float>{1, 1, 1}, std::vector<std::uint8_t>{1, 1}), std::invalid_argument);
  CHECK_THROWS_AS(normalize_power(std::vector<float>{NAN, 1}, std::vector<std::uint8_t>{1}), std::invalid_argument);
}

TEST_CASE("awgn: noiseless channel is the identity") {
  auto e = unit_symbols(32, 1);
  CHECK(awgn_transmit(e, ChannelConfig{-5.0, 9, false}) == e.coefficients);
}

TEST_CASE("awgn: 0 dB means unit noise variance per complex symbol") {
  CHECK(noise_variance(0.0) == 1.0);
  CHECK(noise_variance(10.0) == doctest::Approx(0.1));
  CHECK(noise_variance(20.0) == doctest::Approx(0.01));
}

TEST_CASE("awgn: empirical SNR and per-coefficient energy at 10 dB over 1e6 symbols") {
  auto e = unit_symbols(1'000'000, 5);
  auto out = awgn_transmit(e, ChannelConfig{10.0, 17, true});
  double noise = 0.0, signal = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double d = static_cast<double>(out[i]) - e.coefficients[i];
    noise += d * d;
    signal += static_cast<double>(e.coefficients[i]) * e.coefficients[i];
  }
  const double snr = 10.0 * std::log10(signal / noise);
  CHECK(snr >= 9.8);
  CHECK(snr <= 10.2);
  // Energy bookkeeping: per real coefficient the noise variance is sigma^2 / 2.
  const double per_real = noise / static_cast<double>(out.size());
  CHECK(std::abs(per_real / (noise_variance(10.0) / 2) - 1.0) < 0.02);
}

TEST_CASE("awgn: inactive symbols stay at zero and seeds are reproducible") {
  const std::vector<float> raw{1, 1, 3, 3, 1, -1, 2, 2};
  const std::vector<std::uint8_t> active{1, 0, 1, 0};
  auto e = normalize_power(raw, active);
  auto a = awgn_transmit(e, ChannelConfig{0.0, 4, true});
  CHECK(a[2] == 0.0f);
  CHECK(a[3] == 0.0f);
  CHECK(a[6] == 0.0f);
  CHECK(a[7] == 0.0f);
  CHECK(a == awgn_transmit(e, ChannelConfig{0.0, 4, true}));
  CHECK(a != awgn_transmit(e, ChannelConfig{0.0, 5, true}));
}

TEST_CASE("training SNR: range, mean, reproducibility") {
  std::mt19937_64 rng(8);
  double sum = 0.0, lo = 1e9, hi = -1e9;
  for (int i = 0; i < 100000; ++i) {
    const double s = sample_training_snr(rng);
    sum += s;
    lo = std::min(lo, s);
    hi = std::max(hi, s);
  }
  CHECK(sum / 100000 >= 9.8);
  CHECK(sum / 100000 <= 10.2);
  CHECK(lo >= 0.0);
  CHECK(hi <= 20.0);
  std::mt19937_64 a(3), b(3);
  for (int i = 0; i < 10; ++i) CHECK(sample_training_snr(a) == sample_training_snr(b));
}

TEST_CASE("power_scale on the tape matches normalize_power and its gradient") {
  const std::vector<float> raw{1, 2, 0, 0, -1, 3, 0, 0};
  const std::vector<std::uint8_t> active{1, 0, 1, 0};
  auto ref = normalize_power(raw, active);

  numcore::Tape<double> tape;
  auto z = tape.variable(Tensor<double>({1, 8}, {1, 2, 0, 0, -1, 3, 0, 0}));
  const std::vector<std::size_t> counts{2};
  auto gamma = power_scale(tape, z, std::span<const std::size_t>(counts));
  CHECK(tape.value(gamma)[0] == doctest::Approx(ref.gamma).epsilon(1e-12));

  testing::GraphBuilder build = [counts](numcore::Tape<double>& t, const std::vector<numcore::NodeId>& l) {
    return numcore::ops::sum(t, power_scale(t, l[0], std::span<const std::size_t>(counts)));
  };
  std::mt19937_64 rng(2);
  CHECK(testing::gradient_check(build, {testing::random_tensor_off_zero({1, 8}, rng)}) < 1e-6);
}

TEST_CASE("noise on the tape is gradient-transparent") {
  numcore::Tape<double> tape;
  auto e = tape.variable(Tensor<double>({1, 4}, {0.5, -0.5, 1.0, 0.2}));
  std::mt19937_64 rng(1);
  const std::vector<std::uint8_t> mask{1, 1, 1, 1};
  const std::vector<double> snr{5.0};
  auto noisy = numcore::ops::add(tape, e, tape.constant(awgn_noise<double>({1, 4}, mask, snr, rng)));
  auto w = tape.constant(Tensor<double>({1, 4}, {1, 2, 3, 4}));
  auto loss = numcore::ops::sum(tape, numcore::ops::mul(tape, noisy, w));
  auto g = tape.backward(loss);
  CHECK(g[e] == tape.value(w));
  CHECK(g[e] == g[noisy]);
}
