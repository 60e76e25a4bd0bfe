#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "spjscc/numcore/tape.hpp"

namespace spjscc::channel {

using numcore::NodeId;
using numcore::Tape;
using numcore::Tensor;

// Complex symbols stored as interleaved (re, im) coefficients; symbol k is the
// pair (2k, 2k+1). Inactive symbols carry exactly zero.
struct ComplexSymbolVector {
  std::vector<float> coefficients;
  std::vector<std::uint8_t> active;  // one flag per symbol
  double gamma = 1.0;                 // scale applied by normalize_power

  std::size_t symbols() const { return active.size(); }
  std::size_t active_symbols() const;
  // Mean |e_k|^2 over active symbols.
  double mean_active_power() const;
};

class DegenerateSignal : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Scales the active symbols to unit mean power:
//   gamma = sqrt(s_active / sum_active |e_k|^2).
// Inactive symbols are zeroed. Throws DegenerateSignal if no symbol is active
// or all active coefficients are zero.
ComplexSymbolVector normalize_power(std::span<const float> raw, std::span<const std::uint8_t> active);

struct ChannelConfig {
  double snr_db = 10.0;
  std::uint64_t seed = 0;
  bool noise_enabled = true;
};

// Noise variance per complex symbol for unit signal power.
double noise_variance(double snr_db);

// Adds circular Gaussian noise of total variance 10^(-snr/10) to every active
// symbol (half per real coefficient). Inactive symbols pass unchanged.
std::vector<float> awgn_transmit(const ComplexSymbolVector& e, const ChannelConfig& config);

// Same, drawing from a caller-owned stream so consecutive calls see fresh
// noise.
std::vector<float> awgn_transmit(const ComplexSymbolVector& e, double snr_db, std::mt19937_64& rng);

inline constexpr double kTrainSnrMinDb = 0.0;
inline constexpr double kTrainSnrMaxDb = 20.0;

// Uniform on [0, 20] dB.
double sample_training_snr(std::mt19937_64& rng);

// ---- Differentiable pieces used by the codec on a batch (N, K) of real
// coefficients whose masked-off entries are already zero.

// gamma per row, shape (N, 1): sqrt(active_symbols[n] / sum_k z[n,k]^2).
template <typename T>
NodeId power_scale(Tape<T>& tape, NodeId z, std::span<const std::size_t> active_symbols);

// Elementwise 1 / x.
template <typename T>
NodeId reciprocal(Tape<T>& tape, NodeId x);

// Noise tensor (N, K) for one channel use: zero where `active_coeff` is 0.
template <typename T>
Tensor<T> awgn_noise(const numcore::Shape& shape, std::span<const std::uint8_t> active_coeff,
                     std::span<const double> snr_db, std::mt19937_64& rng);

}  // namespace spjscc::channel
