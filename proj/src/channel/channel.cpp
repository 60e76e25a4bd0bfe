#include "spjscc/channel/channel.hpp"

#include <cmath>
#include <string>

namespace spjscc::channel {

std::size_t ComplexSymbolVector::active_symbols() const {
  std::size_t n = 0;
  for (auto a : active) n += a != 0;
  return n;
}

double ComplexSymbolVector::mean_active_power() const {
  double p = 0.0;
  for (std::size_t k = 0; k < active.size(); ++k) {
    if (!active[k]) continue;
    const double re = coefficients[2 * k], im = coefficients[2 * k + 1];
    p += re * re + im * im;
  }
  return p / static_cast<double>(active_symbols());
}

ComplexSymbolVector normalize_power(std::span<const float> raw, std::span<const std::uint8_t> active) {
  if (raw.size() != 2 * active.size()) {
    throw std::invalid_argument("normalize_power: " + std::to_string(raw.size()) +
                                " coefficients for " + std::to_string(active.size()) + " symbols");
  }
  double energy = 0.0;
  std::size_t count = 0;
  for (std::size_t k = 0; k < active.size(); ++k) {
    if (!std::isfinite(raw[2 * k]) || !std::isfinite(raw[2 * k + 1])) {
      throw std::invalid_argument("normalize_power: non-finite coefficient at symbol " + std::to_string(k));
    }
    if (!active[k]) continue;
    ++count;
    energy += static_cast<double>(raw[2 * k]) * raw[2 * k] + static_cast<double>(raw[2 * k + 1]) * raw[2 * k + 1];
  }
  if (count == 0) throw DegenerateSignal("normalize_power: no active symbol");
  if (energy == 0.0) throw DegenerateSignal("normalize_power: active coefficients are all zero");

  ComplexSymbolVector out;
  out.active.assign(active.begin(), active.end());
  out.gamma = std::sqrt(static_cast<double>(count) / energy);
  out.coefficients.assign(raw.size(), 0.0f);
  for (std::size_t k = 0; k < active.size(); ++k) {
    if (!active[k]) continue;
    out.coefficients[2 * k] = static_cast<float>(out.gamma * raw[2 * k]);
    out.coefficients[2 * k + 1] = static_cast<float>(out.gamma * raw[2 * k + 1]);
  }
  return out;
}

double noise_variance(double snr_db) { return std::pow(10.0, -snr_db / 10.0); }

std::vector<float> awgn_transmit(const ComplexSymbolVector& e, double snr_db, std::mt19937_64& rng) {
  if (!std::isfinite(snr_db)) throw std::invalid_argument("awgn_transmit: snr_db must be finite");
  std::vector<float> out = e.coefficients;
  std::normal_distribution<double> gauss(0.0, std::sqrt(noise_variance(snr_db) / 2.0));
  for (std::size_t k = 0; k < e.active.size(); ++k) {
    if (!e.active[k]) continue;
    out[2 * k] = static_cast<float>(out[2 * k] + gauss(rng));
    out[2 * k + 1] = static_cast<float>(out[2 * k + 1] + gauss(rng));
  }
  return out;
}

std::vector<float> awgn_transmit(const ComplexSymbolVector& e, const ChannelConfig& config) {
  if (!config.noise_enabled) return e.coefficients;
  std::mt19937_64 rng(config.seed);
  return awgn_transmit(e, config.snr_db, rng);
}

double sample_training_snr(std::mt19937_64& rng) {
  return std::uniform_real_distribution<double>(kTrainSnrMinDb, kTrainSnrMaxDb)(rng);
}

template <typename T>
NodeId power_scale(Tape<T>& tape, NodeId z, std::span<const std::size_t> active_symbols) {
  const Tensor<T>& zv = tape.value(z);
  if (zv.rank() != 2 || zv.dim(0) != active_symbols.size()) {
    throw numcore::ShapeError("power_scale: input " + numcore::to_string(zv.shape()) + " with " +
                              std::to_string(active_symbols.size()) + " rows of symbol counts");
  }
  const std::size_t n = zv.dim(0), k = zv.dim(1);
  Tensor<T> gamma({n, 1});
  std::vector<T> energy(n, T{0});
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t i = 0; i < k; ++i) energy[r] += zv[r * k + i] * zv[r * k + i];
    if (active_symbols[r] == 0 || energy[r] == T{0}) {
      throw DegenerateSignal("power_scale: row " + std::to_string(r) + " has no active energy");
    }
    gamma[r] = std::sqrt(static_cast<T>(active_symbols[r]) / energy[r]);
  }
  return tape.record(numcore::OpKind::kCustom, "power_scale", std::move(gamma), {z},
                     [z, k, energy](const Tape<T>& t, const Tensor<T>& out, const Tensor<T>& g,
                                    std::span<Tensor<T>* const> gin) {
                       // d gamma / d z_i = -gamma * z_i / energy
                       const Tensor<T>& zv = t.value(z);
                       for (std::size_t r = 0; r < energy.size(); ++r) {
                         const T f = -g[r] * out[r] / energy[r];
                         for (std::size_t i = 0; i < k; ++i) (*gin[0])[r * k + i] += f * zv[r * k + i];
                       }
                     });
}

template <typename T>
NodeId reciprocal(Tape<T>& tape, NodeId x) {
  Tensor<T> out = tape.value(x);
  for (T& v : out.values()) {
    if (v == T{0}) throw numcore::NonFiniteError("reciprocal: zero input");
    v = T{1} / v;
  }
  return tape.record(numcore::OpKind::kCustom, "reciprocal", std::move(out), {x},
                     [](const Tape<T>&, const Tensor<T>& out, const Tensor<T>& g,
                        std::span<Tensor<T>* const> gin) {
                       for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] -= g[i] * out[i] * out[i];
                     });
}

template <typename T>
Tensor<T> awgn_noise(const numcore::Shape& shape, std::span<const std::uint8_t> active_coeff,
                     std::span<const double> snr_db, std::mt19937_64& rng) {
  Tensor<T> noise(shape);
  if (shape.size() != 2 || active_coeff.size() != noise.size() || snr_db.size() != shape[0] ||
      shape[1] % 2 != 0) {
    throw numcore::ShapeError("awgn_noise: shape " + numcore::to_string(shape) +
                              " inconsistent with mask/snr sizes");
  }
  const std::size_t k = shape[1];
  for (std::size_t r = 0; r < shape[0]; ++r) {
    std::normal_distribution<double> gauss(0.0, std::sqrt(noise_variance(snr_db[r]) / 2.0));
    for (std::size_t i = 0; i < k; i += 2) {
      const std::size_t at = r * k + i;
      if (!active_coeff[at]) continue;
      noise[at] = static_cast<T>(gauss(rng));
      noise[at + 1] = static_cast<T>(gauss(rng));
    }
  }
  return noise;
}

template NodeId power_scale<float>(Tape<float>&, NodeId, std::span<const std::size_t>);
template NodeId power_scale<double>(Tape<double>&, NodeId, std::span<const std::size_t>);
template NodeId reciprocal<float>(Tape<float>&, NodeId);
template NodeId reciprocal<double>(Tape<double>&, NodeId);
template Tensor<float> awgn_noise<float>(const numcore::Shape&, std::span<const std::uint8_t>,
                                         std::span<const double>, std::mt19937_64&);
template Tensor<double> awgn_noise<double>(const numcore::Shape&, std::span<const std::uint8_t>,
                                           std::span<const double>, std::mt19937_64&);

}  // namespace spjscc::channel
