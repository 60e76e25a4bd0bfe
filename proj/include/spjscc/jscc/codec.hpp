#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "spjscc/channel/channel.hpp"
#include "spjscc/numcore/params.hpp"

namespace spjscc::jscc {

using numcore::BoundParams;
using numcore::NodeId;
using numcore::ParamSet;
using numcore::Tape;
using numcore::Tensor;

// Codec dimensions. The encoder downsamples by 4, so the transmitted grid is
// (H/4, W/4) with `selective` + `nonselective` channels.
struct CodecConfig {
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t features = 32;      // width of E_S / E_C / D_C / D_S
  std::size_t selective = 8;      // F_s
  std::size_t nonselective = 8;   // F_n
  std::size_t adapt_hidden = 16;  // hidden units of each SNR-adaptive MLP
  std::size_t policy_hidden = 32;
  float policy_bias_init = 2.0f;  // start with every selective channel on

  void validate() const;
  std::size_t grid_h() const { return height / 4; }
  std::size_t grid_w() const { return width / 4; }
  std::size_t channels() const { return selective + nonselective; }
  std::size_t coefficients() const { return channels() * grid_h() * grid_w(); }
  std::size_t l_gs() const { return selective * grid_h() * grid_w(); }
  std::size_t l_gn() const { return nonselective * grid_h() * grid_w(); }
  double cpp_min() const;
  double cpp_max() const;
  friend bool operator==(const CodecConfig&, const CodecConfig&) = default;
};

// Channel usage per pixel: (active selective coefficients + L(g_n)) / (2HW).
double channel_usage(const CodecConfig& config, std::size_t active_selective_channels);

enum class Mode { kTrain, kEval };

// theta1: E_S (4 convs, two with stride 2), E_C (2 convs), the policy MLP and
// the SNR-adaptive modules between them. theta2: D_C (2 convs), D_S
// (two stride-2 transposed convs with a conv after each, sigmoid output).
ParamSet init_encoder_params(const CodecConfig& config, std::uint64_t seed);
ParamSet init_decoder_params(const CodecConfig& config, std::uint64_t seed);

class EncoderModel {
 public:
  EncoderModel(CodecConfig config, ParamSet params);
  const CodecConfig& config() const { return config_; }
  const ParamSet& params() const { return params_; }
  ParamSet& mutable_params() { return params_; }

 private:
  CodecConfig config_;
  ParamSet params_;
};

class DecoderModel {
 public:
  DecoderModel(CodecConfig config, ParamSet params);
  const CodecConfig& config() const { return config_; }
  const ParamSet& params() const { return params_; }
  ParamSet& mutable_params() { return params_; }

 private:
  CodecConfig config_;
  ParamSet params_;
};

// ---- Graph builders. `prefix` selects the module's parameters.

// Rescales (N,C,H,W) features channelwise by sigmoid(MLP(gmp(f) ++ snr/20)).
template <typename T>
NodeId snr_adapt(Tape<T>& tape, const BoundParams<T>& p, const std::string& prefix, NodeId features,
                 double snr_db);

// Straight-through Gumbel-sigmoid: forward value is the hard sample
// [sigmoid((logit + noise) / tau) > 0.5]; the backward pass uses the
// derivative of the soft sample. `noise` holds logistic samples.
template <typename T>
NodeId straight_through_gate(Tape<T>& tape, NodeId logits, Tensor<T> noise, T temperature);

// Mask node (N, F_s). Train mode draws logistic noise from `rng` and uses the
// straight-through gate; eval mode thresholds sigmoid(logit) > 0.5 and
// records a constant.
template <typename T>
NodeId policy_mask(Tape<T>& tape, NodeId logits, T temperature, Mode mode, std::mt19937_64& rng);

template <typename T>
struct EncodedGraph {
  NodeId g_s, g_n, logits, mask;
  NodeId z;      // (N, 1, K) masked coefficients before normalization
  NodeId gamma;  // (N, 1)
  NodeId e;      // (N, 1, K) power-normalized
  std::vector<std::uint8_t> active_coeff;  // N*K flags
  std::vector<std::size_t> active_symbols;
  std::vector<std::size_t> active_selective;  // per image
};

template <typename T>
EncodedGraph<T> encode_graph(Tape<T>& tape, const BoundParams<T>& p, const CodecConfig& config,
                             NodeId x, double snr_db, Mode mode, T temperature, std::mt19937_64& rng);

// x' (N,3,H,W) from received coefficients (N,1,K): divides by gamma, then D_C, D_S.
template <typename T>
NodeId decode_graph(Tape<T>& tape, const BoundParams<T>& p, const CodecConfig& config,
                    NodeId received, NodeId gamma, double snr_db);

// ---- Plain-value interface.

struct Encoding {
  Tensor<float> g_s;  // (N, F_s, H/4, W/4)
  Tensor<float> g_n;
  std::vector<std::vector<std::uint8_t>> masks;     // per image, F_s entries
  std::vector<channel::ComplexSymbolVector> symbols;  // per image, normalized
};

// x (N,3,H,W) in [0,1]. Eval mode is deterministic and ignores the rng.
Encoding encode(const EncoderModel& encoder, const Tensor<float>& x, double snr_db, Mode mode,
                std::mt19937_64& rng, float temperature = 0.5f);

// received[i].coefficients are e' for image i; gamma comes from the encoder.
// Coefficients of masked-off channels are replaced by 0.
Tensor<float> decode(const DecoderModel& decoder, std::span<const channel::ComplexSymbolVector> received,
                     const std::vector<std::vector<std::uint8_t>>& masks, double snr_db);

struct Transmission {
  Tensor<float> reconstruction;
  std::vector<std::size_t> active_selective;
};

// encode (eval mode) -> AWGN at channel.snr_db -> decode, in fixed-size
// chunks. Noise comes from one stream seeded with channel.seed.
Transmission transmit(const EncoderModel& encoder, const DecoderModel& decoder, const Tensor<float>& x,
                      const channel::ChannelConfig& channel);

}  // namespace spjscc::jscc
