#include "spjscc/jscc/codec.hpp"

#include <algorithm>
#include <cmath>

#include "spjscc/numcore/ops.hpp"

namespace spjscc::jscc {

namespace ops = numcore::ops;
using numcore::Shape;

namespace {

constexpr std::size_t kChunk = 100;
constexpr float kPreluInit = 0.25f;

struct Builder {
  ParamSet& p;
  std::mt19937_64& rng;

  void conv(const std::string& name, std::size_t co, std::size_t ci) {
    p.add(name + ".w", numcore::he_normal({co, ci, 3, 3}, ci * 9, rng));
    p.add(name + ".b", Tensor<float>({co}));
  }
  // Transposed conv weights are (Ci, Co, K, K); each output sees about
  // Ci * 9 / 4 inputs at stride 2.
  void tconv(const std::string& name, std::size_t ci, std::size_t co) {
    p.add(name + ".w", numcore::he_normal({ci, co, 3, 3}, std::max<std::size_t>(1, ci * 9 / 4), rng));
    p.add(name + ".b", Tensor<float>({co}));
  }
  void prelu(const std::string& name, std::size_t c) { p.add(name, Tensor<float>({c}, kPreluInit)); }
  void dense(const std::string& name, std::size_t out, std::size_t in) {
    p.add(name + ".w", numcore::he_normal({out, in}, in, rng));
    p.add(name + ".b", Tensor<float>({out}));
  }
  void adapt(const std::string& name, std::size_t c, std::size_t hidden) {
    dense(name + ".fc0", hidden, c + 1);
    dense(name + ".fc1", c, hidden);
  }
};

void check_params(const char* what, const ParamSet& expected, const ParamSet& got) {
  if (expected.size() != got.size()) {
    throw std::invalid_argument(std::string(what) + ": expected " + std::to_string(expected.size()) +
                                " parameter tensors, got " + std::to_string(got.size()));
  }
  for (const auto& [name, t] : expected.entries()) {
    if (!got.contains(name)) throw std::invalid_argument(std::string(what) + ": missing parameter '" + name + "'");
    if (got.get(name).shape() != t.shape()) {
      throw numcore::ShapeError(std::string(what) + ": parameter '" + name + "' is " +
                                numcore::to_string(got.get(name).shape()) + ", expected " +
                                numcore::to_string(t.shape()));
    }
  }
}

template <typename T>
NodeId conv_act(Tape<T>& tape, const BoundParams<T>& p, const std::string& conv, const std::string& act,
                NodeId x, std::size_t stride) {
  return ops::prelu(tape, ops::conv2d(tape, x, p[conv + ".w"], p[conv + ".b"], stride), p[act]);
}

template <typename T>
NodeId snr_column(Tape<T>& tape, std::size_t n, double snr_db) {
  return tape.constant(Tensor<T>({n, 1}, static_cast<T>(snr_db / 20.0)));
}

template <typename T>
NodeId mlp2(Tape<T>& tape, const BoundParams<T>& p, const std::string& prefix, NodeId in) {
  NodeId h = ops::relu(tape, ops::dense(tape, in, p[prefix + ".fc0.w"], p[prefix + ".fc0.b"]));
  return ops::dense(tape, h, p[prefix + ".fc1.w"], p[prefix + ".fc1.b"]);
}

void check_images(const CodecConfig& c, const Shape& s) {
  if (s.size() != 4 || s[1] != 3 || s[2] != c.height || s[3] != c.width) {
    throw numcore::ShapeError("codec: images " + numcore::to_string(s) + " do not match (N,3," +
                              std::to_string(c.height) + "," + std::to_string(c.width) + ")");
  }
}

Tensor<float> rows(const Tensor<float>& x, std::size_t begin, std::size_t end) {
  const std::size_t per = x.size() / x.dim(0);
  Shape s = x.shape();
  s[0] = end - begin;
  auto first = x.values().begin() + static_cast<std::ptrdiff_t>(begin * per);
  return Tensor<float>(s, std::vector<float>(first, first + static_cast<std::ptrdiff_t>((end - begin) * per)));
}

}  // namespace

void CodecConfig::validate() const {
  if (height == 0 || width == 0 || height % 4 != 0 || width % 4 != 0) {
    throw std::invalid_argument("codec: H and W must be positive multiples of 4");
  }
  if (features < 2 || selective == 0 || nonselective == 0 || adapt_hidden == 0 || policy_hidden == 0) {
    throw std::invalid_argument("codec: channel counts must be positive (features >= 2)");
  }
  if ((grid_h() * grid_w()) % 2 != 0) {
    throw std::invalid_argument("codec: (H/4)*(W/4) must be even so symbols stay within a channel");
  }
}

double CodecConfig::cpp_min() const { return channel_usage(*this, 0); }
double CodecConfig::cpp_max() const { return channel_usage(*this, selective); }

double channel_usage(const CodecConfig& config, std::size_t active_selective_channels) {
  if (active_selective_channels > config.selective) {
    throw std::invalid_argument("channel_usage: " + std::to_string(active_selective_channels) +
                                " active of " + std::to_string(config.selective) + " selective channels");
  }
  const std::size_t coeffs = active_selective_channels * config.grid_h() * config.grid_w() + config.l_gn();
  return static_cast<double>(coeffs) / static_cast<double>(2 * config.height * config.width);
}

ParamSet init_encoder_params(const CodecConfig& c, std::uint64_t seed) {
  c.validate();
  ParamSet p;
  std::mt19937_64 rng(seed);
  Builder b{p, rng};
  const std::size_t f = c.features;
  b.conv("es.conv0", f, 3);
  b.prelu("es.act0", f);
  b.conv("es.conv1", f, f);
  b.prelu("es.act1", f);
  b.adapt("es.af0", f, c.adapt_hidden);
  b.conv("es.conv2", f, f);
  b.prelu("es.act2", f);
  b.conv("es.conv3", f, f);
  b.prelu("es.act3", f);
  b.adapt("es.af1", f, c.adapt_hidden);
  b.conv("ec.conv0", f, f);
  b.prelu("ec.act0", f);
  b.adapt("ec.af0", f, c.adapt_hidden);
  b.conv("ec.conv1", c.channels(), f);
  b.dense("policy.fc0", c.policy_hidden, c.selective + 1);
  b.dense("policy.fc1", c.selective, c.policy_hidden);
  p.get("policy.fc1.b").fill(c.policy_bias_init);
  return p;
}

ParamSet init_decoder_params(const CodecConfig& c, std::uint64_t seed) {
  c.validate();
  ParamSet p;
  std::mt19937_64 rng(seed);
  Builder b{p, rng};
  const std::size_t f = c.features, half = c.features / 2;
  b.conv("dc.conv0", f, c.channels());
  b.prelu("dc.act0", f);
  b.adapt("dc.af0", f, c.adapt_hidden);
  b.conv("dc.conv1", f, f);
  b.prelu("dc.act1", f);
  b.adapt("dc.af1", f, c.adapt_hidden);
  b.tconv("ds.tconv0", f, f);
  b.prelu("ds.tact0", f);
  b.conv("ds.conv0", f, f);
  b.prelu("ds.act0", f);
  b.adapt("ds.af0", f, c.adapt_hidden);
  b.tconv("ds.tconv1", f, half);
  b.prelu("ds.tact1", half);
  b.conv("ds.conv1", 3, half);
  return p;
}

EncoderModel::EncoderModel(CodecConfig config, ParamSet params)
    : config_(std::move(config)), params_(std::move(params)) {
  check_params("encoder", init_encoder_params(config_, 0), params_);
}

DecoderModel::DecoderModel(CodecConfig config, ParamSet params)
    : config_(std::move(config)), params_(std::move(params)) {
  check_params("decoder", init_decoder_params(config_, 0), params_);
}

template <typename T>
NodeId snr_adapt(Tape<T>& tape, const BoundParams<T>& p, const std::string& prefix, NodeId features,
                 double snr_db) {
  if (!std::isfinite(snr_db)) throw std::invalid_argument("snr_adapt: snr_db must be finite");
  const std::size_t n = tape.shape(features)[0];
  const std::array<NodeId, 2> parts{ops::global_mean_pool(tape, features), snr_column<T>(tape, n, snr_db)};
  NodeId scale = ops::sigmoid(tape, mlp2(tape, p, prefix, ops::concat<T>(tape, parts)));
  return ops::mul(tape, features, scale);
}

template <typename T>
NodeId straight_through_gate(Tape<T>& tape, NodeId logits, Tensor<T> noise, T temperature) {
  if (!(temperature > T{0})) throw std::invalid_argument("straight_through_gate: temperature must be > 0");
  const Tensor<T>& l = tape.value(logits);
  if (noise.shape() != l.shape()) {
    throw numcore::ShapeError("straight_through_gate: noise " + numcore::to_string(noise.shape()) +
                              " vs logits " + numcore::to_string(l.shape()));
  }
  Tensor<T> soft(l.shape()), hard(l.shape());
  for (std::size_t i = 0; i < l.size(); ++i) {
    soft[i] = ops::logistic((l[i] + noise[i]) / temperature);
    hard[i] = soft[i] > T(0.5) ? T{1} : T{0};
  }
  return tape.record(numcore::OpKind::kCustom, "straight_through_gate", std::move(hard), {logits},
                     [soft = std::move(soft), temperature](const Tape<T>&, const Tensor<T>&, const Tensor<T>& g,
                                                           std::span<Tensor<T>* const> gin) {
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         (*gin[0])[i] += g[i] * soft[i] * (T{1} - soft[i]) / temperature;
                       }
                     });
}

template <typename T>
NodeId policy_mask(Tape<T>& tape, NodeId logits, T temperature, Mode mode, std::mt19937_64& rng) {
  const Tensor<T>& l = tape.value(logits);
  if (mode == Mode::kEval) {
    Tensor<T> hard(l.shape());
    for (std::size_t i = 0; i < l.size(); ++i) hard[i] = ops::logistic(l[i]) > T(0.5) ? T{1} : T{0};
    return tape.constant(std::move(hard), "mask");
  }
  Tensor<T> noise(l.shape());
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (T& v : noise.values()) {
    double u = unit(rng);
    u = std::clamp(u, 1e-12, 1.0 - 1e-12);
    v = static_cast<T>(std::log(u) - std::log1p(-u));
  }
  return straight_through_gate(tape, logits, std::move(noise), temperature);
}

template <typename T>
EncodedGraph<T> encode_graph(Tape<T>& tape, const BoundParams<T>& p, const CodecConfig& c, NodeId x,
                             double snr_db, Mode mode, T temperature, std::mt19937_64& rng) {
  check_images(c, tape.shape(x));
  if (!std::isfinite(snr_db)) throw std::invalid_argument("encode: snr_db must be finite");
  const std::size_t n = tape.shape(x)[0];
  NodeId h = conv_act(tape, p, "es.conv0", "es.act0", x, 1);
  h = conv_act(tape, p, "es.conv1", "es.act1", h, 2);
  h = snr_adapt(tape, p, "es.af0", h, snr_db);
  h = conv_act(tape, p, "es.conv2", "es.act2", h, 1);
  h = conv_act(tape, p, "es.conv3", "es.act3", h, 2);
  h = snr_adapt(tape, p, "es.af1", h, snr_db);
  h = conv_act(tape, p, "ec.conv0", "ec.act0", h, 1);
  h = snr_adapt(tape, p, "ec.af0", h, snr_db);
  NodeId feat = ops::conv2d(tape, h, p["ec.conv1.w"], p["ec.conv1.b"], 1);

  EncodedGraph<T> out;
  out.g_s = ops::slice(tape, feat, 0, c.selective);
  out.g_n = ops::slice(tape, feat, c.selective, c.channels());
  const std::array<NodeId, 2> policy_in{ops::global_mean_pool(tape, out.g_s), snr_column<T>(tape, n, snr_db)};
  out.logits = mlp2(tape, p, "policy", ops::concat<T>(tape, policy_in));
  out.mask = policy_mask(tape, out.logits, temperature, mode, rng);

  const std::array<NodeId, 2> parts{ops::mul(tape, out.g_s, out.mask), out.g_n};
  const std::size_t k = c.coefficients(), plane = c.grid_h() * c.grid_w();
  out.z = ops::reshape(tape, ops::concat<T>(tape, parts), {n, 1, k});

  const Tensor<T>& m = tape.value(out.mask);
  out.active_coeff.assign(n * k, 0);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t on = 0;
    for (std::size_t ch = 0; ch < c.channels(); ++ch) {
      const bool active = ch >= c.selective || m[i * c.selective + ch] != T{0};
      if (!active) continue;
      if (ch < c.selective) ++on;
      std::fill_n(out.active_coeff.begin() + static_cast<std::ptrdiff_t>(i * k + ch * plane), plane, 1);
    }
    out.active_selective.push_back(on);
    out.active_symbols.push_back((on + c.nonselective) * plane / 2);
  }
  out.gamma = channel::power_scale(tape, ops::reshape(tape, out.z, {n, k}),
                                   std::span<const std::size_t>(out.active_symbols));
  out.e = ops::mul(tape, out.z, out.gamma);
  return out;
}

template <typename T>
NodeId decode_graph(Tape<T>& tape, const BoundParams<T>& p, const CodecConfig& c, NodeId received,
                    NodeId gamma, double snr_db) {
  const Shape& rs = tape.shape(received);
  if (rs.size() != 3 || rs[1] != 1 || rs[2] != c.coefficients()) {
    throw numcore::ShapeError("decode: received " + numcore::to_string(rs) + ", expected (N,1," +
                              std::to_string(c.coefficients()) + ")");
  }
  const std::size_t n = rs[0];
  NodeId r = ops::mul(tape, received, channel::reciprocal(tape, gamma));
  NodeId h = ops::reshape(tape, r, {n, c.channels(), c.grid_h(), c.grid_w()});
  h = conv_act(tape, p, "dc.conv0", "dc.act0", h, 1);
  h = snr_adapt(tape, p, "dc.af0", h, snr_db);
  h = conv_act(tape, p, "dc.conv1", "dc.act1", h, 1);
  h = snr_adapt(tape, p, "dc.af1", h, snr_db);
  h = ops::prelu(tape, ops::conv_transpose2d(tape, h, p["ds.tconv0.w"], p["ds.tconv0.b"], 2, 1), p["ds.tact0"]);
  h = conv_act(tape, p, "ds.conv0", "ds.act0", h, 1);
  h = snr_adapt(tape, p, "ds.af0", h, snr_db);
  h = ops::prelu(tape, ops::conv_transpose2d(tape, h, p["ds.tconv1.w"], p["ds.tconv1.b"], 2, 1), p["ds.tact1"]);
  return ops::sigmoid(tape, ops::conv2d(tape, h, p["ds.conv1.w"], p["ds.conv1.b"], 1));
}

Encoding encode(const EncoderModel& encoder, const Tensor<float>& x, double snr_db, Mode mode,
                std::mt19937_64& rng, float temperature) {
  const CodecConfig& c = encoder.config();
  check_images(c, x.shape());
  for (float v : x.values()) {
    if (!(v >= 0.0f && v <= 1.0f)) throw std::invalid_argument("encode: pixel outside [0,1]");
  }
  Tape<float> tape;
  const auto p = numcore::bind<float>(tape, encoder.params(), false);
  auto g = encode_graph(tape, p, c, tape.constant(x), snr_db, mode, temperature, rng);

  Encoding out;
  out.g_s = tape.value(g.g_s);
  out.g_n = tape.value(g.g_n);
  const std::size_t n = x.dim(0), k = c.coefficients();
  const Tensor<float>& m = tape.value(g.mask);
  const Tensor<float>& e = tape.value(g.e);
  for (std::size_t i = 0; i < n; ++i) {
    out.masks.emplace_back(c.selective);
    for (std::size_t ch = 0; ch < c.selective; ++ch) out.masks[i][ch] = m[i * c.selective + ch] != 0.0f;
    channel::ComplexSymbolVector sym;
    sym.coefficients.assign(e.data() + i * k, e.data() + (i + 1) * k);
    sym.active.resize(k / 2);
    for (std::size_t s = 0; s < k / 2; ++s) sym.active[s] = g.active_coeff[i * k + 2 * s];
    sym.gamma = tape.value(g.gamma)[i];
    out.symbols.push_back(std::move(sym));
  }
  return out;
}

Tensor<float> decode(const DecoderModel& decoder, std::span<const channel::ComplexSymbolVector> received,
                     const std::vector<std::vector<std::uint8_t>>& masks, double snr_db) {
  const CodecConfig& c = decoder.config();
  if (received.empty() || received.size() != masks.size()) {
    throw std::invalid_argument("decode: " + std::to_string(received.size()) + " symbol vectors for " +
                                std::to_string(masks.size()) + " masks");
  }
  const std::size_t n = received.size(), k = c.coefficients(), plane = c.grid_h() * c.grid_w();
  Tensor<float> r({n, 1, k});
  Tensor<float> gamma({n, 1});
  for (std::size_t i = 0; i < n; ++i) {
    const auto& sym = received[i];
    if (sym.coefficients.size() != k || masks[i].size() != c.selective || sym.active.size() != k / 2) {
      throw std::invalid_argument("decode: image " + std::to_string(i) + " carries " +
                                  std::to_string(sym.coefficients.size()) + " coefficients and a " +
                                  std::to_string(masks[i].size()) + "-entry mask; expected " +
                                  std::to_string(k) + " and " + std::to_string(c.selective));
    }
    for (std::size_t s = 0; s < k / 2; ++s) {
      const std::size_t ch = 2 * s / plane;
      const bool on = ch >= c.selective || masks[i][ch];
      if (on != static_cast<bool>(sym.active[s])) {
        throw std::invalid_argument("decode: image " + std::to_string(i) + " symbol " + std::to_string(s) +
                                    " activity disagrees with the mask");
      }
      if (!on) continue;
      r[i * k + 2 * s] = sym.coefficients[2 * s];
      r[i * k + 2 * s + 1] = sym.coefficients[2 * s + 1];
    }
    gamma[i] = static_cast<float>(sym.gamma);
  }
  Tape<float> tape;
  const auto p = numcore::bind<float>(tape, decoder.params(), false);
  return tape.value(decode_graph(tape, p, c, tape.constant(std::move(r)), tape.constant(std::move(gamma)), snr_db));
}

Transmission transmit(const EncoderModel& encoder, const DecoderModel& decoder, const Tensor<float>& x,
                      const channel::ChannelConfig& channel) {
  if (!(encoder.config() == decoder.config())) throw std::invalid_argument("transmit: codec configs differ");
  check_images(encoder.config(), x.shape());
  std::mt19937_64 noise_rng(channel.seed);
  std::mt19937_64 unused(0);
  Transmission out;
  std::vector<float> pixels;
  pixels.reserve(x.size());
  for (std::size_t b = 0; b < x.dim(0); b += kChunk) {
    const std::size_t e = std::min(x.dim(0), b + kChunk);
    Encoding enc = encode(encoder, rows(x, b, e), channel.snr_db, Mode::kEval, unused);
    if (channel.noise_enabled) {
      for (auto& sym : enc.symbols) sym.coefficients = channel::awgn_transmit(sym, channel.snr_db, noise_rng);
    }
    for (const auto& m : enc.masks) out.active_selective.push_back(static_cast<std::size_t>(std::count(m.begin(), m.end(), 1)));
    const Tensor<float> rec = decode(decoder, enc.symbols, enc.masks, channel.snr_db);
    pixels.insert(pixels.end(), rec.values().begin(), rec.values().end());
  }
  out.reconstruction = Tensor<float>(x.shape(), std::move(pixels));
  return out;
}

#define SPJSCC_INSTANTIATE(T)                                                                         \
  template NodeId snr_adapt<T>(Tape<T>&, const BoundParams<T>&, const std::string&, NodeId, double);  \
  template NodeId straight_through_gate<T>(Tape<T>&, NodeId, Tensor<T>, T);                           \
  template NodeId policy_mask<T>(Tape<T>&, NodeId, T, Mode, std::mt19937_64&);                        \
  template EncodedGraph<T> encode_graph<T>(Tape<T>&, const BoundParams<T>&, const CodecConfig&, NodeId, \
                                           double, Mode, T, std::mt19937_64&);                        \
  template NodeId decode_graph<T>(Tape<T>&, const BoundParams<T>&, const CodecConfig&, NodeId, NodeId, double);

SPJSCC_INSTANTIATE(float)
SPJSCC_INSTANTIATE(double)
#undef SPJSCC_INSTANTIATE

}  // namespace spjscc::jscc
