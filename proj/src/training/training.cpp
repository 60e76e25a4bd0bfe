#include "spjscc/training/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>

#include "spjscc/numcore/ops.hpp"

namespace spjscc::training {

namespace ops = numcore::ops;
using numcore::Shape;

namespace {

constexpr std::uint64_t kSplitSalt = 0x5eed5011u;
constexpr std::uint64_t kValidationNoiseSalt = 0xa11ce;

void check_same_shape(const char* what, const Shape& a, const Shape& b) {
  if (a != b || a.empty()) {
    throw numcore::ShapeError(std::string(what) + ": shapes " + numcore::to_string(a) + " and " +
                              numcore::to_string(b) + " differ");
  }
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

// Weight maps for a batch, gathered by dataset index.
Tensor<float> gather_weights(const saliency::WeightCache& cache, const std::vector<std::size_t>& idx) {
  Shape s = cache.maps.shape();
  s[0] = idx.size();
  Tensor<float> out(s);
  const std::size_t per = cache.maps.size() / cache.count();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const auto m = cache.map(idx[i]);
    std::copy(m.begin(), m.end(), out.data() + i * per);
  }
  return out;
}

struct Forward {
  NodeId x, recon, distortion, total;
  jscc::EncodedGraph<float> enc;
};

Forward run_batch(Tape<float>& tape, const numcore::BoundParams<float>& be, const numcore::BoundParams<float>& bd,
                  const TrainConfig& cfg, const dataio::ImageBatch& batch, const Tensor<float>* weights,
                  double snr, jscc::Mode mode, float temperature, std::mt19937_64& rng,
                  std::mt19937_64& noise_rng) {
  Forward f;
  const std::size_t n = batch.indices.size(), k = cfg.codec.coefficients();
  f.x = tape.constant(batch.images);
  f.enc = jscc::encode_graph<float>(tape, be, cfg.codec, f.x, snr, mode, temperature, rng);
  const std::vector<double> snrs(n, snr);
  Tensor<float> noise = channel::awgn_noise<float>({n, k}, f.enc.active_coeff, snrs, noise_rng);
  NodeId received = ops::add(tape, f.enc.e, tape.constant(noise.reshaped({n, 1, k})));
  f.recon = jscc::decode_graph<float>(tape, bd, cfg.codec, received, f.enc.gamma, snr);
  f.distortion = cfg.mode == LossMode::kSp ? loss_sp<float>(tape, f.x, f.recon, tape.constant(*weights))
                                           : loss_mse<float>(tape, f.x, f.recon);
  f.total = total_loss<float>(tape, f.distortion, f.enc.mask, cfg.lambda_rate);
  return f;
}

}  // namespace

std::string to_string(LossMode mode) { return mode == LossMode::kSp ? "sp" : "mse"; }

LossMode parse_loss_mode(const std::string& text) {
  if (text == "sp") return LossMode::kSp;
  if (text == "mse") return LossMode::kMse;
  throw std::invalid_argument("loss mode must be 'sp' or 'mse', got '" + text + "'");
}

template <typename T>
NodeId loss_mse(Tape<T>& tape, NodeId x, NodeId reconstruction) {
  check_same_shape("loss_mse", tape.shape(x), tape.shape(reconstruction));
  NodeId d = ops::sub(tape, reconstruction, x);
  NodeId s = ops::sum(tape, ops::mul(tape, d, d));
  return ops::scalar_mul(tape, s, T{1} / static_cast<T>(tape.shape(x)[0]));
}

template <typename T>
NodeId loss_sp(Tape<T>& tape, NodeId x, NodeId reconstruction, NodeId weights) {
  check_same_shape("loss_sp", tape.shape(x), tape.shape(reconstruction));
  check_same_shape("loss_sp", tape.shape(x), tape.shape(weights));
  NodeId d = ops::sub(tape, reconstruction, x);
  NodeId s = ops::sum(tape, ops::mul(tape, ops::mul(tape, d, d), weights));
  return ops::scalar_mul(tape, s, T{1} / static_cast<T>(tape.shape(x)[0]));
}

template <typename T>
NodeId total_loss(Tape<T>& tape, NodeId distortion, NodeId mask, T lambda_rate) {
  if (!(lambda_rate >= T{0})) throw std::invalid_argument("total_loss: lambda_rate must be >= 0");
  return ops::add(tape, distortion, ops::scalar_mul(tape, ops::mean(tape, mask), lambda_rate));
}

template NodeId loss_mse<float>(Tape<float>&, NodeId, NodeId);
template NodeId loss_mse<double>(Tape<double>&, NodeId, NodeId);
template NodeId loss_sp<float>(Tape<float>&, NodeId, NodeId, NodeId);
template NodeId loss_sp<double>(Tape<double>&, NodeId, NodeId, NodeId);
template NodeId total_loss<float>(Tape<float>&, NodeId, NodeId, float);
template NodeId total_loss<double>(Tape<double>&, NodeId, NodeId, double);

double loss_mse(const Tensor<float>& x, const Tensor<float>& reconstruction) {
  check_same_shape("loss_mse", x.shape(), reconstruction.shape());
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = static_cast<double>(x[i]) - reconstruction[i];
    s += d * d;
  }
  return s / static_cast<double>(x.dim(0));
}

double loss_sp(const Tensor<float>& x, const Tensor<float>& reconstruction, const Tensor<float>& weights) {
  check_same_shape("loss_sp", x.shape(), reconstruction.shape());
  check_same_shape("loss_sp", x.shape(), weights.shape());
  const std::size_t n = x.dim(0), per = x.size() / n;
  for (std::size_t i = 0; i < n; ++i) saliency::check_weight_map({weights.data() + i * per, per});
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = static_cast<double>(reconstruction[i]) - x[i];
    s += static_cast<double>(weights[i]) * d * d;
  }
  return s / static_cast<double>(n);
}

double total_loss(double distortion, double mask_mean, double lambda_rate) {
  if (!(lambda_rate >= 0.0)) throw std::invalid_argument("total_loss: lambda_rate must be >= 0");
  return distortion + lambda_rate * mask_mean;
}

void TrainConfig::validate() const {
  codec.validate();
  if (!(lambda_rate >= 0.0f)) throw std::invalid_argument("train: lambda_rate must be >= 0");
  if (epochs == 0) throw std::invalid_argument("train: epochs must be >= 1");
  if (batch == 0) throw std::invalid_argument("train: batch must be >= 1");
  if (!(lr > 0.0f)) throw std::invalid_argument("train: lr must be > 0");
  if (!(snr_min_db <= snr_max_db) || !std::isfinite(snr_min_db) || !std::isfinite(snr_max_db)) {
    throw std::invalid_argument("train: snr range must be finite with min <= max");
  }
  if (!(temperature_start > 0.0f) || !(temperature_end > 0.0f)) {
    throw std::invalid_argument("train: temperatures must be > 0");
  }
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
    throw std::invalid_argument("train: validation_fraction must be in [0,1)");
  }
}

float temperature_at(const TrainConfig& config, std::size_t step, std::size_t total) {
  if (total <= 1) return config.temperature_end;
  const double t = std::min(1.0, static_cast<double>(step) / static_cast<double>(total - 1));
  return static_cast<float>(config.temperature_start + (config.temperature_end - config.temperature_start) * t);
}

void TrainLog::write_csv(std::ostream& out, const std::string& config_hash) const {
  out << "# config_hash=" << config_hash << '\n';
  out << "epoch,step,loss,distortion,rate,mask_mean,snr_db\n";
  for (const auto& s : steps) {
    out << s.epoch << ',' << s.step << ',' << fmt(s.loss) << ',' << fmt(s.distortion) << ',' << fmt(s.rate)
        << ',' << fmt(s.mask_mean) << ',' << fmt(s.snr_db) << '\n';
  }
}

double TrainLog::epoch_mean_loss(std::size_t epoch) const {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& s : steps) {
    if (s.epoch != epoch) continue;
    sum += s.loss;
    ++n;
  }
  if (n == 0) throw std::out_of_range("train log: no steps in epoch " + std::to_string(epoch));
  return sum / static_cast<double>(n);
}

TrainResult train_jscc(const TrainConfig& cfg, const dataio::LabeledImageDataset& train,
                       const SemanticInputs& semantic,
                       const std::function<void(std::size_t, double, double)>& on_epoch) {
  cfg.validate();
  train.validate();
  if (train.height() != cfg.codec.height || train.width() != cfg.codec.width) {
    throw numcore::ShapeError("train: dataset images are " + std::to_string(train.height()) + "x" +
                              std::to_string(train.width()) + ", codec expects " +
                              std::to_string(cfg.codec.height) + "x" + std::to_string(cfg.codec.width));
  }
  std::string classifier_hash;
  if (cfg.mode == LossMode::kSp) {
    if (semantic.weights == nullptr || semantic.classifier == nullptr) {
      throw std::invalid_argument("train: sp mode needs the classifier and its weight cache");
    }
    classifier_hash = semantic.classifier->hash();
    if (semantic.weights->classifier_hash != classifier_hash) {
      throw saliency::CacheMismatch("train: weight cache was built with a different classifier");
    }
    if (semantic.weights->dataset_id != train.content_id()) {
      throw saliency::CacheMismatch("train: weight cache was built for a different dataset");
    }
  }

  // Held-out split for early stopping.
  std::vector<std::size_t> order(train.count());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), std::mt19937_64(cfg.seed ^ kSplitSalt));
  std::size_t n_val = static_cast<std::size_t>(std::llround(cfg.validation_fraction * static_cast<double>(train.count())));
  if (cfg.validation_fraction > 0.0) n_val = std::clamp<std::size_t>(n_val, 1, train.count() - 1);
  std::vector<std::size_t> val_idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> fit_idx(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  std::sort(val_idx.begin(), val_idx.end());
  std::sort(fit_idx.begin(), fit_idx.end());

  numcore::ParamSet enc = jscc::init_encoder_params(cfg.codec, cfg.seed * 2 + 1);
  numcore::ParamSet dec = jscc::init_decoder_params(cfg.codec, cfg.seed * 2 + 2);
  numcore::Adam adam_enc(numcore::Adam::Options{cfg.lr});
  numcore::Adam adam_dec(numcore::Adam::Options{cfg.lr});
  std::mt19937_64 rng(cfg.seed);
  const dataio::BatchIterator batches(fit_idx.size(), cfg.batch, cfg.seed + 17);
  const std::size_t steps_per_epoch = (fit_idx.size() + cfg.batch - 1) / cfg.batch;
  const std::size_t total_steps = steps_per_epoch * cfg.epochs;

  auto batch_of = [&](const std::vector<std::size_t>& pos, const std::vector<std::size_t>& pool) {
    std::vector<std::size_t> idx;
    idx.reserve(pos.size());
    for (std::size_t p : pos) idx.push_back(pool[p]);
    return idx;
  };

  auto validation_loss = [&]() {
    if (val_idx.empty()) return 0.0;
    std::mt19937_64 noise_rng(cfg.seed ^ kValidationNoiseSalt), unused(0);
    double sum = 0.0;
    for (std::size_t b = 0; b < val_idx.size(); b += cfg.batch) {
      std::vector<std::size_t> idx(val_idx.begin() + static_cast<std::ptrdiff_t>(b),
                                   val_idx.begin() + static_cast<std::ptrdiff_t>(std::min(val_idx.size(), b + cfg.batch)));
      const auto batch = dataio::gather(train, idx);
      std::optional<Tensor<float>> w;
      if (cfg.mode == LossMode::kSp) w = gather_weights(*semantic.weights, idx);
      Tape<float> tape;
      const auto be = numcore::bind<float>(tape, enc, false);
      const auto bd = numcore::bind<float>(tape, dec, false);
      auto f = run_batch(tape, be, bd, cfg, batch, w ? &*w : nullptr, cfg.validation_snr_db, jscc::Mode::kEval,
                         cfg.temperature_end, unused, noise_rng);
      sum += static_cast<double>(tape.value(f.total)[0]) * static_cast<double>(idx.size());
    }
    return sum / static_cast<double>(val_idx.size());
  };

  TrainLog log;
  numcore::ParamSet best_enc = enc, best_dec = dec;
  double best_val = std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0, since_best = 0, step = 0;
  bool stopped_early = false;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (const auto& pos : batches.epoch(epoch)) {
      const auto idx = batch_of(pos, fit_idx);
      const auto batch = dataio::gather(train, idx);
      std::optional<Tensor<float>> w;
      if (cfg.mode == LossMode::kSp) w = gather_weights(*semantic.weights, idx);
      const double snr = std::uniform_real_distribution<double>(cfg.snr_min_db, cfg.snr_max_db)(rng);
      const float tau = temperature_at(cfg, step, total_steps);

      Tape<float> tape;
      const auto be = numcore::bind<float>(tape, enc, true);
      const auto bd = numcore::bind<float>(tape, dec, true);
      Forward f;
      try {
        f = run_batch(tape, be, bd, cfg, batch, w ? &*w : nullptr, snr, jscc::Mode::kTrain, tau, rng, rng);
      } catch (const numcore::NonFiniteError& e) {
        throw TrainingDiverged("train: non-finite value at epoch " + std::to_string(epoch) + " step " +
                               std::to_string(step) + " (snr " + fmt(snr) + " dB): " + e.what());
      } catch (const channel::DegenerateSignal& e) {
        throw TrainingDiverged("train: degenerate encoder output at epoch " + std::to_string(epoch) +
                               " step " + std::to_string(step) + ": " + e.what());
      }
      TrainStep rec;
      rec.epoch = epoch;
      rec.step = step;
      rec.loss = tape.value(f.total)[0];
      rec.distortion = tape.value(f.distortion)[0];
      const Tensor<float>& m = tape.value(f.enc.mask);
      rec.mask_mean = std::accumulate(m.values().begin(), m.values().end(), 0.0) / static_cast<double>(m.size());
      rec.rate = cfg.lambda_rate * rec.mask_mean;
      rec.snr_db = snr;
      if (!std::isfinite(rec.loss)) {
        throw TrainingDiverged("train: non-finite loss at epoch " + std::to_string(epoch) + " step " +
                               std::to_string(step) + " (snr " + fmt(snr) + " dB, distortion " +
                               fmt(rec.distortion) + ", mask_mean " + fmt(rec.mask_mean) + ")");
      }
      const auto grads = tape.backward(f.total);
      try {
        adam_enc.step(enc, numcore::collect_gradients(be, grads));
        adam_dec.step(dec, numcore::collect_gradients(bd, grads));
      } catch (const numcore::NonFiniteGradient& e) {
        throw TrainingDiverged("train: epoch " + std::to_string(epoch) + " step " + std::to_string(step) +
                               ": " + e.what());
      }
      log.steps.push_back(rec);
      ++step;
    }

    const double val = validation_loss();
    log.validation_loss.push_back(val);
    if (on_epoch) on_epoch(epoch, log.epoch_mean_loss(epoch), val);
    if (val_idx.empty() || val < best_val) {
      best_val = val;
      best_epoch = epoch;
      best_enc = enc;
      best_dec = dec;
      since_best = 0;
    } else if (++since_best >= cfg.patience && cfg.patience > 0) {
      stopped_early = epoch + 1 < cfg.epochs;
      break;
    }
  }

  if (semantic.classifier != nullptr && !classifier_hash.empty() && semantic.classifier->hash() != classifier_hash) {
    throw std::logic_error("train: classifier parameters changed during training");
  }
  return TrainResult{jscc::EncoderModel(cfg.codec, std::move(best_enc)), jscc::DecoderModel(cfg.codec, std::move(best_dec)),
                     std::move(log), best_epoch, stopped_early};
}

}  // namespace spjscc::training
