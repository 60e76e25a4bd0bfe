#include "spjscc/metrics/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

namespace spjscc::metrics {

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) {
    while (!cell.empty() && (cell.front() == ' ')) cell.erase(cell.begin());
    while (!cell.empty() && (cell.back() == ' ' || cell.back() == '\r')) cell.pop_back();
    out.push_back(cell);
  }
  return out;
}

}  // namespace

double psnr(std::span<const float> x, std::span<const float> reconstruction) {
  if (x.size() != reconstruction.size() || x.empty()) {
    throw std::invalid_argument("psnr: sizes " + std::to_string(x.size()) + " and " +
                                std::to_string(reconstruction.size()) + " differ");
  }
  double se = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = static_cast<double>(x[i]) - reconstruction[i];
    se += d * d;
  }
  if (se == 0.0) return kPsnrCapDb;
  return std::min(kPsnrCapDb, 10.0 * std::log10(static_cast<double>(x.size()) / se));
}

double ssim(const Tensor<float>& x, const Tensor<float>& reconstruction) {
  if (x.shape() != reconstruction.shape() || x.rank() != 3) {
    throw std::invalid_argument("ssim: expected two (C,H,W) images of equal shape, got " +
                                numcore::to_string(x.shape()) + " and " + numcore::to_string(reconstruction.shape()));
  }
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2), plane = h * w;
  if (h < kSsimWindow || w < kSsimWindow) {
    throw std::invalid_argument("ssim: image " + std::to_string(h) + "x" + std::to_string(w) +
                                " is smaller than the " + std::to_string(kSsimWindow) + "x" +
                                std::to_string(kSsimWindow) + " window");
  }
  std::vector<double> a(plane, 0.0), b(plane, 0.0);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < plane; ++i) {
      a[i] += x[ch * plane + i];
      b[i] += reconstruction[ch * plane + i];
    }
  }
  for (std::size_t i = 0; i < plane; ++i) {
    a[i] /= static_cast<double>(c);
    b[i] /= static_cast<double>(c);
  }
  const double count = static_cast<double>(kSsimWindow * kSsimWindow);
  double total = 0.0;
  std::size_t windows = 0;
  for (std::size_t y0 = 0; y0 + kSsimWindow <= h; ++y0) {
    for (std::size_t x0 = 0; x0 + kSsimWindow <= w; ++x0) {
      double sa = 0, sb = 0;
      for (std::size_t y = y0; y < y0 + kSsimWindow; ++y) {
        for (std::size_t xx = x0; xx < x0 + kSsimWindow; ++xx) {
          sa += a[y * w + xx];
          sb += b[y * w + xx];
        }
      }
      const double ma = sa / count, mb = sb / count;
      double va = 0, vb = 0, cov = 0;
      for (std::size_t y = y0; y < y0 + kSsimWindow; ++y) {
        for (std::size_t xx = x0; xx < x0 + kSsimWindow; ++xx) {
          const double da = a[y * w + xx] - ma, db = b[y * w + xx] - mb;
          va += da * da;
          vb += db * db;
          cov += da * db;
        }
      }
      va /= count;
      vb /= count;
      cov /= count;
      total += ((2 * ma * mb + kSsimC1) * (2 * cov + kSsimC2)) /
               ((ma * ma + mb * mb + kSsimC1) * (va + vb + kSsimC2));
      ++windows;
    }
  }
  return total / static_cast<double>(windows);
}

double f1_macro(std::span<const int> predictions, std::span<const int> labels, std::size_t classes) {
  if (predictions.size() != labels.size()) {
    throw std::invalid_argument("f1_macro: " + std::to_string(predictions.size()) + " predictions for " +
                                std::to_string(labels.size()) + " labels");
  }
  if (classes == 0) throw std::invalid_argument("f1_macro: no classes");
  std::vector<double> tp(classes, 0), fp(classes, 0), fn(classes, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int p = predictions[i], l = labels[i];
    if (p < 0 || l < 0 || static_cast<std::size_t>(p) >= classes || static_cast<std::size_t>(l) >= classes) {
      throw std::invalid_argument("f1_macro: class index outside [0," + std::to_string(classes) + ")");
    }
    if (p == l) {
      tp[static_cast<std::size_t>(p)] += 1;
    } else {
      fp[static_cast<std::size_t>(p)] += 1;
      fn[static_cast<std::size_t>(l)] += 1;
    }
  }
  double sum = 0.0;
  for (std::size_t c = 0; c < classes; ++c) {
    const double precision = tp[c] + fp[c] > 0 ? tp[c] / (tp[c] + fp[c]) : 0.0;
    const double recall = tp[c] + fn[c] > 0 ? tp[c] / (tp[c] + fn[c]) : 0.0;
    sum += precision + recall > 0 ? 2 * precision * recall / (precision + recall) : 0.0;
  }
  return sum / static_cast<double>(classes);
}

double cpp(std::span<const std::uint8_t> mask, std::size_t l_gs, std::size_t l_gn, std::size_t height,
           std::size_t width) {
  if (mask.empty() || l_gs % mask.size() != 0 || height == 0 || width == 0) {
    throw std::invalid_argument("cpp: L(g_s)=" + std::to_string(l_gs) + " does not split over " +
                                std::to_string(mask.size()) + " mask entries");
  }
  const std::size_t per_channel = l_gs / mask.size();
  std::size_t active = 0;
  for (auto m : mask) active += m ? per_channel : 0;
  return static_cast<double>(active + l_gn) / static_cast<double>(2 * height * width);
}

std::vector<EvalCell> evaluate(const jscc::EncoderModel& encoder, const jscc::DecoderModel& decoder,
                               const classifier::ClassifierModel& classifier,
                               const dataio::LabeledImageDataset& test, const EvalOptions& options) {
  if (options.seeds.empty()) throw std::invalid_argument("evaluate: at least one seed is required");
  test.validate();
  const jscc::CodecConfig& codec = encoder.config();
  const std::size_t n = test.count(), per = test.pixels_per_image();
  numcore::Shape one(test.images.shape().begin() + 1, test.images.shape().end());
  std::vector<EvalCell> cells;
  for (double snr : options.snr_grid) {
    EvalCell cell;
    cell.snr_db = snr;
    for (std::uint64_t seed : options.seeds) {
      const auto tx = jscc::transmit(encoder, decoder, test.images, channel::ChannelConfig{snr, seed, options.noise_enabled});
      const auto pred = classifier::predict(classifier, tx.reconstruction);
      EvalReport r;
      r.run_id = options.run_id;
      r.loss_mode = options.loss_mode;
      r.snr_db = snr;
      r.seed = std::to_string(seed);
      std::size_t hits = 0;
      for (std::size_t i = 0; i < n; ++i) hits += pred[i] == test.labels[i];
      r.acc = static_cast<double>(hits) / static_cast<double>(n);
      r.f1 = f1_macro(pred, test.labels, test.classes);
      for (std::size_t i = 0; i < n; ++i) {
        const std::span<const float> xi(test.images.data() + i * per, per);
        const std::span<const float> ri(tx.reconstruction.data() + i * per, per);
        r.psnr_db += psnr(xi, ri);
        r.ssim += ssim(Tensor<float>(one, std::vector<float>(xi.begin(), xi.end())),
                       Tensor<float>(one, std::vector<float>(ri.begin(), ri.end())));
        r.cpp += jscc::channel_usage(codec, tx.active_selective[i]);
      }
      r.psnr_db /= static_cast<double>(n);
      r.ssim /= static_cast<double>(n);
      r.cpp /= static_cast<double>(n);
      cell.per_seed.push_back(std::move(r));
    }
    EvalReport& m = cell.mean;
    m.run_id = options.run_id;
    m.loss_mode = options.loss_mode;
    m.snr_db = snr;
    m.seed = "mean";
    for (const auto& r : cell.per_seed) {
      m.cpp += r.cpp;
      m.acc += r.acc;
      m.f1 += r.f1;
      m.psnr_db += r.psnr_db;
      m.ssim += r.ssim;
    }
    const double k = static_cast<double>(cell.per_seed.size());
    m.cpp /= k;
    m.acc /= k;
    m.f1 /= k;
    m.psnr_db /= k;
    m.ssim /= k;
    cells.push_back(std::move(cell));
  }
  return cells;
}

std::vector<EvalReport> flatten(const std::vector<EvalCell>& cells) {
  std::vector<EvalReport> rows;
  for (const auto& c : cells) {
    rows.insert(rows.end(), c.per_seed.begin(), c.per_seed.end());
    rows.push_back(c.mean);
  }
  return rows;
}

void write_results_csv(std::ostream& out, const std::vector<EvalReport>& rows, const std::string& config_hash) {
  out << "# config_hash=" << config_hash << '\n' << kResultsHeader << '\n';
  for (const auto& r : rows) {
    out << r.run_id << ',' << r.loss_mode << ',' << fmt(r.snr_db) << ',' << r.seed << ',' << fmt(r.cpp) << ','
        << fmt(r.acc) << ',' << fmt(r.f1) << ',' << fmt(r.psnr_db) << ',' << fmt(r.ssim) << '\n';
  }
}

std::vector<EvalReport> read_results_csv(std::istream& in) {
  static const std::vector<std::string> required = split_csv(kResultsHeader);
  std::string line;
  std::map<std::string, std::size_t> col;
  std::vector<EvalReport> rows;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const auto cells = split_csv(line);
    if (col.empty()) {
      for (std::size_t i = 0; i < cells.size(); ++i) col[cells[i]] = i;
      for (const auto& name : required) {
        if (!col.count(name)) throw std::invalid_argument("results csv: missing column '" + name + "'");
      }
      continue;
    }
    if (cells.size() != col.size()) {
      throw std::invalid_argument("results csv: line " + std::to_string(line_no) + " has " +
                                  std::to_string(cells.size()) + " fields, expected " + std::to_string(col.size()));
    }
    auto num = [&](const char* name) {
      const std::string& s = cells[col.at(name)];
      try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
      } catch (const std::exception&) {
        throw std::invalid_argument("results csv: line " + std::to_string(line_no) + " column '" + name +
                                    "' is not a number: '" + s + "'");
      }
    };
    EvalReport r;
    r.run_id = cells[col.at("run_id")];
    r.loss_mode = cells[col.at("loss_mode")];
    r.seed = cells[col.at("seed")];
    r.snr_db = num("snr_db");
    r.cpp = num("cpp");
    r.acc = num("acc");
    r.f1 = num("f1");
    r.psnr_db = num("psnr_db");
    r.ssim = num("ssim");
    rows.push_back(std::move(r));
  }
  if (col.empty()) throw std::invalid_argument("results csv: no header");
  return rows;
}

}  // namespace spjscc::metrics
