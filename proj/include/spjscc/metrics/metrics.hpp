#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "spjscc/classifier/classifier.hpp"
#include "spjscc/jscc/codec.hpp"

namespace spjscc::metrics {

using numcore::Tensor;

inline constexpr double kPsnrCapDb = 100.0;

// 10 log10(1 / MSE) with peak 1; MSE = 0 gives kPsnrCapDb.
double psnr(std::span<const float> x, std::span<const float> reconstruction);

inline constexpr std::size_t kSsimWindow = 8;
inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;

// One image (C,H,W) in [0,1], converted to grayscale by the channel mean.
// Mean SSIM over every 8x8 window at stride 1, with population statistics.
// Throws std::invalid_argument if H or W is below the window size.
double ssim(const Tensor<float>& x, const Tensor<float>& reconstruction);

// Unweighted mean over C classes of 2PR/(P+R); 0/0 counts as 0.
double f1_macro(std::span<const int> predictions, std::span<const int> labels, std::size_t classes);

// (active selective coefficients + l_gn) / (2HW), with one mask bit per
// selective channel and l_gs split evenly across the mask entries.
double cpp(std::span<const std::uint8_t> mask, std::size_t l_gs, std::size_t l_gn, std::size_t height,
           std::size_t width);

struct EvalReport {
  std::string run_id;
  std::string loss_mode;
  double snr_db = 0.0;
  std::string seed;  // a number, or "mean" for the average over seeds
  double cpp = 0.0;
  double acc = 0.0;
  double f1 = 0.0;
  double psnr_db = 0.0;
  double ssim = 0.0;
};

struct EvalCell {
  double snr_db = 0.0;
  std::vector<EvalReport> per_seed;
  EvalReport mean;
};

struct EvalOptions {
  std::vector<double> snr_grid{0.0, 5.0, 10.0, 15.0, 20.0};
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  bool noise_enabled = true;
  std::string run_id;
  std::string loss_mode;
};

// Transmits every test image once per (snr, seed) and scores the
// reconstructions.
std::vector<EvalCell> evaluate(const jscc::EncoderModel& encoder, const jscc::DecoderModel& decoder,
                               const classifier::ClassifierModel& classifier,
                               const dataio::LabeledImageDataset& test, const EvalOptions& options);

inline constexpr const char* kResultsHeader = "run_id,loss_mode,snr_db,seed,cpp,acc,f1,psnr_db,ssim";

// Writes "# config_hash=<hash>", the header, then one line per row.
void write_results_csv(std::ostream& out, const std::vector<EvalReport>& rows, const std::string& config_hash);

// Every row of the cells, per-seed rows first and the mean row last per cell.
std::vector<EvalReport> flatten(const std::vector<EvalCell>& cells);

// Parses a results CSV ('#' lines are comments). Throws std::invalid_argument
// naming a missing column or a malformed line.
std::vector<EvalReport> read_results_csv(std::istream& in);

}  // namespace spjscc::metrics
