#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "spjscc/metrics/metrics.hpp"

namespace spjscc::harness {

// Metrics that get one SVG each, in file order.
inline const std::vector<std::string> kPlotMetrics{"acc", "f1", "psnr_db", "ssim", "cpp"};

struct Series {
  std::string loss_mode;
  std::vector<std::pair<double, double>> points;  // (snr_db, value), ascending snr
};

// One series per loss mode, sorted by name. Mean rows are used where present;
// otherwise per-seed rows are averaged per SNR.
std::vector<Series> metric_series(const std::vector<metrics::EvalReport>& rows, const std::string& metric);

// Metric versus SNR: labeled axes, a legend and one polyline per series.
std::string render_svg(const std::vector<Series>& series, const std::string& metric, const std::string& config_hash);

// Reads a results CSV and writes <out_dir>/<metric>.svg for every plot
// metric. Throws std::invalid_argument on an empty CSV or a missing column.
std::vector<std::filesystem::path> emit_plots(const std::filesystem::path& results_csv,
                                              const std::filesystem::path& out_dir);

}  // namespace spjscc::harness
