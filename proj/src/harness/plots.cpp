#include "spjscc/harness/plots.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace spjscc::harness {

namespace {

constexpr double kWidth = 640, kHeight = 420;
constexpr double kLeft = 70, kRight = 150, kTop = 40, kBottom = 60;
const char* const kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

double metric_value(const metrics::EvalReport& r, const std::string& metric) {
  if (metric == "acc") return r.acc;
  if (metric == "f1") return r.f1;
  if (metric == "psnr_db") return r.psnr_db;
  if (metric == "ssim") return r.ssim;
  if (metric == "cpp") return r.cpp;
  throw std::invalid_argument("plot: unknown metric '" + metric + "'");
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string tick(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

std::string config_hash_of(const std::filesystem::path& csv) {
  std::ifstream in(csv);
  std::string line;
  const std::string prefix = "# config_hash=";
  while (std::getline(in, line) && !line.empty() && line[0] == '#') {
    if (line.rfind(prefix, 0) == 0) return line.substr(prefix.size());
  }
  return "unknown";
}

}  // namespace

std::vector<Series> metric_series(const std::vector<metrics::EvalReport>& rows, const std::string& metric) {
  std::map<std::string, bool> has_mean;
  for (const auto& r : rows) has_mean[r.loss_mode] = has_mean[r.loss_mode] || r.seed == "mean";
  std::map<std::string, std::map<double, std::pair<double, std::size_t>>> acc;
  for (const auto& r : rows) {
    if (has_mean[r.loss_mode] != (r.seed == "mean")) continue;
    auto& cell = acc[r.loss_mode][r.snr_db];
    cell.first += metric_value(r, metric);
    cell.second += 1;
  }
  std::vector<Series> out;
  for (const auto& [mode, cells] : acc) {
    Series s{mode, {}};
    for (const auto& [snr, sum] : cells) s.points.emplace_back(snr, sum.first / static_cast<double>(sum.second));
    out.push_back(std::move(s));
  }
  return out;
}

std::string render_svg(const std::vector<Series>& series, const std::string& metric, const std::string& config_hash) {
  double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
  for (const auto& s : series) {
    for (const auto& [x, y] : s.points) {
      x0 = std::min(x0, x);
      x1 = std::max(x1, x);
      y0 = std::min(y0, y);
      y1 = std::max(y1, y);
    }
  }
  if (!std::isfinite(x0)) throw std::invalid_argument("plot: no points for '" + metric + "'");
  if (x1 == x0) {
    x0 -= 1;
    x1 += 1;
  }
  const double pad = y1 > y0 ? 0.05 * (y1 - y0) : std::max(0.05 * std::abs(y0), 0.01);
  y0 -= pad;
  y1 += pad;
  const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
  auto px = [&](double x) { return kLeft + (x - x0) / (x1 - x0) * pw; };
  auto py = [&](double y) { return kTop + (y1 - y) / (y1 - y0) * ph; };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  svg << "<!-- config_hash=" << config_hash << " -->\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<text x=\"" << num(kLeft + pw / 2) << "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">" << metric
      << " vs SNR</text>\n";
  svg << "<line x1=\"" << num(kLeft) << "\" y1=\"" << num(kTop + ph) << "\" x2=\"" << num(kLeft + pw) << "\" y2=\""
      << num(kTop + ph) << "\" stroke=\"black\"/>\n";
  svg << "<line x1=\"" << num(kLeft) << "\" y1=\"" << num(kTop) << "\" x2=\"" << num(kLeft) << "\" y2=\""
      << num(kTop + ph) << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = x0 + (x1 - x0) * i / 4.0, yv = y0 + (y1 - y0) * i / 4.0;
    svg << "<text x=\"" << num(px(xv)) << "\" y=\"" << num(kTop + ph + 18) << "\" text-anchor=\"middle\">" << tick(xv)
        << "</text>\n";
    svg << "<text x=\"" << num(kLeft - 6) << "\" y=\"" << num(py(yv) + 4) << "\" text-anchor=\"end\">" << tick(yv)
        << "</text>\n";
  }
  svg << "<text x=\"" << num(kLeft + pw / 2) << "\" y=\"" << num(kHeight - 16)
      << "\" text-anchor=\"middle\">SNR (dB)</text>\n";
  svg << "<text x=\"18\" y=\"" << num(kTop + ph / 2) << "\" text-anchor=\"middle\" transform=\"rotate(-90 18 "
      << num(kTop + ph / 2) << ")\">" << metric << "</text>\n";
  for (std::size_t i = 0; i < series.size(); ++i) {
    const char* color = kColors[i % std::size(kColors)];
    svg << "<polyline class=\"series\" data-mode=\"" << series[i].loss_mode << "\" fill=\"none\" stroke=\"" << color
        << "\" stroke-width=\"2\" points=\"";
    for (std::size_t k = 0; k < series[i].points.size(); ++k) {
      svg << (k ? " " : "") << num(px(series[i].points[k].first)) << ',' << num(py(series[i].points[k].second));
    }
    svg << "\"/>\n";
    const double ly = kTop + 10 + 20.0 * static_cast<double>(i);
    svg << "<line x1=\"" << num(kLeft + pw + 15) << "\" y1=\"" << num(ly) << "\" x2=\"" << num(kLeft + pw + 40)
        << "\" y2=\"" << num(ly) << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    svg << "<text x=\"" << num(kLeft + pw + 46) << "\" y=\"" << num(ly + 4) << "\">" << series[i].loss_mode
        << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

std::vector<std::filesystem::path> emit_plots(const std::filesystem::path& results_csv,
                                              const std::filesystem::path& out_dir) {
  std::ifstream in(results_csv);
  if (!in) throw std::invalid_argument("plot: cannot read " + results_csv.string());
  const auto rows = metrics::read_results_csv(in);
  if (rows.empty()) throw std::invalid_argument("plot: results CSV " + results_csv.string() + " has no rows");
  const std::string hash = config_hash_of(results_csv);
  std::filesystem::create_directories(out_dir);
  std::vector<std::filesystem::path> written;
  for (const auto& metric : kPlotMetrics) {
    const auto path = out_dir / (metric + ".svg");
    std::ofstream(path, std::ios::binary) << render_svg(metric_series(rows, metric), metric, hash);
    written.push_back(path);
  }
  return written;
}

}  // namespace spjscc::harness
