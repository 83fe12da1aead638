#include "powerflow/chart.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "powerflow/error.hpp"

namespace powerflow {

namespace {

constexpr double kWidth = 720.0;
constexpr double kHeight = 420.0;
constexpr double kLeft = 70.0;
constexpr double kRight = 180.0;
constexpr double kTop = 40.0;
constexpr double kBottom = 50.0;

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                    "#9467bd", "#8c564b", "#e377c2", "#17becf"};

std::string escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string num(double v) { return fmt::format("{:.2f}", v); }

std::string tick_label(double v) {
  if (v == 0.0) return "0";
  return fmt::format("{:.4g}", v);
}

}  // namespace

std::string render_svg(std::span<const Series> series, const ChartSpec& spec) {
  if (series.empty()) throw AssertionFailure("chart needs at least one series");
  const std::size_t n = series.front().values.size();
  for (const auto& s : series)
    if (s.values.size() != n) throw AssertionFailure("chart series have unequal lengths");
  if (n == 0) throw AssertionFailure("chart series are empty");
  if (!spec.x.empty() && spec.x.size() != n) throw AssertionFailure("x values do not match series");

  auto x_at = [&](std::size_t i) { return spec.x.empty() ? static_cast<double>(i) : spec.x[i]; };
  double xmin = x_at(0), xmax = x_at(n - 1);
  double ymin = std::numeric_limits<double>::infinity();
  double ymax = -ymin;
  for (const auto& s : series)
    for (double v : s.values)
      if (std::isfinite(v)) {
        ymin = std::min(ymin, v);
        ymax = std::max(ymax, v);
      }
  if (!std::isfinite(ymin)) ymin = 0.0, ymax = 1.0;
  if (ymax - ymin < 1e-12) ymin -= 0.5, ymax += 0.5;
  if (xmax - xmin < 1e-12) xmax = xmin + 1.0;
  const double pad = 0.05 * (ymax - ymin);
  ymin -= pad;
  ymax += pad;

  const double pw = kWidth - kLeft - kRight;
  const double ph = kHeight - kTop - kBottom;
  auto px = [&](double x) { return kLeft + (x - xmin) / (xmax - xmin) * pw; };
  auto py = [&](double y) { return kTop + (ymax - y) / (ymax - ymin) * ph; };

  std::string svg = fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0}\" height=\"{1}\" "
      "viewBox=\"0 0 {0} {1}\" font-family=\"sans-serif\" font-size=\"11\">\n",
      kWidth, kHeight);
  svg += fmt::format("<rect x=\"0\" y=\"0\" width=\"{}\" height=\"{}\" fill=\"white\"/>\n", kWidth,
                     kHeight);
  svg += fmt::format("<text x=\"{}\" y=\"22\" font-size=\"14\" text-anchor=\"middle\">{}</text>\n",
                     num(kLeft + pw / 2), escape(spec.title));
  // Axes.
  svg += fmt::format("<line x1=\"{0}\" y1=\"{1}\" x2=\"{0}\" y2=\"{2}\" stroke=\"black\"/>\n",
                     num(kLeft), num(kTop), num(kTop + ph));
  svg += fmt::format("<line x1=\"{0}\" y1=\"{1}\" x2=\"{2}\" y2=\"{1}\" stroke=\"black\"/>\n",
                     num(kLeft), num(kTop + ph), num(kLeft + pw));
  for (int i = 0; i <= 5; ++i) {
    const double fx = xmin + (xmax - xmin) * i / 5.0;
    const double fy = ymin + (ymax - ymin) * i / 5.0;
    svg += fmt::format(
        "<line x1=\"{0}\" y1=\"{1}\" x2=\"{0}\" y2=\"{2}\" stroke=\"black\"/>"
        "<text x=\"{0}\" y=\"{3}\" text-anchor=\"middle\">{4}</text>\n",
        num(px(fx)), num(kTop + ph), num(kTop + ph + 5), num(kTop + ph + 18), tick_label(fx));
    svg += fmt::format(
        "<line x1=\"{0}\" y1=\"{2}\" x2=\"{1}\" y2=\"{2}\" stroke=\"black\"/>"
        "<text x=\"{3}\" y=\"{4}\" text-anchor=\"end\">{5}</text>\n",
        num(kLeft - 5), num(kLeft), num(py(fy)), num(kLeft - 8), num(py(fy) + 4), tick_label(fy));
  }
  svg += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
                     num(kLeft + pw / 2), num(kHeight - 12), escape(spec.x_label));
  svg += fmt::format(
      "<text x=\"16\" y=\"{0}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {0})\">{1}</text>\n",
      num(kTop + ph / 2), escape(spec.y_label));

  for (std::size_t k = 0; k < series.size(); ++k) {
    const char* color = kPalette[k % std::size(kPalette)];
    std::string points;
    for (std::size_t i = 0; i < n; ++i) {
      const double v = series[k].values[i];
      if (!std::isfinite(v)) continue;
      if (!points.empty()) points += ' ';
      points += num(px(x_at(i))) + "," + num(py(v));
    }
    svg += fmt::format(
        "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\" points=\"{}\"/>\n", color,
        points);
    const double ly = kTop + 10 + 18.0 * static_cast<double>(k);
    svg += fmt::format(
        "<line x1=\"{0}\" y1=\"{1}\" x2=\"{2}\" y2=\"{1}\" stroke=\"{3}\" stroke-width=\"2\"/>"
        "<text x=\"{4}\" y=\"{5}\">{6}</text>\n",
        num(kLeft + pw + 12), num(ly), num(kLeft + pw + 34), color, num(kLeft + pw + 40),
        num(ly + 4), escape(series[k].name));
  }
  svg += "</svg>\n";
  return svg;
}

void render_chart(std::span<const Series> series, const ChartSpec& spec,
                  const std::filesystem::path& path) {
  const auto svg = render_svg(series, spec);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidArgument(fmt::format("cannot write chart to {}", path.string()));
  out << svg;
  if (!out) throw InvalidArgument(fmt::format("failed writing chart to {}", path.string()));
}

}  // namespace powerflow
