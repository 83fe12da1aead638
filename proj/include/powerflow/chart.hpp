#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace powerflow {

struct Series {
  std::string name;
  std::vector<double> values;
};

struct ChartSpec {
  std::string title;
  std::string x_label = "step";
  std::string y_label;
  std::vector<double> x;  // empty: 0, 1, 2, ...
};

// Self-contained SVG: axes with ticks, a legend and one polyline per series.
// Output is a pure function of the inputs. Throws AssertionFailure on an empty
// series set or unequal lengths.
std::string render_svg(std::span<const Series> series, const ChartSpec& spec);

void render_chart(std::span<const Series> series, const ChartSpec& spec,
                  const std::filesystem::path& path);

}  // namespace powerflow
