#include <doctest.h>

#include "powerflow/chart.hpp"
#include "powerflow/error.hpp"

using namespace powerflow;

TEST_CASE("chart output is deterministic and self-contained") {
  const std::vector<Series> s{{"flat one", {1.0, 1.0, 1.0}}, {"flat two", {2.0, 2.0, 2.0}}};
  ChartSpec spec;
  spec.title = "two constants";
  spec.y_label = "value";
  const auto a = render_svg(s, spec), b = render_svg(s, spec);
  CHECK(a == b);
  CHECK(a.rfind("<svg", 0) == 0);
  CHECK(a.find("flat one") != std::string::npos);
  CHECK(a.find("flat two") != std::string::npos);
  std::size_t lines = 0;
  for (auto pos = a.find("<polyline"); pos != std::string::npos; pos = a.find("<polyline", pos + 1)) ++lines;
  CHECK(lines == 2);
}

TEST_CASE("chart rejects malformed input") {
  CHECK_THROWS_AS(render_svg({}, ChartSpec{}), AssertionFailure);
  const std::vector<Series> uneven{{"a", {1.0, 2.0}}, {"b", {1.0}}};
  CHECK_THROWS_AS(render_svg(uneven, ChartSpec{}), AssertionFailure);
}

TEST_CASE("a single point still renders") {
  const std::vector<Series> s{{"x", {3.0}}};
  CHECK_NOTHROW(render_svg(s, ChartSpec{}));
}
