#include <doctest.h>

#include <set>
#include <string>

#include "fixtures.hpp"
#include "powerflow/gradcheck.hpp"
#include "powerflow/objectives.hpp"

using namespace powerflow;
using namespace fixtures;

TEST_CASE("relative error uses the floor for tiny gradients") {
  const Policy p = uniform_ab();
  ParamGradient a, n;
  const auto key = p.key_for(kQ, {});
  a.add_block(key, std::vector<double>{1e-4, 0.0});
  n.add_block(key, std::vector<double>{0.0, 0.0});
  CHECK(relative_error(a, n) == doctest::Approx(1e-2));
  CHECK(relative_error(a, a) == 0.0);
  n.add_block(key, std::vector<double>{2.0, 0.0});
  CHECK(relative_error(a, n) == doctest::Approx((2.0 - 1e-4) / 2.0));
}

TEST_CASE("gradcheck passes on 50 random instances") {
  const auto report = run_gradcheck(50, 4);
  CHECK(report.passed);
  CHECK(report.max_rel_error < 1e-6);
  std::set<std::string> checks;
  for (const auto& e : report.entries) checks.insert(e.check);
  CHECK(checks.count("log_prob") == 1);
  for (auto k : kAllLossKinds) CHECK(checks.count(std::string(to_string(k))) == 1);
}

TEST_CASE("an impossible tolerance fails") {
  const auto report = run_gradcheck(3, 4, 1e-5, 0.0);
  CHECK_FALSE(report.passed);
}
