#pragma once

// Randomized analytic-vs-finite-difference gradient checks for grad_log_prob
// and every loss kind.

#include <cstdint>
#include <string>
#include <vector>

#include "powerflow/policy.hpp"

namespace powerflow {

// ||a - n||_inf / max(||a||_inf, ||n||_inf, floor).
double relative_error(const ParamGradient& analytic, const ParamGradient& numeric,
                      double floor = 1e-2);

struct GradcheckEntry {
  std::string check;  // "log_prob" or a loss kind name (policy part), "<kind>/log_z"
  int instance = 0;
  double rel_error = 0.0;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;
  double max_rel_error = 0.0;
  bool passed = false;
};

GradcheckReport run_gradcheck(int instances, std::uint64_t seed, double h = 1e-5,
                              double tolerance = 1e-6);

}  // namespace powerflow
