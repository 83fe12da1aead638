#pragma once

// Target densities: the alpha-power trajectory energy with a format penalty,
// escort transforms of finite distributions, and the per-step temperature
// baseline.

#include <memory>
#include <span>
#include <string_view>
#include <vector>

#include "powerflow/policy.hpp"

namespace powerflow {

// How the format penalty enters the trajectory energy.
//   PerToken: alpha * |y| * psi  (psi sits inside the per-token bracket)
//   Flat:     alpha * psi        (one penalty per trajectory)
enum class PenaltyScaling { PerToken, Flat };

struct TargetSpec {
  double alpha = 1.0;
  double psi_value = -0.5;
  bool marker_required = false;
  bool length_aware = true;
  PenaltyScaling penalty_scaling = PenaltyScaling::PerToken;

  void validate() const;
  bool operator==(const TargetSpec&) const = default;
};

// 0 when the penalty is disabled or the last non-EOS token is the marker,
// psi_value otherwise.
double format_penalty(const Trajectory& y, const Vocab& vocab, const TargetSpec& spec);

// The penalty as it appears inside the per-token bracket of the
// length-normalized losses.
double per_token_penalty(const Trajectory& y, const Vocab& vocab, const TargetSpec& spec);

// log p~(y) = alpha * log p_base(y) + alpha * |y| * psi(y)   (PerToken)
double log_density_unnorm(const Policy& base, QueryId q, const Trajectory& y,
                          const TargetSpec& spec);

// p_i^alpha / sum_j p_j^alpha.
std::vector<double> alpha_power(std::span<const double> p, double alpha);

// Frozen copy of `base` with every logit vector multiplied by alpha, i.e.
// sampling at temperature 1/alpha.
std::shared_ptr<const Policy> temperature_scaled_policy(const Policy& base, double alpha);

std::string_view to_string(PenaltyScaling scaling);
PenaltyScaling parse_penalty_scaling(std::string_view name);

}  // namespace powerflow
