#pragma once

// Brute-force ground truth over the enumerated trajectory universe.

#include <functional>
#include <iosfwd>
#include <vector>

#include "powerflow/policy.hpp"
#include "powerflow/target.hpp"

namespace powerflow {

struct FiniteDist {
  Universe support;
  std::vector<double> probs;

  std::size_t size() const { return probs.size(); }
  const Trajectory& at(std::size_t i) const { return (*support)[i]; }
};

Universe universe_of(const Policy& policy);

// log Z = log sum_y exp(log p~(y)), accumulated in long double.
double exact_log_partition(const Policy& base, QueryId q, const TargetSpec& spec);
double exact_partition(const Policy& base, QueryId q, const TargetSpec& spec);

FiniteDist exact_target_dist(const Policy& base, QueryId q, const TargetSpec& spec);

struct LaTarget {
  FiniteDist dist;
  double log_z_prime = 0.0;
  double z_prime() const;
};

// Solves sum_y p~(y) Z'^{-|y|} = 1 for the per-token normalizer Z' and returns
// pi*(y) = p~(y) / Z'^{|y|}.
LaTarget exact_la_target(const Policy& base, QueryId q, const TargetSpec& spec);

FiniteDist policy_dist(const Policy& policy, QueryId q);
FiniteDist policy_dist(const Policy& policy, QueryId q, const Universe& universe);

double kl(const FiniteDist& p, const FiniteDist& r);
double tv(const FiniteDist& p, const FiniteDist& r);

// Exact on-policy expectation of the trajectory-balance gradient with the
// log-partition at its squared-loss optimum E_pi[log p~ - log pi].
ParamGradient expected_tb_gradient(const Policy& policy, const Policy& base, QueryId q,
                                   const TargetSpec& spec);

// grad_theta KL(pi_theta || target) = sum_y pi(y) log(pi(y)/target(y)) grad log pi(y).
ParamGradient kl_gradient(const Policy& policy, QueryId q, const FiniteDist& target);

// Central differences over every explicit logit of `policy`. Call
// Policy::materialize first to cover contexts still on their default.
ParamGradient finite_diff(const std::function<double(const Policy&)>& fn, const Policy& policy,
                          double h = 1e-5);

struct DistStats {
  double mean_length = 0.0;
  double entropy = 0.0;
};
DistStats dist_stats(const FiniteDist& p);

// tokens,length,probability with tokens space-separated.
void write_csv(const FiniteDist& p, std::ostream& out);

}  // namespace powerflow
