#pragma once

// Per-sample training losses, their analytic gradients, and the learned
// log-partition table.

#include <compare>
#include <map>
#include <string_view>
#include <vector>

#include "powerflow/policy.hpp"
#include "powerflow/target.hpp"

namespace powerflow {

enum class LossKind { TBTraj, TBToken, LATB, PowerFlow, RLTraj, RLToken };

inline constexpr LossKind kAllLossKinds[] = {LossKind::TBTraj,    LossKind::TBToken,
                                             LossKind::LATB,      LossKind::PowerFlow,
                                             LossKind::RLTraj,    LossKind::RLToken};

std::string_view to_string(LossKind kind);
LossKind parse_loss_kind(std::string_view name);
bool is_rl(LossKind kind);
bool is_length_normalized(LossKind kind);

struct ClipSpec {
  double eps_low = 0.2;
  double eps_high = 0.28;
  void validate() const;
  bool operator==(const ClipSpec&) const = default;
};

// TB-token with one scalar log Z per query, or one per (query, length).
enum class TbTokenForm { SharedZ, PerLengthZ };
std::string_view to_string(TbTokenForm form);
TbTokenForm parse_tb_token_form(std::string_view name);

// length == 0 addresses the per-query scalar.
struct LogZKey {
  std::size_t query = 0;
  std::size_t length = 0;
  auto operator<=>(const LogZKey&) const = default;
};

struct LogZTable {
  std::map<LogZKey, double> values;

  double& at(LogZKey key) { return values[key]; }
  double get(LogZKey key) const;
  // One entry per query: the scalar, or the mean over lengths when the table
  // is per-length.
  std::vector<double> per_query(std::size_t num_queries) const;
};

double loss_tb_traj(double log_z, double log_pi, double log_ptilde);
double loss_tb_token(double log_z, double log_pi, double log_pbase, std::size_t len, double alpha);
double loss_la_tb(double log_z_prime, double log_pi, double log_ptilde, std::size_t len);
// Detached weight clip(pi_new / pi_old, 1 - eps_low, 1 + eps_high).
double clip_ratio(double log_pi_new, double log_pi_old, const ClipSpec& clip);
double loss_powerflow(double log_z_prime, double log_pi_new, double log_pi_old, double log_pbase,
                      double psi, std::size_t len, double alpha, const ClipSpec& clip);

double rl_reward(LossKind kind, double log_pbase, std::size_t len);

struct RlTerm {
  // -A * log pi, minimized with A held fixed.
  double surrogate = 0.0;
  // A = r - beta (log pi - log p_base) - baseline; the ascent direction is A * grad log pi.
  double coefficient = 0.0;
};
RlTerm loss_rl_kl(LossKind kind, double log_pi, double log_pbase, std::size_t len, double beta,
                  double baseline);

struct LossParams {
  double alpha = 1.0;
  double beta = 1.0;
  ClipSpec clip;
};

// Scalars a loss needs for one sampled trajectory.
struct SampleTerms {
  double log_z = 0.0;
  double log_pi = 0.0;
  double log_pi_old = 0.0;
  double log_pbase = 0.0;
  double log_ptilde = 0.0;
  double psi = 0.0;  // per-token penalty inside the PowerFlow bracket
  std::size_t length = 1;
  double baseline = 0.0;  // RL kinds only
};

double loss_value(LossKind kind, const LossParams& params, const SampleTerms& s);

struct LossGradient {
  ParamGradient policy;
  double d_log_z = 0.0;
  double loss = 0.0;
  double weight = 1.0;  // clip weight for PowerFlow, 1 otherwise
};

// Gradient of loss_value with respect to the policy logits (through
// grad_log_prob) and the log-partition entry. For RL kinds the policy part is
// -A * grad log pi and d_log_z is 0.
LossGradient grad_loss(LossKind kind, const LossParams& params, const SampleTerms& s,
                       const Policy& policy, QueryId q, const Trajectory& y);

double init_logz(double mean_ref_token_logprob, double alpha, double noise);

// Minimizer over log Z of E_pi[loss] at fixed pi: E_pi[log p~ - log pi] for
// TBTraj and E_pi[(log p~ - log pi) / |y|] for LATB.
double optimal_logz(const Policy& policy, const Policy& base, QueryId q, const TargetSpec& spec,
                    LossKind kind);

// Exact E_pi[(r - beta (log pi - log p_base)) grad log pi]: the expected
// ascent direction of the KL-regularized reward (baselines cancel in
// expectation).
ParamGradient expected_rl_update(LossKind kind, const Policy& policy, const Policy& base,
                                 QueryId q, double beta);

// Exact E_pi[loss] with log_z taken from `log_z`, on-policy (w = 1).
double expected_loss(LossKind kind, const LossParams& params, const Policy& policy,
                     const Policy& base, QueryId q, const TargetSpec& spec, double log_z);

}  // namespace powerflow
