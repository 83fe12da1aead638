#include "powerflow/objectives.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>

#include "powerflow/error.hpp"
#include "powerflow/oracle.hpp"

namespace powerflow {

std::string_view to_string(LossKind kind) {
  switch (kind) {
    case LossKind::TBTraj: return "tb_traj";
    case LossKind::TBToken: return "tb_token";
    case LossKind::LATB: return "la_tb";
    case LossKind::PowerFlow: return "powerflow";
    case LossKind::RLTraj: return "rl_traj";
    case LossKind::RLToken: return "rl_token";
  }
  throw InvalidArgument("unknown loss kind");
}

LossKind parse_loss_kind(std::string_view name) {
  for (LossKind k : kAllLossKinds)
    if (to_string(k) == name) return k;
  throw InvalidArgument(fmt::format("unknown loss kind '{}'", name));
}

bool is_rl(LossKind kind) { return kind == LossKind::RLTraj || kind == LossKind::RLToken; }

bool is_length_normalized(LossKind kind) {
  return kind == LossKind::LATB || kind == LossKind::PowerFlow;
}

void ClipSpec::validate() const {
  if (!(eps_low > 0.0 && eps_low < 1.0))
    throw InvalidArgument(fmt::format("eps_low must lie in (0, 1), got {}", eps_low));
  if (!(eps_high > 0.0)) throw InvalidArgument(fmt::format("eps_high must be positive, got {}", eps_high));
}

std::string_view to_string(TbTokenForm form) {
  return form == TbTokenForm::SharedZ ? "shared_z" : "per_length_z";
}

TbTokenForm parse_tb_token_form(std::string_view name) {
  if (name == "shared_z") return TbTokenForm::SharedZ;
  if (name == "per_length_z") return TbTokenForm::PerLengthZ;
  throw InvalidArgument(fmt::format("unknown tb_token form '{}'", name));
}

double LogZTable::get(LogZKey key) const {
  if (auto it = values.find(key); it != values.end()) return it->second;
  throw InvalidArgument(fmt::format("no log Z entry for query {} length {}", key.query, key.length));
}

std::vector<double> LogZTable::per_query(std::size_t num_queries) const {
  std::vector<double> sum(num_queries, 0.0);
  std::vector<double> count(num_queries, 0.0);
  std::vector<bool> has_scalar(num_queries, false);
  for (const auto& [key, v] : values) {
    if (key.query >= num_queries) continue;
    if (key.length == 0) {
      sum[key.query] = v;
      has_scalar[key.query] = true;
    } else if (!has_scalar[key.query]) {
      sum[key.query] += v;
      count[key.query] += 1.0;
    }
  }
  for (std::size_t q = 0; q < num_queries; ++q)
    if (!has_scalar[q] && count[q] > 0.0) sum[q] /= count[q];
  return sum;
}

namespace {

double sq(double x) { return x * x; }

void require_len(std::size_t len) {
  if (len < 1) throw InvalidArgument("trajectory length must be >= 1");
}

}  // namespace

double loss_tb_traj(double log_z, double log_pi, double log_ptilde) {
  return sq(log_z + log_pi - log_ptilde);
}

double loss_tb_token(double log_z, double log_pi, double log_pbase, std::size_t len, double alpha) {
  require_len(len);
  return sq(log_z + log_pi - alpha * log_pbase / static_cast<double>(len));
}

double loss_la_tb(double log_z_prime, double log_pi, double log_ptilde, std::size_t len) {
  require_len(len);
  return sq(log_z_prime + (log_pi - log_ptilde) / static_cast<double>(len));
}

double clip_ratio(double log_pi_new, double log_pi_old, const ClipSpec& clip) {
  const double ratio = std::exp(log_pi_new - log_pi_old);
  return std::min(std::max(ratio, 1.0 - clip.eps_low), 1.0 + clip.eps_high);
}

namespace {

double powerflow_residual(double log_z_prime, double log_pi_new, double log_pbase, double psi,
                          std::size_t len, double alpha) {
  require_len(len);
  const double n = static_cast<double>(len);
  return log_z_prime + log_pi_new / n - alpha * (log_pbase / n + psi);
}

}  // namespace

double loss_powerflow(double log_z_prime, double log_pi_new, double log_pi_old, double log_pbase,
                      double psi, std::size_t len, double alpha, const ClipSpec& clip) {
  return clip_ratio(log_pi_new, log_pi_old, clip) *
         sq(powerflow_residual(log_z_prime, log_pi_new, log_pbase, psi, len, alpha));
}

double rl_reward(LossKind kind, double log_pbase, std::size_t len) {
  require_len(len);
  if (kind == LossKind::RLTraj) return log_pbase;
  if (kind == LossKind::RLToken) return log_pbase / static_cast<double>(len);
  throw InvalidArgument(fmt::format("{} is not an RL loss kind", to_string(kind)));
}

RlTerm loss_rl_kl(LossKind kind, double log_pi, double log_pbase, std::size_t len, double beta,
                  double baseline) {
  if (!(beta > 0.0)) throw InvalidArgument(fmt::format("beta must be positive, got {}", beta));
  const double a = rl_reward(kind, log_pbase, len) - beta * (log_pi - log_pbase) - baseline;
  return {-a * log_pi, a};
}

double loss_value(LossKind kind, const LossParams& params, const SampleTerms& s) {
  switch (kind) {
    case LossKind::TBTraj: return loss_tb_traj(s.log_z, s.log_pi, s.log_ptilde);
    case LossKind::TBToken:
      return loss_tb_token(s.log_z, s.log_pi, s.log_pbase, s.length, params.alpha);
    case LossKind::LATB: return loss_la_tb(s.log_z, s.log_pi, s.log_ptilde, s.length);
    case LossKind::PowerFlow:
      return loss_powerflow(s.log_z, s.log_pi, s.log_pi_old, s.log_pbase, s.psi, s.length,
                            params.alpha, params.clip);
    case LossKind::RLTraj:
    case LossKind::RLToken:
      return loss_rl_kl(kind, s.log_pi, s.log_pbase, s.length, params.beta, s.baseline).surrogate;
  }
  throw InvalidArgument("unknown loss kind");
}

LossGradient grad_loss(LossKind kind, const LossParams& params, const SampleTerms& s,
                       const Policy& policy, QueryId q, const Trajectory& y) {
  LossGradient out;
  out.loss = loss_value(kind, params, s);
  const double n = static_cast<double>(s.length);
  double d_log_pi = 0.0;  // dL / d log pi
  switch (kind) {
    case LossKind::TBTraj: {
      const double r = s.log_z + s.log_pi - s.log_ptilde;
      d_log_pi = 2.0 * r;
      out.d_log_z = 2.0 * r;
      break;
    }
    case LossKind::TBToken: {
      const double r = s.log_z + s.log_pi - params.alpha * s.log_pbase / n;
      d_log_pi = 2.0 * r;
      out.d_log_z = 2.0 * r;
      break;
    }
    case LossKind::LATB: {
      const double r = s.log_z + (s.log_pi - s.log_ptilde) / n;
      d_log_pi = 2.0 * r / n;
      out.d_log_z = 2.0 * r;
      break;
    }
    case LossKind::PowerFlow: {
      const double w = clip_ratio(s.log_pi, s.log_pi_old, params.clip);
      const double r =
          powerflow_residual(s.log_z, s.log_pi, s.log_pbase, s.psi, s.length, params.alpha);
      out.weight = w;
      d_log_pi = w * 2.0 * r / n;
      out.d_log_z = w * 2.0 * r;
      break;
    }
    case LossKind::RLTraj:
    case LossKind::RLToken: {
      const auto term = loss_rl_kl(kind, s.log_pi, s.log_pbase, s.length, params.beta, s.baseline);
      d_log_pi = -term.coefficient;
      out.d_log_z = 0.0;
      break;
    }
  }
  if (d_log_pi != 0.0) {
    out.policy = policy.grad_log_prob(q, y);
    out.policy.scale(d_log_pi);
  }
  return out;
}

double init_logz(double mean_ref_token_logprob, double alpha, double noise) {
  return mean_ref_token_logprob * (alpha - 1.0) + noise;
}

double optimal_logz(const Policy& policy, const Policy& base, QueryId q, const TargetSpec& spec,
                    LossKind kind) {
  if (kind != LossKind::TBTraj && kind != LossKind::LATB)
    throw InvalidArgument(fmt::format("optimal_logz is defined for tb_traj and la_tb, not {}",
                                      to_string(kind)));
  long double total = 0.0L;
  const Universe universe = universe_of(policy);
  for (const auto& y : *universe) {
    const double log_pi = policy.log_prob(q, y);
    const long double pi = std::exp(static_cast<long double>(log_pi));
    if (pi == 0.0L) continue;
    long double gap = log_density_unnorm(base, q, y, spec) - static_cast<long double>(log_pi);
    if (kind == LossKind::LATB) gap /= static_cast<long double>(y.length());
    total += pi * gap;
  }
  return static_cast<double>(total);
}

ParamGradient expected_rl_update(LossKind kind, const Policy& policy, const Policy& base,
                                 QueryId q, double beta) {
  ParamGradient out;
  const Universe universe = universe_of(policy);
  for (const auto& y : *universe) {
    const double log_pi = policy.log_prob(q, y);
    const double pi = std::exp(log_pi);
    if (pi == 0.0) continue;
    const auto term = loss_rl_kl(kind, log_pi, base.log_prob(q, y), y.length(), beta, 0.0);
    out.add_scaled(policy.grad_log_prob(q, y), pi * term.coefficient);
  }
  return out;
}

double expected_loss(LossKind kind, const LossParams& params, const Policy& policy,
                     const Policy& base, QueryId q, const TargetSpec& spec, double log_z) {
  long double total = 0.0L;
  const Universe universe = universe_of(policy);
  for (const auto& y : *universe) {
    SampleTerms s;
    s.log_z = log_z;
    s.log_pi = policy.log_prob(q, y);
    s.log_pi_old = s.log_pi;
    s.log_pbase = base.log_prob(q, y);
    s.log_ptilde = log_density_unnorm(base, q, y, spec);
    s.psi = per_token_penalty(y, base.vocab(), spec);
    s.length = y.length();
    total += std::exp(static_cast<long double>(s.log_pi)) * loss_value(kind, params, s);
  }
  return static_cast<double>(total);
}

}  // namespace powerflow
