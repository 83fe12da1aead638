#include "powerflow/oracle.hpp"

#include <fmt/format.h>
#include <fmt/ostream.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

#include "powerflow/error.hpp"

namespace powerflow {

namespace {

using Wide = long double;

Wide wide_log_sum_exp(std::span<const double> values) {
  if (values.empty()) return -std::numeric_limits<Wide>::infinity();
  const Wide m = *std::max_element(values.begin(), values.end());
  if (!std::isfinite(static_cast<double>(m))) return m;
  Wide s = 0.0L;
  for (double v : values) s += std::exp(static_cast<Wide>(v) - m);
  return m + std::log(s);
}

std::vector<double> log_densities(const Policy& base, QueryId q, const TargetSpec& spec,
                                  const Universe& universe) {
  std::vector<double> out;
  out.reserve(universe->size());
  for (const auto& y : *universe) out.push_back(log_density_unnorm(base, q, y, spec));
  return out;
}

FiniteDist normalized(const Universe& universe, std::span<const double> logw, Wide log_norm) {
  FiniteDist d{universe, std::vector<double>(logw.size())};
  Wide total = 0.0L;
  for (std::size_t i = 0; i < logw.size(); ++i) {
    const Wide p = std::exp(static_cast<Wide>(logw[i]) - log_norm);
    d.probs[i] = static_cast<double>(p);
    total += p;
  }
  for (double& p : d.probs) p = static_cast<double>(p / total);
  return d;
}

void check_shared_support(const FiniteDist& p, const FiniteDist& r) {
  if (p.support != r.support && (!p.support || !r.support || *p.support != *r.support))
    throw InvalidArgument("distributions have different supports");
  if (p.probs.size() != r.probs.size()) throw InvalidArgument("distribution size mismatch");
}

}  // namespace

Universe universe_of(const Policy& policy) {
  return make_universe(policy.vocab(), policy.max_len());
}

double exact_log_partition(const Policy& base, QueryId q, const TargetSpec& spec) {
  const auto logw = log_densities(base, q, spec, universe_of(base));
  return static_cast<double>(wide_log_sum_exp(logw));
}

double exact_partition(const Policy& base, QueryId q, const TargetSpec& spec) {
  return std::exp(exact_log_partition(base, q, spec));
}

FiniteDist exact_target_dist(const Policy& base, QueryId q, const TargetSpec& spec) {
  const auto universe = universe_of(base);
  const auto logw = log_densities(base, q, spec, universe);
  return normalized(universe, logw, wide_log_sum_exp(logw));
}

double LaTarget::z_prime() const { return std::exp(log_z_prime); }

LaTarget exact_la_target(const Policy& base, QueryId q, const TargetSpec& spec) {
  const auto universe = universe_of(base);
  const auto logw = log_densities(base, q, spec, universe);
  std::vector<double> lens;
  lens.reserve(universe->size());
  for (const auto& y : *universe) lens.push_back(static_cast<double>(y.length()));

  // g(u) = log sum_y exp(log p~(y) - |y| u) is strictly decreasing in u = log Z'.
  std::vector<double> shifted(logw.size());
  auto g = [&](Wide u) {
    for (std::size_t i = 0; i < logw.size(); ++i)
      shifted[i] = static_cast<double>(static_cast<Wide>(logw[i]) - static_cast<Wide>(lens[i]) * u);
    return wide_log_sum_exp(shifted);
  };

  double rmin = std::numeric_limits<double>::infinity();
  double rmax = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < logw.size(); ++i) {
    if (!std::isfinite(logw[i])) throw InvalidArgument("LA target needs a strictly positive p~");
    rmin = std::min(rmin, logw[i] / lens[i]);
    rmax = std::max(rmax, logw[i] / lens[i]);
  }
  Wide lo = static_cast<Wide>(rmin) - std::log(2.0L);
  Wide hi = static_cast<Wide>(rmax) + std::log(2.0L);
  Wide glo = g(lo);
  Wide ghi = g(hi);
  // Large universes can keep g(hi) >= 0; widen the upper end until it turns.
  for (int i = 0; i < 64 && ghi >= 0.0L && glo > 0.0L; ++i) {
    hi += std::log(2.0L) * static_cast<Wide>(i + 1);
    ghi = g(hi);
  }
  if (!(glo > 0.0L && ghi < 0.0L))
    throw BracketError(fmt::format("log Z' bracket [{}, {}] does not straddle the root (g = {}, {})",
                                   static_cast<double>(lo), static_cast<double>(hi),
                                   static_cast<double>(glo), static_cast<double>(ghi)));
  while (hi - lo > 1e-13L) {
    const Wide mid = 0.5L * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    if (g(mid) > 0.0L)
      lo = mid;
    else
      hi = mid;
  }
  // Newton polish: g'(u) = -E_{pi*}[|y|].
  Wide u = 0.5L * (lo + hi);
  for (int i = 0; i < 3; ++i) {
    const Wide gu = g(u);
    Wide mean_len = 0.0L;
    for (std::size_t k = 0; k < shifted.size(); ++k)
      mean_len += std::exp(static_cast<Wide>(shifted[k]) - gu) * static_cast<Wide>(lens[k]);
    if (mean_len <= 0.0L) break;
    u += gu / mean_len;
  }
  g(u);
  LaTarget out{normalized(universe, shifted, wide_log_sum_exp(shifted)), static_cast<double>(u)};
  return out;
}

FiniteDist policy_dist(const Policy& policy, QueryId q, const Universe& universe) {
  FiniteDist d{universe, {}};
  d.probs.reserve(universe->size());
  for (const auto& y : *universe) d.probs.push_back(std::exp(policy.log_prob(q, y)));
  return d;
}

FiniteDist policy_dist(const Policy& policy, QueryId q) {
  return policy_dist(policy, q, universe_of(policy));
}

double kl(const FiniteDist& p, const FiniteDist& r) {
  check_shared_support(p, r);
  Wide total = 0.0L;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p.probs[i] <= 0.0) continue;
    if (r.probs[i] <= 0.0) return std::numeric_limits<double>::infinity();
    total += static_cast<Wide>(p.probs[i]) *
             (std::log(static_cast<Wide>(p.probs[i])) - std::log(static_cast<Wide>(r.probs[i])));
  }
  return static_cast<double>(total);
}

double tv(const FiniteDist& p, const FiniteDist& r) {
  check_shared_support(p, r);
  Wide total = 0.0L;
  for (std::size_t i = 0; i < p.size(); ++i)
    total += std::abs(static_cast<Wide>(p.probs[i]) - static_cast<Wide>(r.probs[i]));
  return static_cast<double>(0.5L * total);
}

ParamGradient expected_tb_gradient(const Policy& policy, const Policy& base, QueryId q,
                                   const TargetSpec& spec) {
  const auto universe = universe_of(policy);
  std::vector<double> log_pi, log_pt;
  Wide log_z = 0.0L;
  for (const auto& y : *universe) {
    log_pi.push_back(policy.log_prob(q, y));
    log_pt.push_back(log_density_unnorm(base, q, y, spec));
    log_z += std::exp(static_cast<Wide>(log_pi.back())) *
             (static_cast<Wide>(log_pt.back()) - static_cast<Wide>(log_pi.back()));
  }
  ParamGradient out;
  for (std::size_t i = 0; i < universe->size(); ++i) {
    const double pi = std::exp(log_pi[i]);
    if (pi == 0.0) continue;
    const double residual = static_cast<double>(log_z + static_cast<Wide>(log_pi[i]) -
                                                static_cast<Wide>(log_pt[i]));
    out.add_scaled(policy.grad_log_prob(q, (*universe)[i]), pi * 2.0 * residual);
  }
  return out;
}

ParamGradient kl_gradient(const Policy& policy, QueryId q, const FiniteDist& target) {
  ParamGradient out;
  for (std::size_t i = 0; i < target.size(); ++i) {
    const auto& y = target.at(i);
    const double log_pi = policy.log_prob(q, y);
    const double pi = std::exp(log_pi);
    if (pi == 0.0) continue;
    out.add_scaled(policy.grad_log_prob(q, y), pi * (log_pi - std::log(target.probs[i])));
  }
  return out;
}

ParamGradient finite_diff(const std::function<double(const Policy&)>& fn, const Policy& policy,
                          double h) {
  if (!(h > 0.0)) throw InvalidArgument("finite-difference step must be positive");
  Policy work = policy;
  ParamGradient out;
  for (const auto& [key, logits] : policy.explicit_logits()) {
    std::vector<double> block(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) {
      auto& slot = work.mutable_logits(key)[i];
      const double saved = slot;
      slot = saved + h;
      const double up = fn(work);
      slot = saved - h;
      const double down = fn(work);
      slot = saved;
      block[i] = (up - down) / (2.0 * h);
    }
    out.entries.emplace(key, std::move(block));
  }
  return out;
}

DistStats dist_stats(const FiniteDist& p) {
  Wide mean = 0.0L, entropy = 0.0L;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const Wide pi = p.probs[i];
    mean += pi * static_cast<Wide>(p.at(i).length());
    if (pi > 0.0L) entropy -= pi * std::log(pi);
  }
  return {static_cast<double>(mean), static_cast<double>(entropy)};
}

void write_csv(const FiniteDist& p, std::ostream& out) {
  out << "tokens,length,probability\n";
  for (std::size_t i = 0; i < p.size(); ++i)
    fmt::print(out, "{},{},{:.17g}\n", fmt::join(p.at(i).tokens, " "), p.at(i).length(),
               p.probs[i]);
}

}  // namespace powerflow
