#include "powerflow/mvsim.hpp"

#include <fmt/format.h>
#include <fmt/ostream.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <random>

#include "powerflow/error.hpp"

namespace powerflow {

void VotePopulation::validate() const {
  if (probs.empty()) throw InvalidArgument("empty vote population");
  double s = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0) || !std::isfinite(p)) throw InvalidArgument("population entries must be >= 0");
    s += p;
  }
  if (std::abs(s - 1.0) > 1e-12)
    throw InvalidArgument(fmt::format("population sums to {} instead of 1", s));
}

std::size_t VotePopulation::unique_mode() const {
  const auto it = std::max_element(probs.begin(), probs.end());
  if (std::count(probs.begin(), probs.end(), *it) != 1)
    throw InvalidArgument("population has no unique mode");
  return static_cast<std::size_t>(it - probs.begin());
}

void VoteConfig::validate(std::size_t num_answers) const {
  if (n_votes < 2) throw InvalidArgument(fmt::format("n_votes must be >= 2, got {}", n_votes));
  if (!(beta > 0.0)) throw InvalidArgument(fmt::format("beta must be positive, got {}", beta));
  if (iterations < 1) throw InvalidArgument("iterations must be positive");
  if (mode == VoteMode::Exact && composition_count(n_votes, num_answers) > kCompositionCap)
    throw CapacityError(fmt::format("{} compositions of N={} into {} parts exceed the cap {}",
                                    composition_count(n_votes, num_answers), n_votes,
                                    num_answers, kCompositionCap));
  if (mode == VoteMode::MonteCarlo && mc_samples == 0)
    throw InvalidArgument("monte-carlo mode needs a positive sample count");
}

std::uint64_t composition_count(int n, std::size_t m) {
  if (m == 0) return 0;
  // C(n + m - 1, k) with k = min(m - 1, n), built up exactly.
  const std::uint64_t top = static_cast<std::uint64_t>(n) + m - 1;
  const std::uint64_t k = std::min<std::uint64_t>(m - 1, static_cast<std::uint64_t>(n));
  unsigned __int128 c = 1;
  for (std::uint64_t i = 1; i <= k; ++i) {
    c = c * (top - k + i) / i;
    if (c > std::numeric_limits<std::uint64_t>::max()) return std::numeric_limits<std::uint64_t>::max();
  }
  return static_cast<std::uint64_t>(c);
}

namespace {

void credit_winners(std::span<const int> counts, RewardReading reading, double weight,
                    std::span<double> out) {
  const int best = *std::max_element(counts.begin(), counts.end());
  const auto ties = std::count(counts.begin(), counts.end(), best);
  const double share = reading == RewardReading::SelectedWinner ? weight / static_cast<double>(ties)
                                                                 : weight;
  for (std::size_t i = 0; i < counts.size(); ++i)
    if (counts[i] == best) out[i] += share;
}

std::vector<double> exact_reward(const VotePopulation& pi, const VoteConfig& config) {
  const std::size_t m = pi.probs.size();
  const int n = config.n_votes;
  std::vector<double> log_fact(n + 1, 0.0);
  for (int i = 1; i <= n; ++i) log_fact[i] = log_fact[i - 1] + std::log(static_cast<double>(i));
  std::vector<double> log_p(m);
  for (std::size_t i = 0; i < m; ++i) log_p[i] = std::log(pi.probs[i]);

  std::vector<long double> acc(m, 0.0L);
  std::vector<double> credit(m);
  std::vector<int> counts(m, 0);
  // Lexicographic walk over compositions of n into m parts, largest first
  // component first.
  counts[0] = n;
  while (true) {
    double lw = log_fact[n];
    bool possible = true;
    for (std::size_t i = 0; i < m; ++i) {
      if (counts[i] == 0) continue;
      if (pi.probs[i] == 0.0) {
        possible = false;
        break;
      }
      lw += counts[i] * log_p[i] - log_fact[counts[i]];
    }
    if (possible) {
      std::fill(credit.begin(), credit.end(), 0.0);
      credit_winners(counts, config.reading, 1.0, credit);
      const long double w = std::exp(static_cast<long double>(lw));
      for (std::size_t i = 0; i < m; ++i) acc[i] += w * credit[i];
    }
    // Next composition: move one unit from the rightmost nonzero non-final
    // part to its right neighbour, collecting the tail.
    std::size_t j = m - 1;
    const int tail = counts[m - 1];
    counts[m - 1] = 0;
    j = m - 1;
    while (j > 0 && counts[j - 1] == 0) --j;
    if (j == 0) break;
    counts[j - 1] -= 1;
    counts[j] = tail + 1;
  }
  std::vector<double> out(m);
  for (std::size_t i = 0; i < m; ++i) out[i] = static_cast<double>(acc[i]);
  return out;
}

std::vector<double> monte_carlo_reward(const VotePopulation& pi, const VoteConfig& config) {
  const std::size_t m = pi.probs.size();
  std::mt19937_64 rng(config.mc_seed);
  std::discrete_distribution<std::size_t> draw(pi.probs.begin(), pi.probs.end());
  std::vector<double> out(m, 0.0);
  std::vector<int> counts(m);
  std::vector<std::size_t> tied;
  const double w = 1.0 / static_cast<double>(config.mc_samples);
  for (std::uint64_t s = 0; s < config.mc_samples; ++s) {
    std::fill(counts.begin(), counts.end(), 0);
    for (int i = 0; i < config.n_votes; ++i) ++counts[draw(rng)];
    if (config.reading == RewardReading::Membership) {
      credit_winners(counts, config.reading, w, out);
      continue;
    }
    const int best = *std::max_element(counts.begin(), counts.end());
    tied.clear();
    for (std::size_t i = 0; i < m; ++i)
      if (counts[i] == best) tied.push_back(i);
    const std::size_t pick =
        tied.size() == 1 ? tied[0]
                         : tied[std::uniform_int_distribution<std::size_t>(0, tied.size() - 1)(rng)];
    out[pick] += w;
  }
  return out;
}

}  // namespace

std::vector<double> expected_majority_reward(const VotePopulation& pi, const VoteConfig& config) {
  pi.validate();
  config.validate(pi.probs.size());
  return config.mode == VoteMode::Exact ? exact_reward(pi, config) : monte_carlo_reward(pi, config);
}

namespace {

std::vector<double> update_log(std::span<const double> log_pi, std::span<const double> rbar,
                               double beta) {
  std::vector<double> next(log_pi.size());
  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < log_pi.size(); ++i) {
    next[i] = log_pi[i] + rbar[i] / beta;
    m = std::max(m, next[i]);
  }
  long double z = 0.0L;
  for (double v : next) z += std::exp(static_cast<long double>(v - m));
  const double lz = m + static_cast<double>(std::log(z));
  for (double& v : next) v -= lz;
  return next;
}

}  // namespace

VotePopulation mv_update(const VotePopulation& pi, std::span<const double> rbar, double beta) {
  if (rbar.size() != pi.probs.size()) throw InvalidArgument("reward/population size mismatch");
  if (!(beta > 0.0)) throw InvalidArgument(fmt::format("beta must be positive, got {}", beta));
  std::vector<double> log_pi(pi.probs.size());
  for (std::size_t i = 0; i < log_pi.size(); ++i) log_pi[i] = std::log(pi.probs[i]);
  VotePopulation next{update_log(log_pi, rbar, beta)};
  for (double& v : next.probs) v = std::exp(v);
  return next;
}

DynamicsSeries run_dynamics(const VotePopulation& pi0, const VoteConfig& config) {
  pi0.validate();
  config.validate(pi0.probs.size());
  DynamicsSeries series;
  series.mode = pi0.unique_mode();
  const std::size_t star = series.mode;
  const std::size_t m = pi0.probs.size();

  // The recurrence runs in log space so Lambda follows
  // Lambda_{k+1} = Lambda_k + (rbar(y*) - rbar(y')) / beta up to rounding.
  std::vector<double> log_pi(m);
  for (std::size_t i = 0; i < m; ++i) log_pi[i] = std::log(pi0.probs[i]);

  for (int k = 0;; ++k) {
    DynamicsStep step;
    step.iteration = k;
    step.pi.resize(m);
    for (std::size_t i = 0; i < m; ++i) step.pi[i] = std::exp(log_pi[i]);
    for (std::size_t i = 0; i < m; ++i)
      if (i != star) step.lambda.push_back(log_pi[star] - log_pi[i]);
    // Renormalize the linear view before evaluating the reward.
    VotePopulation current{step.pi};
    double s = 0.0;
    for (double p : current.probs) s += p;
    for (double& p : current.probs) p /= s;
    step.rbar = expected_majority_reward(current, config);
    const bool done = step.pi[star] > config.converge_threshold;
    const std::vector<double> rbar = step.rbar;
    series.steps.push_back(std::move(step));
    if (done) {
      series.converged = true;
      break;
    }
    if (k >= config.iterations) break;
    log_pi = update_log(log_pi, rbar, config.beta);
  }
  return series;
}

void write_csv(const DynamicsSeries& series, std::ostream& out) {
  if (series.steps.empty()) return;
  const std::size_t m = series.steps.front().pi.size();
  out << "iteration";
  for (std::size_t i = 0; i < m; ++i) out << ",pi_" << i;
  for (std::size_t i = 0; i < m; ++i) out << ",rbar_" << i;
  for (std::size_t i = 0; i < m; ++i)
    if (i != series.mode) out << ",lambda_" << i;
  out << '\n';
  for (const auto& s : series.steps) {
    out << s.iteration;
    for (double v : s.pi) fmt::print(out, ",{:.17g}", v);
    for (double v : s.rbar) fmt::print(out, ",{:.17g}", v);
    for (double v : s.lambda) fmt::print(out, ",{:.17g}", v);
    out << '\n';
  }
}

std::string_view to_string(RewardReading reading) {
  return reading == RewardReading::SelectedWinner ? "selected" : "membership";
}

RewardReading parse_reward_reading(std::string_view name) {
  if (name == "selected") return RewardReading::SelectedWinner;
  if (name == "membership") return RewardReading::Membership;
  throw InvalidArgument(fmt::format("unknown reward reading '{}'", name));
}

}  // namespace powerflow
