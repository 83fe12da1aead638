#pragma once

// Exact dynamics of exponentiated-reward updates driven by the expected
// majority-vote reward over N i.i.d. draws.

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string_view>
#include <vector>

namespace powerflow {

struct VotePopulation {
  std::vector<double> probs;

  void validate() const;
  // Index of the unique maximum; throws InvalidArgument on ties.
  std::size_t unique_mode() const;
  bool operator==(const VotePopulation&) const = default;
};

enum class VoteMode { Exact, MonteCarlo };

// SelectedWinner credits 1/|tie set| to each tied maximizer (sums to 1);
// Membership credits every tied maximizer in full.
enum class RewardReading { SelectedWinner, Membership };

struct VoteConfig {
  int n_votes = 3;
  double beta = 1.0;
  int iterations = 10'000;
  VoteMode mode = VoteMode::Exact;
  std::uint64_t mc_samples = 1'000'000;
  std::uint64_t mc_seed = 0;
  RewardReading reading = RewardReading::SelectedWinner;
  double converge_threshold = 1.0 - 1e-9;

  void validate(std::size_t num_answers) const;
  bool operator==(const VoteConfig&) const = default;
};

inline constexpr std::uint64_t kCompositionCap = 1'000'000;

// C(n + m - 1, m - 1); saturates at UINT64_MAX on overflow.
std::uint64_t composition_count(int n, std::size_t m);

std::vector<double> expected_majority_reward(const VotePopulation& pi, const VoteConfig& config);

VotePopulation mv_update(const VotePopulation& pi, std::span<const double> rbar, double beta);

struct DynamicsStep {
  int iteration = 0;
  std::vector<double> pi;
  std::vector<double> rbar;
  // log(pi(y*) / pi(y')) for every y' != y*, in answer order.
  std::vector<double> lambda;
};

struct DynamicsSeries {
  std::size_t mode = 0;
  std::vector<DynamicsStep> steps;
  bool converged = false;
};

// Iterates reward + update from pi0 until pi(y*) exceeds the threshold or the
// iteration budget is spent. The last recorded step is the final population
// (its rbar is evaluated there too).
DynamicsSeries run_dynamics(const VotePopulation& pi0, const VoteConfig& config);

// iteration,pi_0..,rbar_0..,lambda_<y'>..
void write_csv(const DynamicsSeries& series, std::ostream& out);

std::string_view to_string(RewardReading reading);
RewardReading parse_reward_reading(std::string_view name);

}  // namespace powerflow
