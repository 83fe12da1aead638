#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "powerflow/generators.hpp"
#include "powerflow/oracle.hpp"
#include "powerflow/policy.hpp"

namespace fixtures {

using namespace powerflow;

inline constexpr Token kEos = 0;
inline constexpr Token kA = 1;
inline constexpr Token kB = 2;
inline const QueryId kQ{0};

// {a, EOS} with uniform conditionals, max_len 2: [EOS] 0.5, [a,EOS] 0.25, [a,a] 0.25.
inline Policy uniform_ab() { return Policy(Vocab::make(2, kEos), 2, 1); }

inline Trajectory traj(std::vector<Token> tokens, const Policy& p) {
  return make_trajectory(std::move(tokens), p.vocab(), p.max_len());
}

inline std::vector<double> random_simplex(std::mt19937_64& rng, std::size_t n) {
  std::gamma_distribution<double> g(1.0, 1.0);
  std::vector<double> p(n);
  double s = 0.0;
  for (auto& x : p) s += (x = g(rng));
  for (auto& x : p) x /= s;
  return p;
}

// Independent oracle: sum over the enumeration of exp(log_prob), no shared
// code with the module under test beyond log_prob itself.
inline double total_mass(const Policy& p, QueryId q) {
  double s = 0.0;
  for (const auto& y : enumerate_trajectories(p.vocab(), p.max_len())) s += std::exp(p.log_prob(q, y));
  return s;
}

}  // namespace fixtures
