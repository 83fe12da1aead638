#pragma once

// Synthetic base policies.

#include <cstdint>

#include "powerflow/oracle.hpp"
#include "powerflow/policy.hpp"

namespace powerflow {

// Logit standing in for a structurally impossible token: exp(-1000)
// underflows to exactly 0 in double precision.
inline constexpr double kMaskedLogit = -1000.0;

Policy uniform_policy(const Vocab& vocab, int max_len, std::size_t num_queries,
                      PolicyFamily family = PolicyFamily::Tabular);

// Uniform over EOS and the lowest-index m - 1 other tokens, m = exp(-c); every
// emitted token then has log-probability exactly c. Requires c = -log m for an
// integer 1 <= m <= vocab.size.
Policy constant_rate_policy(const Vocab& vocab, int max_len, std::size_t num_queries, double c);

// i.i.d. N(0, scale^2) logits at every reachable context of every query.
Policy random_policy(const Vocab& vocab, int max_len, std::size_t num_queries, std::uint64_t seed,
                     PolicyFamily family = PolicyFamily::Tabular, double scale = 1.0);

// Length-bias stressor over {EOS=0, s=1, r=2} with max_len = long_len:
//   root:            EOS short_p, s 0.8 (1 - short_p), r 0.2 (1 - short_p)
//   all-r prefixes:  r long_p, EOS and s (1 - long_p) / 2 each
//   anything else:   EOS 0.9, s and r 0.05 each
// The short branch ends almost immediately at low per-token confidence; the
// repeat branch is rare at the root but near-certain afterwards.
Policy two_mode_policy(double short_p, double long_p, int long_len, std::size_t num_queries);

// Three-trajectory universe {ac: 1/2, bc: 1/4, bd: 1/4} over
// {EOS=0, a=1, b=2, c=3, d=4} with max_len 2; everything else is masked.
Policy mismatch_policy(std::size_t num_queries = 1);

std::vector<double> logits_from_probs(std::span<const double> probs);

// Copy of the tabular `like` whose conditionals at query q reproduce `dist`
// exactly: each context's logits are the log masses of its continuations.
// Contexts with no mass keep their previous logits.
Policy policy_from_dist(const Policy& like, QueryId q, const FiniteDist& dist);

}  // namespace powerflow
