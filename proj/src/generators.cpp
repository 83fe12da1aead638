#include "powerflow/generators.hpp"

#include <fmt/format.h>

#include <cmath>
#include <map>
#include <random>

#include "powerflow/error.hpp"

namespace powerflow {

std::vector<double> logits_from_probs(std::span<const double> probs) {
  std::vector<double> out(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i)
    out[i] = probs[i] > 0.0 ? std::log(probs[i]) : kMaskedLogit;
  return out;
}

Policy uniform_policy(const Vocab& vocab, int max_len, std::size_t num_queries,
                      PolicyFamily family) {
  return Policy(vocab, max_len, num_queries, family);
}

Policy constant_rate_policy(const Vocab& vocab, int max_len, std::size_t num_queries, double c) {
  const double m_real = std::exp(-c);
  const long m = std::lround(m_real);
  if (m < 1 || m > vocab.size || std::abs(c + std::log(static_cast<double>(m))) > 1e-9)
    throw InvalidArgument(fmt::format(
        "constant-rate({}) needs c = -log m for an integer m in [1, {}]", c, vocab.size));
  std::vector<double> logits(vocab.size, kMaskedLogit);
  logits[vocab.eos_id] = 0.0;
  long allowed = 1;
  for (Token t = 0; t < vocab.size && allowed < m; ++t) {
    if (t == vocab.eos_id) continue;
    logits[t] = 0.0;
    ++allowed;
  }
  Policy p(vocab, max_len, num_queries);
  for (std::size_t q = 0; q < num_queries; ++q) p.set_default_logits(QueryId{q}, logits);
  return p;
}

Policy random_policy(const Vocab& vocab, int max_len, std::size_t num_queries, std::uint64_t seed,
                     PolicyFamily family, double scale) {
  Policy p(vocab, max_len, num_queries, family);
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, scale);
  for (std::size_t q = 0; q < num_queries; ++q) {
    p.materialize(QueryId{q});
  }
  // Fill in table order so the draw sequence depends only on the key set.
  for (const auto& [key, logits] : LogitTable(p.explicit_logits())) {
    std::vector<double> l(vocab.size);
    for (double& v : l) v = normal(rng);
    p.set_logits(key, std::move(l));
  }
  return p;
}

Policy two_mode_policy(double short_p, double long_p, int long_len, std::size_t num_queries) {
  if (!(short_p > 0.0 && short_p < 1.0) || !(long_p > 0.0 && long_p < 1.0))
    throw InvalidArgument("two-mode probabilities must lie in (0, 1)");
  if (long_len < 2) throw InvalidArgument("two-mode long_len must be >= 2");
  const Vocab vocab = Vocab::make(3, 0);
  constexpr Token kRepeat = 2;
  Policy p(vocab, long_len, num_queries);
  const double rest = 1.0 - short_p;
  const std::vector<double> off{0.9, 0.05, 0.05};
  const std::vector<double> root{short_p, 0.8 * rest, 0.2 * rest};
  const double leak = 0.5 * (1.0 - long_p);
  const std::vector<double> repeat{leak, leak, long_p};
  for (std::size_t q = 0; q < num_queries; ++q) {
    const QueryId id{q};
    p.set_default_logits(id, logits_from_probs(off));
    p.set_logits(p.key_for(id, {}), logits_from_probs(root));
    std::vector<Token> prefix;
    for (int t = 1; t < long_len; ++t) {
      prefix.push_back(kRepeat);
      p.set_logits(p.key_for(id, prefix), logits_from_probs(repeat));
    }
  }
  return p;
}

Policy mismatch_policy(std::size_t num_queries) {
  const Vocab vocab = Vocab::make(5, 0);
  Policy p(vocab, 2, num_queries);
  for (std::size_t q = 0; q < num_queries; ++q) {
    const QueryId id{q};
    const std::vector<Token> a{1}, b{2};
    p.set_default_logits(id, logits_from_probs(std::vector<double>{1.0, 0, 0, 0, 0}));
    p.set_logits(p.key_for(id, {}), logits_from_probs(std::vector<double>{0, 0.5, 0.5, 0, 0}));
    p.set_logits(p.key_for(id, a), logits_from_probs(std::vector<double>{0, 0, 0, 1.0, 0}));
    p.set_logits(p.key_for(id, b), logits_from_probs(std::vector<double>{0, 0, 0, 0.5, 0.5}));
  }
  return p;
}

Policy policy_from_dist(const Policy& like, QueryId q, const FiniteDist& dist) {
  if (like.family() != PolicyFamily::Tabular)
    throw InvalidArgument("policy_from_dist needs a tabular policy");
  const auto& vocab = like.vocab();
  std::map<std::vector<Token>, std::vector<double>> mass;
  for (std::size_t i = 0; i < dist.size(); ++i) {
    const auto& tokens = dist.at(i).tokens;
    for (std::size_t k = 0; k < tokens.size(); ++k) {
      auto& m = mass[std::vector<Token>(tokens.begin(), tokens.begin() + static_cast<long>(k))];
      m.resize(static_cast<std::size_t>(vocab.size), 0.0);
      m[static_cast<std::size_t>(tokens[k])] += dist.probs[i];
    }
  }
  Policy out = like;
  for (const auto& [prefix, m] : mass) {
    double total = 0.0;
    for (double v : m) total += v;
    if (total > 0.0) out.set_logits(out.key_for(q, prefix), logits_from_probs(m));
  }
  return out;
}

}  // namespace powerflow
