#pragma once

// Autoregressive softmax policies over a finite sequence space.
//
// Parameters are raw logits keyed by (query, context). For the tabular family
// the context is the whole prefix; for the bigram family it is the last token
// (empty at the start state). Contexts without an explicit entry fall back to
// the per-query default vector and are materialized on first write.

#include <compare>
#include <map>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "powerflow/seqspace.hpp"

namespace powerflow {

using Rng = std::mt19937_64;

enum class PolicyFamily { Tabular, Bigram };

struct LogitKey {
  std::size_t query = 0;
  std::vector<Token> context;
  auto operator<=>(const LogitKey&) const = default;
};

using LogitTable = std::map<LogitKey, std::vector<double>>;

// Sparse gradient over logit blocks; absent keys are zero.
struct ParamGradient {
  LogitTable entries;

  void add_scaled(const ParamGradient& other, double scale);
  void add_block(const LogitKey& key, std::span<const double> values, double scale = 1.0);
  void scale(double factor);
  // Max-norm of (this - other), treating absent blocks as zero.
  double max_abs_diff(const ParamGradient& other) const;
  double max_abs() const;
  bool empty() const { return entries.empty(); }
};

std::vector<double> softmax(std::span<const double> logits, double temperature = 1.0);
double log_sum_exp(std::span<const double> values);

class Policy {
 public:
  // Uniform policy: zero default logits for every query.
  Policy(Vocab vocab, int max_len, std::size_t num_queries,
         PolicyFamily family = PolicyFamily::Tabular);

  const Vocab& vocab() const { return vocab_; }
  int max_len() const { return max_len_; }
  std::size_t num_queries() const { return defaults_.size(); }
  PolicyFamily family() const { return family_; }

  LogitKey key_for(QueryId q, std::span<const Token> prefix) const;

  std::span<const double> logits(const LogitKey& key) const;
  std::span<const double> default_logits(QueryId q) const;
  // Materializes the entry from the query default if absent.
  std::vector<double>& mutable_logits(const LogitKey& key);

  void set_logits(const LogitKey& key, std::vector<double> logits);
  void set_default_logits(QueryId q, std::vector<double> logits);
  // Makes every reachable context of q explicit.
  void materialize(QueryId q);

  const LogitTable& explicit_logits() const { return table_; }

  double log_prob(QueryId q, const Trajectory& y) const;
  std::vector<double> next_token_dist(QueryId q, std::span<const Token> prefix,
                                      double temperature = 1.0) const;
  Trajectory sample(QueryId q, Rng& rng, double temperature = 1.0) const;
  // onehot(chosen) - softmax(logits) for each step of y; bigram blocks that
  // repeat along the path accumulate.
  ParamGradient grad_log_prob(QueryId q, const Trajectory& y) const;

  std::shared_ptr<const Policy> clone_frozen() const;

  bool operator==(const Policy&) const = default;

 private:
  void check_query(QueryId q) const;
  void check_logits(std::span<const double> logits) const;

  Vocab vocab_;
  int max_len_;
  PolicyFamily family_;
  std::vector<std::vector<double>> defaults_;
  LogitTable table_;
};

// Text format, one block per line:
//   powerflow-policy 1
//   vocab <size> <eos_id> [<marker_id>|-]
//   max_len <L>
//   family tabular|bigram
//   queries <n>
//   <q> / * -> <logits...>                  (query default)
//   <q> / <context tokens|·> -> <logits...>
// Logits are written with 17 significant digits and round-trip exactly.
std::string serialize_policy(const Policy& policy);
Policy parse_policy(std::string_view text);

std::string to_string(PolicyFamily family);
PolicyFamily parse_policy_family(std::string_view name);

}  // namespace powerflow
