#include "powerflow/policy.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <sstream>

#include "powerflow/error.hpp"

namespace powerflow {

void ParamGradient::add_block(const LogitKey& key, std::span<const double> values, double scale) {
  auto [it, inserted] = entries.try_emplace(key, values.size(), 0.0);
  auto& block = it->second;
  if (block.size() != values.size()) throw InvalidArgument("gradient block size mismatch");
  for (std::size_t i = 0; i < values.size(); ++i) block[i] += scale * values[i];
}

void ParamGradient::add_scaled(const ParamGradient& other, double scale) {
  for (const auto& [key, values] : other.entries) add_block(key, values, scale);
}

void ParamGradient::scale(double factor) {
  for (auto& [key, values] : entries)
    for (double& v : values) v *= factor;
}

double ParamGradient::max_abs() const {
  double m = 0.0;
  for (const auto& [key, values] : entries)
    for (double v : values) m = std::max(m, std::abs(v));
  return m;
}

double ParamGradient::max_abs_diff(const ParamGradient& other) const {
  ParamGradient diff = *this;
  diff.add_scaled(other, -1.0);
  return diff.max_abs();
}

double log_sum_exp(std::span<const double> values) {
  if (values.empty()) return -std::numeric_limits<double>::infinity();
  const double m = *std::max_element(values.begin(), values.end());
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double v : values) s += std::exp(v - m);
  return m + std::log(s);
}

std::vector<double> softmax(std::span<const double> logits, double temperature) {
  if (!(temperature > 0.0))
    throw InvalidArgument(fmt::format("temperature must be positive, got {}", temperature));
  std::vector<double> out(logits.size());
  double m = -std::numeric_limits<double>::infinity();
  for (double l : logits) m = std::max(m, l / temperature);
  double s = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] / temperature - m);
    s += out[i];
  }
  for (double& p : out) p /= s;
  return out;
}

Policy::Policy(Vocab vocab, int max_len, std::size_t num_queries, PolicyFamily family)
    : vocab_(vocab), max_len_(max_len), family_(family) {
  vocab_.validate();
  if (max_len < 1) throw InvalidArgument(fmt::format("max_len must be >= 1, got {}", max_len));
  if (num_queries == 0) throw InvalidArgument("a policy needs at least one query");
  defaults_.assign(num_queries, std::vector<double>(vocab_.size, 0.0));
}

void Policy::check_query(QueryId q) const {
  if (q.value >= defaults_.size())
    throw InvalidArgument(
        fmt::format("unknown query id {} (policy has {})", q.value, defaults_.size()));
}

void Policy::check_logits(std::span<const double> logits) const {
  if (logits.size() != static_cast<std::size_t>(vocab_.size))
    throw InvalidArgument(
        fmt::format("logit vector of size {} for vocab of size {}", logits.size(), vocab_.size));
  for (double l : logits)
    if (!std::isfinite(l)) throw InvalidArgument("non-finite logit");
}

LogitKey Policy::key_for(QueryId q, std::span<const Token> prefix) const {
  check_query(q);
  if (family_ == PolicyFamily::Tabular || prefix.empty())
    return {q.value, std::vector<Token>(prefix.begin(), prefix.end())};
  return {q.value, {prefix.back()}};
}

std::span<const double> Policy::default_logits(QueryId q) const {
  check_query(q);
  return defaults_[q.value];
}

std::span<const double> Policy::logits(const LogitKey& key) const {
  if (auto it = table_.find(key); it != table_.end()) return it->second;
  return default_logits(QueryId{key.query});
}

std::vector<double>& Policy::mutable_logits(const LogitKey& key) {
  check_query(QueryId{key.query});
  auto it = table_.find(key);
  if (it == table_.end()) it = table_.emplace(key, defaults_[key.query]).first;
  return it->second;
}

void Policy::set_logits(const LogitKey& key, std::vector<double> logits) {
  check_query(QueryId{key.query});
  check_logits(logits);
  table_[key] = std::move(logits);
}

void Policy::set_default_logits(QueryId q, std::vector<double> logits) {
  check_query(q);
  check_logits(logits);
  defaults_[q.value] = std::move(logits);
}

void Policy::materialize(QueryId q) {
  check_query(q);
  for (const auto& prefix : nonterminal_prefixes(vocab_, max_len_))
    mutable_logits(key_for(q, prefix));
}

double Policy::log_prob(QueryId q, const Trajectory& y) const {
  check_query(q);
  validate_trajectory(y, vocab_, max_len_);
  double total = 0.0;
  const std::span<const Token> tokens(y.tokens);
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const auto l = logits(key_for(q, tokens.first(t)));
    total += l[tokens[t]] - log_sum_exp(l);
  }
  return total;
}

std::vector<double> Policy::next_token_dist(QueryId q, std::span<const Token> prefix,
                                            double temperature) const {
  check_query(q);
  if (static_cast<int>(prefix.size()) >= max_len_ ||
      std::find(prefix.begin(), prefix.end(), vocab_.eos_id) != prefix.end())
    throw InvalidArgument(fmt::format("prefix {} is not a non-terminal state", to_string(prefix)));
  return softmax(logits(key_for(q, prefix)), temperature);
}

Trajectory Policy::sample(QueryId q, Rng& rng, double temperature) const {
  check_query(q);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Trajectory y;
  while (static_cast<int>(y.tokens.size()) < max_len_) {
    const auto p = next_token_dist(q, y.tokens, temperature);
    const double u = unif(rng);
    double c = 0.0;
    Token chosen = vocab_.size - 1;
    for (Token t = 0; t < vocab_.size; ++t) {
      c += p[t];
      if (u < c) {
        chosen = t;
        break;
      }
    }
    // Guard against the cumulative sum ending just below u.
    while (p[chosen] == 0.0 && chosen > 0) --chosen;
    y.tokens.push_back(chosen);
    if (chosen == vocab_.eos_id) {
      y.terminated_by = Termination::Eos;
      return y;
    }
  }
  y.terminated_by = Termination::MaxLen;
  return y;
}

ParamGradient Policy::grad_log_prob(QueryId q, const Trajectory& y) const {
  check_query(q);
  validate_trajectory(y, vocab_, max_len_);
  ParamGradient g;
  const std::span<const Token> tokens(y.tokens);
  std::vector<double> block(vocab_.size);
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const auto key = key_for(q, tokens.first(t));
    const auto p = softmax(logits(key));
    for (Token v = 0; v < vocab_.size; ++v) block[v] = (v == tokens[t] ? 1.0 : 0.0) - p[v];
    g.add_block(key, block);
  }
  return g;
}

std::shared_ptr<const Policy> Policy::clone_frozen() const {
  return std::make_shared<const Policy>(*this);
}

std::string to_string(PolicyFamily family) {
  return family == PolicyFamily::Tabular ? "tabular" : "bigram";
}

PolicyFamily parse_policy_family(std::string_view name) {
  if (name == "tabular") return PolicyFamily::Tabular;
  if (name == "bigram") return PolicyFamily::Bigram;
  throw InvalidArgument(fmt::format("unknown policy family '{}'", name));
}

namespace {

constexpr std::string_view kEmptyContext = "\xC2\xB7";

std::string format_logits(std::span<const double> logits) {
  std::string out;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (i) out += ' ';
    out += fmt::format("{:.17g}", logits[i]);
  }
  return out;
}

std::vector<std::string> split_ws(std::string_view s) {
  std::vector<std::string> out;
  std::istringstream in{std::string(s)};
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

double parse_double(const std::string& s) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw InvalidArgument(fmt::format("bad number '{}'", s));
  }
  if (used != s.size()) throw InvalidArgument(fmt::format("bad number '{}'", s));
  return v;
}

long parse_int(const std::string& s) {
  long v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size())
    throw InvalidArgument(fmt::format("bad integer '{}'", s));
  return v;
}

}  // namespace

std::string serialize_policy(const Policy& policy) {
  const auto& v = policy.vocab();
  std::string out = "powerflow-policy 1\n";
  out += fmt::format("vocab {} {} {}\n", v.size, v.eos_id,
                     v.marker_id ? std::to_string(*v.marker_id) : std::string("-"));
  out += fmt::format("max_len {}\n", policy.max_len());
  out += fmt::format("family {}\n", to_string(policy.family()));
  out += fmt::format("queries {}\n", policy.num_queries());
  for (std::size_t q = 0; q < policy.num_queries(); ++q)
    out += fmt::format("{} / * -> {}\n", q, format_logits(policy.default_logits(QueryId{q})));
  for (const auto& [key, logits] : policy.explicit_logits())
    out += fmt::format("{} / {} -> {}\n", key.query, to_string(key.context), format_logits(logits));
  return out;
}

Policy parse_policy(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  auto header = [&](std::string_view name) {
    if (!std::getline(in, line)) throw InvalidArgument(fmt::format("missing '{}' line", name));
    auto f = split_ws(line);
    if (f.empty() || f[0] != name) throw InvalidArgument(fmt::format("expected '{}' line", name));
    return f;
  };
  if (header("powerflow-policy").size() != 2 || split_ws(line)[1] != "1")
    throw InvalidArgument("unsupported policy format version");
  auto vf = header("vocab");
  if (vf.size() != 4) throw InvalidArgument("vocab line needs size, eos_id, marker");
  std::optional<Token> marker;
  if (vf[3] != "-") marker = static_cast<Token>(parse_int(vf[3]));
  const Vocab vocab =
      Vocab::make(static_cast<int>(parse_int(vf[1])), static_cast<Token>(parse_int(vf[2])), marker);
  const int max_len = static_cast<int>(parse_int(header("max_len").at(1)));
  const PolicyFamily family = parse_policy_family(header("family").at(1));
  const auto nq = static_cast<std::size_t>(parse_int(header("queries").at(1)));
  Policy policy(vocab, max_len, nq, family);

  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto slash = line.find(" / ");
    const auto arrow = line.find(" -> ");
    if (slash == std::string::npos || arrow == std::string::npos || arrow < slash)
      throw InvalidArgument(fmt::format("malformed policy line '{}'", line));
    const auto q = static_cast<std::size_t>(parse_int(line.substr(0, slash)));
    const auto ctx = split_ws(std::string_view(line).substr(slash + 3, arrow - slash - 3));
    std::vector<double> logits;
    for (const auto& s : split_ws(std::string_view(line).substr(arrow + 4)))
      logits.push_back(parse_double(s));
    if (ctx.size() == 1 && ctx[0] == "*") {
      policy.set_default_logits(QueryId{q}, std::move(logits));
      continue;
    }
    LogitKey key{q, {}};
    if (!(ctx.size() == 1 && ctx[0] == kEmptyContext))
      for (const auto& s : ctx) key.context.push_back(static_cast<Token>(parse_int(s)));
    policy.set_logits(key, std::move(logits));
  }
  return policy;
}

}  // namespace powerflow
