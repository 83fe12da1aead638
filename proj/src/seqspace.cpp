#include "powerflow/seqspace.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <limits>

#include "powerflow/error.hpp"

namespace powerflow {

Vocab Vocab::make(int size, Token eos_id, std::optional<Token> marker_id) {
  Vocab v{size, eos_id, marker_id};
  v.validate();
  return v;
}

void Vocab::validate() const {
  if (size < 1) throw InvalidArgument(fmt::format("vocab size must be positive, got {}", size));
  if (eos_id < 0 || eos_id >= size)
    throw InvalidArgument(fmt::format("eos_id {} outside vocab of size {}", eos_id, size));
  if (marker_id) {
    if (*marker_id < 0 || *marker_id >= size)
      throw InvalidArgument(fmt::format("marker_id {} outside vocab of size {}", *marker_id, size));
    if (*marker_id == eos_id) throw InvalidArgument("marker_id must differ from eos_id");
  }
}

namespace {

bool mul_overflows(std::uint64_t a, std::uint64_t b, std::uint64_t* out) {
  return __builtin_mul_overflow(a, b, out);
}

void require_max_len(int max_len) {
  if (max_len < 1) throw InvalidArgument(fmt::format("max_len must be >= 1, got {}", max_len));
}

}  // namespace

std::uint64_t trajectory_count(const Vocab& vocab, int max_len) {
  vocab.validate();
  require_max_len(max_len);
  const auto k = static_cast<std::uint64_t>(vocab.non_eos_count());
  if (k == 0) return 1;
  std::uint64_t total = 0;
  std::uint64_t power = 1;  // k^t
  for (int t = 0; t < max_len; ++t) {
    if (__builtin_add_overflow(total, power, &total) || mul_overflows(power, k, &power))
      throw CapacityError(fmt::format("trajectory count overflows for k={} L={}", k, max_len));
  }
  if (__builtin_add_overflow(total, power, &total))
    throw CapacityError(fmt::format("trajectory count overflows for k={} L={}", k, max_len));
  return total;
}

namespace {

void enumerate_into(const Vocab& vocab, int max_len, std::vector<Token>& prefix,
                    std::vector<Trajectory>& out) {
  if (static_cast<int>(prefix.size()) == max_len) {
    out.push_back({prefix, Termination::MaxLen});
    return;
  }
  for (Token t = 0; t < vocab.size; ++t) {
    prefix.push_back(t);
    if (t == vocab.eos_id) {
      out.push_back({prefix, Termination::Eos});
    } else {
      enumerate_into(vocab, max_len, prefix, out);
    }
    prefix.pop_back();
  }
}

}  // namespace

std::vector<Trajectory> enumerate_trajectories(const Vocab& vocab, int max_len, std::uint64_t cap) {
  const std::uint64_t n = trajectory_count(vocab, max_len);
  if (n > cap)
    throw CapacityError(
        fmt::format("universe of {} trajectories exceeds the enumeration cap {}", n, cap));
  std::vector<Trajectory> out;
  out.reserve(n);
  std::vector<Token> prefix;
  enumerate_into(vocab, max_len, prefix, out);
  return out;
}

Universe make_universe(const Vocab& vocab, int max_len, std::uint64_t cap) {
  return std::make_shared<const std::vector<Trajectory>>(
      enumerate_trajectories(vocab, max_len, cap));
}

void validate_trajectory(const Trajectory& y, const Vocab& vocab, int max_len) {
  const auto n = y.tokens.size();
  if (n == 0) throw InvalidArgument("empty trajectory");
  if (static_cast<int>(n) > max_len)
    throw InvalidArgument(fmt::format("trajectory length {} exceeds max_len {}", n, max_len));
  for (std::size_t i = 0; i < n; ++i) {
    const Token t = y.tokens[i];
    if (t < 0 || t >= vocab.size)
      throw InvalidArgument(fmt::format("token {} outside vocab of size {}", t, vocab.size));
    if (t == vocab.eos_id && i + 1 != n)
      throw InvalidArgument(fmt::format("EOS before the end of {}", to_string(y)));
  }
  const bool ends_eos = y.tokens.back() == vocab.eos_id;
  if (y.terminated_by == Termination::Eos && !ends_eos)
    throw InvalidArgument(fmt::format("{} marked EOS-terminated but does not end in EOS",
                                      to_string(y)));
  if (y.terminated_by == Termination::MaxLen && (ends_eos || static_cast<int>(n) != max_len))
    throw InvalidArgument(fmt::format("{} is not a valid forced stop at max_len {}",
                                      to_string(y), max_len));
}

Trajectory make_trajectory(std::vector<Token> tokens, const Vocab& vocab, int max_len) {
  Trajectory y{std::move(tokens), Termination::Eos};
  if (!y.tokens.empty() && y.tokens.back() != vocab.eos_id) y.terminated_by = Termination::MaxLen;
  validate_trajectory(y, vocab, max_len);
  return y;
}

namespace {

void prefixes_into(const Vocab& vocab, int max_len, std::vector<Token>& prefix,
                   std::vector<std::vector<Token>>& out) {
  out.push_back(prefix);
  if (static_cast<int>(prefix.size()) + 1 >= max_len) return;
  for (Token t = 0; t < vocab.size; ++t) {
    if (t == vocab.eos_id) continue;
    prefix.push_back(t);
    prefixes_into(vocab, max_len, prefix, out);
    prefix.pop_back();
  }
}

}  // namespace

std::vector<std::vector<Token>> nonterminal_prefixes(const Vocab& vocab, int max_len) {
  require_max_len(max_len);
  std::vector<std::vector<Token>> out;
  std::vector<Token> prefix;
  prefixes_into(vocab, max_len, prefix, out);
  std::sort(out.begin(), out.end());
  return out;
}

std::string to_string(std::span<const Token> tokens) {
  if (tokens.empty()) return "\xC2\xB7";
  return fmt::format("{}", fmt::join(tokens, " "));
}

std::string to_string(const Trajectory& y) { return "[" + to_string(y.tokens) + "]"; }

}  // namespace powerflow
