#pragma once

// Finite autoregressive sequence universe: vocabularies, terminated
// trajectories and their canonical enumeration.

#include <compare>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace powerflow {

using Token = int;

struct QueryId {
  std::size_t value = 0;
  auto operator<=>(const QueryId&) const = default;
};

struct Vocab {
  int size = 2;
  Token eos_id = 0;
  std::optional<Token> marker_id;

  // Throws InvalidArgument when the invariants do not hold.
  static Vocab make(int size, Token eos_id, std::optional<Token> marker_id = std::nullopt);
  void validate() const;

  int non_eos_count() const { return size - 1; }
  bool operator==(const Vocab&) const = default;
};

enum class Termination { Eos, MaxLen };

struct Trajectory {
  std::vector<Token> tokens;
  Termination terminated_by = Termination::Eos;

  // |y|, counting the trailing EOS when present.
  std::size_t length() const { return tokens.size(); }

  bool operator==(const Trajectory&) const = default;
  auto operator<=>(const Trajectory& other) const { return tokens <=> other.tokens; }
};

inline constexpr std::uint64_t kDefaultEnumerationCap = 1'000'000;

// Closed form sum_{t<L} k^t + k^L, k = size - 1. Throws CapacityError on
// integer overflow.
std::uint64_t trajectory_count(const Vocab& vocab, int max_len);

// Every valid trajectory exactly once, lexicographic by token index.
// Throws CapacityError when the count exceeds `cap`.
std::vector<Trajectory> enumerate_trajectories(const Vocab& vocab, int max_len,
                                               std::uint64_t cap = kDefaultEnumerationCap);

using Universe = std::shared_ptr<const std::vector<Trajectory>>;
Universe make_universe(const Vocab& vocab, int max_len,
                       std::uint64_t cap = kDefaultEnumerationCap);

// Builds a trajectory from raw tokens, inferring the termination kind.
// Throws InvalidArgument if the tokens violate the termination rules.
Trajectory make_trajectory(std::vector<Token> tokens, const Vocab& vocab, int max_len);

void validate_trajectory(const Trajectory& y, const Vocab& vocab, int max_len);

// All reachable non-terminal states (EOS-free prefixes shorter than max_len),
// lexicographic.
std::vector<std::vector<Token>> nonterminal_prefixes(const Vocab& vocab, int max_len);

std::string to_string(std::span<const Token> tokens);
std::string to_string(const Trajectory& y);

}  // namespace powerflow
