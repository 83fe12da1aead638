#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "powerflow/error.hpp"
#include "powerflow/seqspace.hpp"

using namespace powerflow;

namespace {

// Independent count: number of token strings of length < L ending in EOS plus
// EOS-free strings of length L, by brute-force counting over k-ary strings.
std::uint64_t brute_count(int k, int L) {
  std::uint64_t total = 0, power = 1;
  for (int t = 0; t < L; ++t) {
    total += power;
    power *= static_cast<std::uint64_t>(k);
  }
  return total + power;
}

bool is_proper_prefix(const std::vector<Token>& a, const std::vector<Token>& b) {
  return a.size() < b.size() && std::equal(a.begin(), a.end(), b.begin());
}

}  // namespace

TEST_CASE("vocab invariants") {
  CHECK_NOTHROW(Vocab::make(2, 0));
  CHECK_NOTHROW(Vocab::make(1, 0));
  CHECK_NOTHROW(Vocab::make(3, 0, 2));
  CHECK_THROWS_AS(Vocab::make(0, 0), InvalidArgument);
  CHECK_THROWS_AS(Vocab::make(2, 2), InvalidArgument);
  CHECK_THROWS_AS(Vocab::make(3, 0, 0), InvalidArgument);
  CHECK_THROWS_AS(Vocab::make(3, 0, 3), InvalidArgument);
}

TEST_CASE("enumeration of {a, EOS} at max_len 2 is [EOS], [a,EOS], [a,a]") {
  const auto ys = enumerate_trajectories(Vocab::make(2, 0), 2);
  REQUIRE(ys.size() == 3);
  CHECK(ys[0].tokens == std::vector<Token>{0});
  CHECK(ys[1].tokens == std::vector<Token>{1, 0});
  CHECK(ys[2].tokens == std::vector<Token>{1, 1});
  CHECK(ys[0].terminated_by == Termination::Eos);
  CHECK(ys[1].terminated_by == Termination::Eos);
  CHECK(ys[2].terminated_by == Termination::MaxLen);
  CHECK(ys[0].length() == 1);
  CHECK(ys[1].length() == 2);
  CHECK(ys[2].length() == 2);
}

TEST_CASE("EOS-only vocabulary has the single trajectory [EOS]") {
  const auto ys = enumerate_trajectories(Vocab::make(1, 0), 3);
  REQUIRE(ys.size() == 1);
  CHECK(ys[0].tokens == std::vector<Token>{0});
  CHECK(trajectory_count(Vocab::make(1, 0), 5) == 1);
}

TEST_CASE("trajectory counts") {
  CHECK(enumerate_trajectories(Vocab::make(3, 0), 2).size() == 7);
  CHECK(trajectory_count(Vocab::make(2, 0), 2) == 3);
  CHECK(trajectory_count(Vocab::make(3, 0), 3) == 15);
}

TEST_CASE("count consistency and prefix-freeness for k <= 3, L <= 6") {
  for (int k = 0; k <= 3; ++k)
    for (int L = 1; L <= 6; ++L) {
      const Vocab v = Vocab::make(k + 1, 0);
      const auto ys = enumerate_trajectories(v, L);
      CHECK(ys.size() == trajectory_count(v, L));
      CHECK(ys.size() == brute_count(k, L));
      CHECK(std::is_sorted(ys.begin(), ys.end()));
      for (std::size_t i = 0; i + 1 < ys.size(); ++i)
        for (std::size_t j = i + 1; j < ys.size(); ++j) {
          CHECK_FALSE(is_proper_prefix(ys[i].tokens, ys[j].tokens));
          CHECK_FALSE(is_proper_prefix(ys[j].tokens, ys[i].tokens));
        }
    }
}

TEST_CASE("enumeration is deterministic") {
  const Vocab v = Vocab::make(3, 1);
  CHECK(enumerate_trajectories(v, 4) == enumerate_trajectories(v, 4));
}

TEST_CASE("enumeration respects the cap") {
  const Vocab v = Vocab::make(3, 0);
  CHECK_THROWS_AS(enumerate_trajectories(v, 4, 30), CapacityError);
  CHECK(enumerate_trajectories(v, 4, 31).size() == 31);
  CHECK_THROWS_AS(trajectory_count(Vocab::make(1000, 0), 40), CapacityError);
}

TEST_CASE("make_trajectory infers termination and rejects malformed tokens") {
  const Vocab v = Vocab::make(3, 0);
  CHECK(make_trajectory({1, 2, 0}, v, 4).terminated_by == Termination::Eos);
  CHECK(make_trajectory({1, 2, 1, 2}, v, 4).terminated_by == Termination::MaxLen);
  CHECK_THROWS_AS(make_trajectory({1, 2}, v, 4), InvalidArgument);
  CHECK_THROWS_AS(make_trajectory({0, 1}, v, 4), InvalidArgument);
  CHECK_THROWS_AS(make_trajectory({}, v, 4), InvalidArgument);
  CHECK_THROWS_AS(make_trajectory({1, 3, 0}, v, 4), InvalidArgument);
  CHECK_THROWS_AS(make_trajectory({1, 1, 1, 1, 0}, v, 4), InvalidArgument);
}

TEST_CASE("nonterminal prefixes are the EOS-free strings shorter than max_len") {
  const auto ps = nonterminal_prefixes(Vocab::make(3, 0), 3);
  CHECK(ps.size() == 1 + 2 + 4);
  CHECK(ps.front().empty());
  CHECK(std::is_sorted(ps.begin(), ps.end()));
  for (const auto& p : ps) CHECK(std::find(p.begin(), p.end(), 0) == p.end());
}

TEST_CASE("to_string renders tokens") {
  CHECK(to_string(std::vector<Token>{1, 2, 0}) == "1 2 0");
}
