#include <doctest.h>

#include <cmath>
#include <random>

#include "fixtures.hpp"
#include "powerflow/error.hpp"
#include "powerflow/objectives.hpp"
#include "powerflow/target.hpp"

using namespace powerflow;
using namespace fixtures;

namespace {

TargetSpec alpha_spec(double alpha) {
  TargetSpec s;
  s.alpha = alpha;
  return s;
}

SampleTerms terms_for(const Policy& pi, const Policy& old, const Policy& base, const Trajectory& y,
                      const TargetSpec& spec, double log_z) {
  SampleTerms s;
  s.log_z = log_z;
  s.log_pi = pi.log_prob(kQ, y);
  s.log_pi_old = old.log_prob(kQ, y);
  s.log_pbase = base.log_prob(kQ, y);
  s.log_ptilde = log_density_unnorm(base, kQ, y, spec);
  s.psi = per_token_penalty(y, base.vocab(), spec);
  s.length = y.length();
  return s;
}

}  // namespace

TEST_CASE("loss kind names round-trip") {
  for (auto k : kAllLossKinds) CHECK(parse_loss_kind(to_string(k)) == k);
  CHECK_THROWS_AS(parse_loss_kind("tb"), InvalidArgument);
  CHECK(is_rl(LossKind::RLToken));
  CHECK_FALSE(is_rl(LossKind::PowerFlow));
  CHECK(is_length_normalized(LossKind::PowerFlow));
  CHECK_FALSE(is_length_normalized(LossKind::TBToken));
}

TEST_CASE("trajectory balance") {
  CHECK(loss_tb_traj(1.0, -2.0, -1.0) == 0.0);
  CHECK(loss_tb_traj(std::log(0.375), std::log(0.5), std::log(0.25)) ==
        doctest::Approx(std::pow(std::log(0.75), 2)).epsilon(1e-14));
  CHECK(loss_tb_traj(std::log(0.375), std::log(0.5), std::log(0.25)) ==
        doctest::Approx(0.082758).epsilon(1e-5));
  CHECK(loss_tb_traj(0.3 + 2.0, -1.1, -0.7 + 2.0) == doctest::Approx(loss_tb_traj(0.3, -1.1, -0.7)));
}

TEST_CASE("token-averaged trajectory balance depends on length") {
  CHECK(loss_tb_token(0.0, std::log(0.25), std::log(0.25), 2, 2.0) == 0.0);
  CHECK(loss_tb_token(0.0, std::log(0.25), std::log(0.25), 1, 2.0) ==
        doctest::Approx(std::pow(std::log(0.25), 2)).epsilon(1e-14));
  CHECK_THROWS_AS(loss_tb_token(0.0, 0.0, 0.0, 0, 1.0), InvalidArgument);
}

TEST_CASE("token averaging ranks the long repeat sequence above short ones") {
  // Per-step P(r) = 0.9 after an r; the root offers EOS, s and r.
  const Vocab v = Vocab::make(3, 0);
  const int L = 6;
  Policy base(v, L, 1);
  base.set_default_logits(kQ, logits_from_probs(std::vector<double>{0.9, 0.05, 0.05}));
  base.set_logits(base.key_for(kQ, {}), logits_from_probs(std::vector<double>{0.3, 0.4, 0.3}));
  for (int n = 1; n < L; ++n)
    base.set_logits(base.key_for(kQ, std::vector<Token>(static_cast<std::size_t>(n), 2)),
                    logits_from_probs(std::vector<double>{0.05, 0.05, 0.9}));
  const double alpha = 4.0;
  const auto score = [&](const Trajectory& y) {
    return alpha * base.log_prob(kQ, y) / static_cast<double>(y.length());
  };
  const auto longest = make_trajectory(std::vector<Token>(L, 2), v, L);
  for (const auto& y : enumerate_trajectories(v, L))
    if (y.terminated_by == Termination::Eos && y.length() <= 2) CHECK(score(longest) > score(y));
}

TEST_CASE("length-aware trajectory balance") {
  const Policy base = uniform_ab();
  const TargetSpec spec = alpha_spec(2.0);
  const auto la = exact_la_target(base, kQ, spec);
  const Policy star = policy_from_dist(base, kQ, la.dist);
  for (std::size_t i = 0; i < la.dist.size(); ++i) {
    const auto& y = la.dist.at(i);
    CHECK(loss_la_tb(la.log_z_prime, star.log_prob(kQ, y), log_density_unnorm(base, kQ, y, spec),
                     y.length()) < 1e-24);
  }
  CHECK(loss_la_tb(std::log(0.5), std::log(0.25), std::log(0.0625), 2) < 1e-30);
  // Doubling the length halves the residual of a fixed mismatch.
  const double r = 0.37;
  CHECK(loss_la_tb(0.0, r, 0.0, 1) == doctest::Approx(4.0 * loss_la_tb(0.0, r, 0.0, 2)));

  std::mt19937_64 rng(3);
  for (int i = 0; i < 30; ++i) {
    const Policy b = random_policy(Vocab::make(3, 0), 4, 1, rng());
    const TargetSpec s = alpha_spec(0.5 + i % 4);
    const auto t = exact_la_target(b, kQ, s);
    const Policy p = policy_from_dist(b, kQ, t.dist);
    for (std::size_t j = 0; j < t.dist.size(); ++j) {
      const auto& y = t.dist.at(j);
      CHECK(loss_la_tb(t.log_z_prime, p.log_prob(kQ, y), log_density_unnorm(b, kQ, y, s),
                       y.length()) < 1e-18);
    }
  }
}

TEST_CASE("clip ratio") {
  const ClipSpec clip;
  CHECK(clip_ratio(-1.3, -1.3, clip) == 1.0);
  CHECK(clip_ratio(std::log(1.5), 0.0, clip) == 1.28);
  CHECK(clip_ratio(std::log(0.5), 0.0, clip) == 0.8);
  std::mt19937_64 rng(9);
  std::normal_distribution<double> g(0.0, 0.5);
  for (int i = 0; i < 1000; ++i) {
    const double d = g(rng);
    const double w = clip_ratio(d, 0.0, clip);
    CHECK(w >= 0.8);
    CHECK(w <= 1.28);
    if (std::exp(d) > 0.8 && std::exp(d) < 1.28) CHECK(w == std::exp(d));
  }
}

TEST_CASE("PowerFlow loss") {
  const ClipSpec clip;
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g;
  for (int i = 0; i < 100; ++i) {
    const double lz = g(rng), lp = -std::abs(g(rng)) * 3, lb = -std::abs(g(rng)) * 3, alpha = 0.5 + (i % 5);
    const std::size_t len = 1 + i % 4;
    CHECK(loss_powerflow(lz, lp, lp, lb, 0.0, len, alpha, clip) ==
          doctest::Approx(loss_la_tb(lz, lp, alpha * lb, len)).epsilon(1e-14));
  }

  const Policy base = uniform_ab();
  const double lz = std::log(0.5) * (2.0 - 1.0);
  for (const auto& y : enumerate_trajectories(base.vocab(), 2)) {
    const double lp = base.log_prob(kQ, y);
    CHECK(loss_powerflow(lz, lp, lp, lp, 0.0, y.length(), 2.0, clip) < 1e-30);
  }

  // A format violation with psi = -0.5 and alpha = 2 moves the target term by +1 per token.
  const double lp = std::log(0.25), lb = std::log(0.25);
  const double compliant = loss_powerflow(0.1, lp, lp, lb, 0.0, 2, 2.0, clip);
  const double violating = loss_powerflow(0.1, lp, lp, lb, -0.5, 2, 2.0, clip);
  const double r0 = 0.1 + lp / 2 - 2.0 * lb / 2;
  CHECK(compliant == doctest::Approx(r0 * r0).epsilon(1e-14));
  CHECK(violating == doctest::Approx((r0 + 1.0) * (r0 + 1.0)).epsilon(1e-14));
}

TEST_CASE("RL-KL advantage") {
  const auto t = loss_rl_kl(LossKind::RLTraj, -1.2, -0.7, 3, 0.5, 0.0);
  CHECK(t.coefficient == doctest::Approx(-0.7 - 0.5 * (-1.2 + 0.7)));
  CHECK(t.surrogate == doctest::Approx(-t.coefficient * -1.2));
  const auto tok = loss_rl_kl(LossKind::RLToken, -1.2, -0.6, 3, 0.5, 0.0);
  CHECK(tok.coefficient == doctest::Approx(-0.2 - 0.5 * (-1.2 + 0.6)));
  // Baseline equal to the reward leaves only the KL term.
  const double r = rl_reward(LossKind::RLTraj, -0.9, 2);
  const auto k = loss_rl_kl(LossKind::RLTraj, -1.4, -0.9, 2, 2.0, r);
  CHECK(k.coefficient == doctest::Approx(-2.0 * (-1.4 - -0.9)).epsilon(1e-15));
  CHECK_THROWS_AS(rl_reward(LossKind::LATB, 0.0, 1), InvalidArgument);
  CHECK_THROWS_AS(loss_rl_kl(LossKind::RLTraj, 0.0, 0.0, 1, 0.0, 0.0), InvalidArgument);
}

TEST_CASE("RL stationarity at the alpha = 1 + 1/beta power target") {
  std::mt19937_64 rng(8);
  for (int i = 0; i < 5; ++i) {
    const Policy base = random_policy(Vocab::make(3, 0), 3, 1, rng());
    for (double beta : {1.0 / 3.0, 1.0, 3.0}) {
      const auto target = exact_target_dist(base, kQ, alpha_spec(1.0 + 1.0 / beta));
      Policy p = policy_from_dist(base, kQ, target);
      CHECK(expected_rl_update(LossKind::RLTraj, p, base, kQ, beta).max_abs() < 1e-9);
      // Off the optimum the update is not zero.
      CHECK(expected_rl_update(LossKind::RLTraj, base, base, kQ, beta).max_abs() > 1e-3);
    }
    // Per unit of beta the update at the base vanishes as beta grows.
    auto big = expected_rl_update(LossKind::RLTraj, base, base, kQ, 1e6);
    big.scale(1.0 / 1e6);
    CHECK(big.max_abs() < 1e-5);
  }
}

TEST_CASE("gradients match finite differences for every loss kind") {
  std::mt19937_64 rng(61);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 40; ++i) {
    const Vocab v = Vocab::make(3, 0, 2);
    Policy pi = random_policy(v, 3, 1, rng());
    pi.materialize(kQ);
    const Policy old = random_policy(v, 3, 1, rng(), PolicyFamily::Tabular, 0.3);
    const Policy base = random_policy(v, 3, 1, rng());
    TargetSpec spec = alpha_spec(0.5 + 3.0 * (u(rng) + 1.0) / 2.0);
    spec.marker_required = i % 2 == 0;
    const auto ys = enumerate_trajectories(v, 3);
    const auto& y = ys[rng() % ys.size()];
    const double log_z = u(rng);
    const LossParams params{spec.alpha, 0.5 + (u(rng) + 1.0), ClipSpec{}};

    for (auto kind : kAllLossKinds) {
      SampleTerms s0 = terms_for(pi, old, base, y, spec, log_z);
      s0.baseline = 0.3 * u(rng);
      const auto analytic = grad_loss(kind, params, s0, pi, kQ, y);
      // Detached quantities (w, the RL coefficient) are held at their values at pi.
      auto fn = [&](const Policy& x) {
        SampleTerms s = s0;
        s.log_pi = x.log_prob(kQ, y);
        if (kind == LossKind::PowerFlow)
          return analytic.weight * std::pow(s.log_z + s.log_pi / s.length -
                                                spec.alpha * (s.log_pbase / s.length + s.psi),
                                            2);
        if (is_rl(kind)) return -loss_rl_kl(kind, s0.log_pi, s.log_pbase, s.length, params.beta, s.baseline).coefficient * s.log_pi;
        return loss_value(kind, params, s);
      };
      const auto numeric = finite_diff(fn, pi);
      const double scale = std::max({analytic.policy.max_abs(), numeric.max_abs(), 1e-2});
      CHECK_MESSAGE(analytic.policy.max_abs_diff(numeric) / scale < 1e-6, to_string(kind));

      if (!is_rl(kind)) {
        constexpr double h = 1e-5;
        SampleTerms up = s0, down = s0;
        up.log_z += h;
        down.log_z -= h;
        const double dz = (loss_value(kind, params, up) - loss_value(kind, params, down)) / (2 * h);
        CHECK(std::abs(dz - analytic.d_log_z) / std::max({std::abs(dz), 1e-2}) < 1e-6);
      }
    }
  }
}

TEST_CASE("PowerFlow gradient is w times the LA-TB gradient") {
  const Policy base = random_policy(Vocab::make(3, 0), 3, 1, 71);
  const Policy pi = random_policy(Vocab::make(3, 0), 3, 1, 72);
  const Policy old = random_policy(Vocab::make(3, 0), 3, 1, 73);
  const TargetSpec spec = alpha_spec(3.0);
  const LossParams params{3.0, 1.0, ClipSpec{}};
  for (const auto& y : enumerate_trajectories(base.vocab(), 3)) {
    const auto s = terms_for(pi, old, base, y, spec, -0.2);
    const auto pf = grad_loss(LossKind::PowerFlow, params, s, pi, kQ, y);
    auto la = grad_loss(LossKind::LATB, params, s, pi, kQ, y);
    la.policy.scale(pf.weight);
    CHECK(pf.policy.max_abs_diff(la.policy) < 1e-14);
    CHECK(pf.d_log_z == doctest::Approx(pf.weight * la.d_log_z));
    CHECK(pf.weight == clip_ratio(s.log_pi, s.log_pi_old, params.clip));
  }
}

TEST_CASE("zero residual gives zero gradient") {
  const Policy base = uniform_ab();
  const auto y = traj({kA, kEos}, base);
  SampleTerms s;
  s.log_pi = std::log(0.25);
  s.log_pi_old = s.log_pi;
  s.log_ptilde = std::log(0.25);
  s.log_pbase = std::log(0.25);
  s.length = 2;
  s.log_z = 0.0;
  for (auto kind : {LossKind::TBTraj, LossKind::LATB}) {
    const auto g = grad_loss(kind, LossParams{1.0, 1.0, {}}, s, base, kQ, y);
    CHECK(g.policy.max_abs() == 0.0);
    CHECK(g.d_log_z == 0.0);
  }
}

TEST_CASE("init_logz") {
  CHECK(init_logz(-2.0, 4.0, 0.0) == -6.0);
  CHECK(init_logz(-3.7, 1.0, 0.0) == 0.0);
  CHECK(init_logz(-2.0, 4.0, 0.01) == doctest::Approx(-5.99));
  for (int m : {1, 2, 3})
    for (double alpha : {0.5, 2.0, 4.0}) {
      const double c = -std::log(static_cast<double>(m));
      const Policy base = constant_rate_policy(Vocab::make(3, 0), 4, 1, c);
      CHECK(std::abs(init_logz(c, alpha, 0.0) - exact_la_target(base, kQ, alpha_spec(alpha)).log_z_prime) < 1e-10);
    }
}

TEST_CASE("optimal_logz") {
  const Policy base = random_policy(Vocab::make(3, 0), 3, 1, 81);
  const TargetSpec spec = alpha_spec(2.0);
  const Policy matched = policy_from_dist(base, kQ, exact_target_dist(base, kQ, spec));
  CHECK(std::abs(optimal_logz(matched, base, kQ, spec, LossKind::TBTraj) -
                 exact_log_partition(base, kQ, spec)) < 1e-10);
  CHECK(std::abs(optimal_logz(base, base, kQ, alpha_spec(1.0), LossKind::TBTraj)) < 1e-14);
  const auto la = exact_la_target(base, kQ, spec);
  const Policy la_matched = policy_from_dist(base, kQ, la.dist);
  CHECK(std::abs(optimal_logz(la_matched, base, kQ, spec, LossKind::LATB) - la.log_z_prime) < 1e-10);
  CHECK_THROWS_AS(optimal_logz(base, base, kQ, spec, LossKind::PowerFlow), InvalidArgument);
}

TEST_CASE("expected loss is nonnegative and zero at the fixed point") {
  const Policy base = random_policy(Vocab::make(3, 0), 3, 1, 91);
  const TargetSpec spec = alpha_spec(2.0);
  const auto la = exact_la_target(base, kQ, spec);
  const Policy star = policy_from_dist(base, kQ, la.dist);
  const LossParams params{2.0, 1.0, {}};
  CHECK(expected_loss(LossKind::LATB, params, star, base, kQ, spec, la.log_z_prime) < 1e-20);
  CHECK(expected_loss(LossKind::LATB, params, base, base, kQ, spec, la.log_z_prime) > 1e-4);
}

TEST_CASE("log Z table") {
  LogZTable t;
  t.at({0, 0}) = -1.0;
  t.at({1, 1}) = 2.0;
  t.at({1, 3}) = 4.0;
  CHECK(t.per_query(2) == std::vector<double>{-1.0, 3.0});
  CHECK(t.get({1, 3}) == 4.0);
  CHECK_THROWS_AS(t.get({2, 0}), InvalidArgument);
}
