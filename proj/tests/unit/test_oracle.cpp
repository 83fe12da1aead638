#include <doctest.h>

#include <array>
#include <cmath>
#include <random>
#include <sstream>

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

FiniteDist on_support(const Universe& u, std::vector<double> probs) { return {u, std::move(probs)}; }

}  // namespace

TEST_CASE("exact partition") {
  const Policy ab = uniform_ab();
  CHECK(exact_partition(ab, kQ, alpha_spec(1.0)) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(exact_partition(ab, kQ, alpha_spec(2.0)) == doctest::Approx(0.375).epsilon(1e-14));

  // Uniform over {EOS, a, b} at L = 2: [EOS] 1/3, [x, EOS] 1/9 (x2), [x, y] 1/9 (x4).
  const Policy abc(Vocab::make(3, 0), 2, 1);
  const double expect = 1.0 / 9.0 + 6.0 / 81.0;
  CHECK(exact_partition(abc, kQ, alpha_spec(2.0)) == doctest::Approx(expect).epsilon(1e-14));

  const Policy random = random_policy(Vocab::make(3, 0), 4, 1, 3);
  CHECK(exact_partition(random, kQ, alpha_spec(1.0)) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("exact target distribution") {
  const Policy ab = uniform_ab();
  const auto d = exact_target_dist(ab, kQ, alpha_spec(2.0));
  REQUIRE(d.size() == 3);
  CHECK(d.probs[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
  CHECK(d.probs[1] == doctest::Approx(1.0 / 6.0).epsilon(1e-14));
  CHECK(d.probs[2] == doctest::Approx(1.0 / 6.0).epsilon(1e-14));

  const Policy random = random_policy(Vocab::make(3, 0), 3, 1, 8);
  const auto same = exact_target_dist(random, kQ, alpha_spec(1.0));
  CHECK(tv(same, policy_dist(random, kQ)) < 1e-14);
}

TEST_CASE("length-aware target of the uniform {a, EOS} base at alpha 2") {
  const auto la = exact_la_target(uniform_ab(), kQ, alpha_spec(2.0));
  CHECK(la.z_prime() == doctest::Approx(0.5).epsilon(1e-13));
  CHECK(std::abs(la.log_z_prime - std::log(0.5)) < 1e-13);
  CHECK(la.dist.probs[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(la.dist.probs[1] == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(la.dist.probs[2] == doctest::Approx(0.25).epsilon(1e-12));

  const Policy random = random_policy(Vocab::make(3, 0), 4, 1, 5);
  const auto one = exact_la_target(random, kQ, alpha_spec(1.0));
  CHECK(std::abs(one.log_z_prime) < 1e-12);
  CHECK(tv(one.dist, policy_dist(random, kQ)) < 1e-12);
}

TEST_CASE("constant-rate bases are length-aware fixed points") {
  for (int m : {1, 2, 3})
    for (int L : {1, 3, 5})
      for (double alpha : {0.5, 2.0, 4.0}) {
        const double c = -std::log(static_cast<double>(m));
        const Policy base = constant_rate_policy(Vocab::make(3, 0), L, 1, c);
        const auto la = exact_la_target(base, kQ, alpha_spec(alpha));
        CHECK(tv(la.dist, policy_dist(base, kQ)) < 1e-10);
        CHECK(std::abs(la.log_z_prime - (alpha - 1.0) * c) < 1e-10);
      }
}

TEST_CASE("length-aware fixed point equation on random bases") {
  std::mt19937_64 rng(101);
  int checked = 0;
  for (int i = 0; i < 100; ++i) {
    const int k = 1 + i % 2;
    const int L = 1 + i % 5;
    const double alpha = std::array{0.5, 2.0, 4.0}[i % 3];
    const Policy base = random_policy(Vocab::make(k + 1, 0), L, 1, rng(), PolicyFamily::Tabular, 1.5);
    const TargetSpec spec = alpha_spec(alpha);
    const auto la = exact_la_target(base, kQ, spec);
    double total = 0.0;
    for (std::size_t j = 0; j < la.dist.size(); ++j) {
      const auto& y = la.dist.at(j);
      const double residual = std::log(la.dist.probs[j]) - log_density_unnorm(base, kQ, y, spec) +
                              static_cast<double>(y.length()) * la.log_z_prime;
      CHECK(std::abs(residual) < 1e-9);
      total += la.dist.probs[j];
      ++checked;
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  }
  CHECK(checked > 100);
}

TEST_CASE("policy_dist") {
  Policy certain(Vocab::make(2, 0), 3, 1);
  certain.set_logits(certain.key_for(kQ, {}), logits_from_probs(std::vector<double>{1.0, 0.0}));
  const auto dirac = policy_dist(certain, kQ);
  CHECK(dirac.probs[0] == 1.0);
  for (std::size_t i = 1; i < dirac.size(); ++i) CHECK(dirac.probs[i] == 0.0);

  const auto d = policy_dist(uniform_ab(), kQ);
  CHECK(d.probs == std::vector<double>{0.5, 0.25, 0.25});

  std::mt19937_64 rng(2);
  for (int i = 0; i < 20; ++i) {
    const auto r = policy_dist(random_policy(Vocab::make(3, 0), 4, 1, rng(), PolicyFamily::Tabular, 3.0), kQ);
    double s = 0.0;
    for (double p : r.probs) s += p;
    CHECK(std::abs(s - 1.0) < 1e-10);
  }
}

TEST_CASE("kl and tv") {
  const auto u = make_universe(Vocab::make(2, 0), 1);
  REQUIRE(u->size() == 2);
  const auto p = on_support(u, {0.5, 0.5});
  const auto r = on_support(u, {0.75, 0.25});
  CHECK(kl(p, p) == 0.0);
  CHECK(tv(p, p) == 0.0);
  CHECK(tv(on_support(u, {1.0, 0.0}), on_support(u, {0.0, 1.0})) == 1.0);
  CHECK(kl(p, r) == doctest::Approx(0.5 * std::log(2.0 / 3.0) + 0.5 * std::log(2.0)).epsilon(1e-14));
  CHECK(kl(p, r) == doctest::Approx(0.143841).epsilon(1e-6));
  CHECK(std::isinf(kl(p, on_support(u, {1.0, 0.0}))));
}

TEST_CASE("Gibbs and Pinsker on random pairs") {
  std::mt19937_64 rng(77);
  const auto u = make_universe(Vocab::make(3, 0), 3);
  for (int i = 0; i < 200; ++i) {
    const auto p = on_support(u, random_simplex(rng, u->size()));
    const auto r = on_support(u, random_simplex(rng, u->size()));
    const double k = kl(p, r), t = tv(p, r);
    CHECK(k >= 0.0);
    CHECK(t * t <= k / 2.0 + 1e-15);
    CHECK(std::abs(kl(p, p)) < 1e-12);
  }
}

TEST_CASE("expected TB gradient equals twice the KL gradient") {
  std::mt19937_64 rng(13);
  for (int i = 0; i < 50; ++i) {
    const Vocab v = Vocab::make(2 + i % 2, 0);
    const int L = 1 + i % 4;
    const Policy base = random_policy(v, L, 1, rng());
    const Policy pi = random_policy(v, L, 1, rng(), PolicyFamily::Tabular, 2.0);
    const TargetSpec spec = alpha_spec(0.3 + 0.1 * (i % 40));
    const auto target = exact_target_dist(base, kQ, spec);

    // Independent route: sum_y pi log(pi / p_alpha) grad log pi, built here.
    ParamGradient reference;
    const auto pd = policy_dist(pi, kQ, target.support);
    for (std::size_t j = 0; j < target.size(); ++j)
      reference.add_scaled(pi.grad_log_prob(kQ, target.at(j)),
                           2.0 * pd.probs[j] * std::log(pd.probs[j] / target.probs[j]));
    CHECK(expected_tb_gradient(pi, base, kQ, spec).max_abs_diff(reference) < 1e-8);
  }
}

TEST_CASE("expected TB gradient vanishes at the target and ignores energy shifts") {
  const Policy base = random_policy(Vocab::make(3, 0), 3, 1, 21);
  const TargetSpec spec = alpha_spec(2.5);
  const Policy matched = policy_from_dist(base, kQ, exact_target_dist(base, kQ, spec));
  CHECK(tv(policy_dist(matched, kQ), exact_target_dist(base, kQ, spec)) < 1e-12);
  CHECK(expected_tb_gradient(matched, base, kQ, spec).max_abs() < 1e-10);

  // With the marker masked out of both policies, the flat penalty adds
  // alpha * psi to the energy of every trajectory pi can emit.
  const auto mask_marker = [](Policy p) {
    const LogitTable table = p.explicit_logits();
    for (auto [key, logits] : table) {
      logits[3] = kMaskedLogit;
      p.set_logits(key, logits);
    }
    return p;
  };
  const Policy masked = mask_marker(random_policy(Vocab::make(4, 0, 3), 3, 1, 23));
  TargetSpec shifted = spec;
  shifted.marker_required = true;
  shifted.penalty_scaling = PenaltyScaling::Flat;
  shifted.psi_value = -0.7;
  const Policy pi = mask_marker(random_policy(Vocab::make(4, 0, 3), 3, 1, 24));
  CHECK(expected_tb_gradient(pi, masked, kQ, spec)
            .max_abs_diff(expected_tb_gradient(pi, masked, kQ, shifted)) < 1e-12);
}

TEST_CASE("finite differences") {
  Policy p = random_policy(Vocab::make(3, 0), 3, 1, 44);
  p.materialize(kQ);
  const auto constant = finite_diff([](const Policy&) { return 3.0; }, p);
  CHECK(constant.max_abs() < 1e-9);

  const Policy base = random_policy(Vocab::make(3, 0), 3, 1, 45);
  const auto y = make_trajectory({1, 2, 0}, p.vocab(), 3);
  const double log_z = -0.4, alpha = 2.0;
  auto la_loss = [&](const Policy& x) {
    return loss_la_tb(log_z, x.log_prob(kQ, y), alpha * base.log_prob(kQ, y), y.length());
  };
  SampleTerms s;
  s.log_z = log_z;
  s.log_pi = p.log_prob(kQ, y);
  s.log_pbase = base.log_prob(kQ, y);
  s.log_ptilde = alpha * s.log_pbase;
  s.length = y.length();
  const auto analytic = grad_loss(LossKind::LATB, LossParams{alpha, 1.0, {}}, s, p, kQ, y);
  const auto numeric = finite_diff(la_loss, p);
  const double scale = std::max({analytic.policy.max_abs(), numeric.max_abs(), 1e-2});
  CHECK(analytic.policy.max_abs_diff(numeric) / scale < 1e-6);
}

TEST_CASE("dist_stats") {
  Policy certain(Vocab::make(2, 0), 3, 1);
  certain.set_logits(certain.key_for(kQ, {}), logits_from_probs(std::vector<double>{1.0, 0.0}));
  const auto s0 = dist_stats(policy_dist(certain, kQ));
  CHECK(s0.mean_length == 1.0);
  CHECK(s0.entropy == 0.0);

  const Policy ab = uniform_ab();
  CHECK(dist_stats(policy_dist(ab, kQ)).mean_length == doctest::Approx(1.5).epsilon(1e-15));
  CHECK(dist_stats(exact_target_dist(ab, kQ, alpha_spec(2.0))).mean_length ==
        doctest::Approx(4.0 / 3.0).epsilon(1e-14));
  CHECK(dist_stats(exact_la_target(ab, kQ, alpha_spec(2.0)).dist).mean_length ==
        doctest::Approx(1.5).epsilon(1e-12));
}

TEST_CASE("csv export") {
  std::ostringstream out;
  write_csv(policy_dist(uniform_ab(), kQ), out);
  const std::string text = out.str();
  CHECK(text.rfind("tokens,length,probability\n", 0) == 0);
  CHECK(text.find("1 0,2,0.25") != std::string::npos);
}

TEST_CASE("mismatched supports are rejected") {
  const auto a = policy_dist(uniform_ab(), kQ);
  const auto b = policy_dist(Policy(Vocab::make(3, 0), 2, 1), kQ);
  CHECK_THROWS_AS(tv(a, b), InvalidArgument);
}
