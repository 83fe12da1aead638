#include "powerflow/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "powerflow/generators.hpp"
#include "powerflow/objectives.hpp"
#include "powerflow/oracle.hpp"
#include "powerflow/target.hpp"

namespace powerflow {

double relative_error(const ParamGradient& analytic, const ParamGradient& numeric, double floor) {
  const double diff = analytic.max_abs_diff(numeric);
  const double scale = std::max({analytic.max_abs(), numeric.max_abs(), floor});
  return diff / scale;
}

namespace {

SampleTerms terms_for(const Policy& policy, const Policy& old, const Policy& base, QueryId q,
                      const Trajectory& y, const TargetSpec& spec, double log_z, double baseline) {
  SampleTerms s;
  s.log_z = log_z;
  s.log_pi = policy.log_prob(q, y);
  s.log_pi_old = old.log_prob(q, y);
  s.log_pbase = base.log_prob(q, y);
  s.log_ptilde = log_density_unnorm(base, q, y, spec);
  s.psi = per_token_penalty(y, base.vocab(), spec);
  s.length = y.length();
  s.baseline = baseline;
  return s;
}

}  // namespace

GradcheckReport run_gradcheck(int instances, std::uint64_t seed, double h, double tolerance) {
  GradcheckReport report;
  Rng rng(seed);
  std::uniform_int_distribution<int> pick_k(1, 2), pick_len(2, 4);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int inst = 0; inst < instances; ++inst) {
    const int k = pick_k(rng);
    const int max_len = pick_len(rng);
    const Vocab vocab = Vocab::make(k + 1, 0, std::optional<Token>(k));
    const auto family = inst % 5 == 4 ? PolicyFamily::Bigram : PolicyFamily::Tabular;
    const QueryId q{0};
    Policy policy = random_policy(vocab, max_len, 1, rng(), family);
    const Policy base = random_policy(vocab, max_len, 1, rng());
    const Policy old = random_policy(vocab, max_len, 1, rng(), family, 0.3);
    TargetSpec spec;
    spec.alpha = 0.5 + 3.5 * unif(rng);
    spec.marker_required = inst % 2 == 0;
    const LossParams params{spec.alpha, 0.2 + 2.0 * unif(rng), ClipSpec{}};
    const double log_z = -2.0 + 4.0 * unif(rng);
    const double baseline = -1.0 + 2.0 * unif(rng);
    const Trajectory y = policy.sample(q, rng);

    auto record = [&](std::string name, double err) {
      report.entries.push_back({std::move(name), inst, err});
      report.max_rel_error = std::max(report.max_rel_error, err);
    };

    record("log_prob", relative_error(policy.grad_log_prob(q, y),
                                      finite_diff([&](const Policy& p) { return p.log_prob(q, y); },
                                                  policy, h)));

    const SampleTerms s0 = terms_for(policy, old, base, q, y, spec, log_z, baseline);
    for (LossKind kind : kAllLossKinds) {
      const auto analytic = grad_loss(kind, params, s0, policy, q, y);
      // Detached quantities stay at their values for the current parameters.
      const double w0 = analytic.weight;
      const double a0 = is_rl(kind) ? loss_rl_kl(kind, s0.log_pi, s0.log_pbase, s0.length,
                                                 params.beta, s0.baseline)
                                          .coefficient
                                    : 0.0;
      auto fn = [&](const Policy& p) {
        SampleTerms s = s0;
        s.log_pi = p.log_prob(q, y);
        if (is_rl(kind)) return -a0 * s.log_pi;
        if (kind == LossKind::PowerFlow) {
          s.log_pi_old = s.log_pi;  // w = 1 for the inner square
          return w0 * loss_value(kind, params, s);
        }
        return loss_value(kind, params, s);
      };
      record(std::string(to_string(kind)),
             relative_error(analytic.policy, finite_diff(fn, policy, h)));

      if (!is_rl(kind)) {
        auto fz = [&](double z) {
          SampleTerms s = s0;
          s.log_z = z;
          s.log_pi_old = s.log_pi;
          return (kind == LossKind::PowerFlow ? w0 : 1.0) * loss_value(kind, params, s);
        };
        const double numeric = (fz(log_z + h) - fz(log_z - h)) / (2.0 * h);
        const double err = std::abs(analytic.d_log_z - numeric) /
                           std::max({std::abs(analytic.d_log_z), std::abs(numeric), 1e-2});
        record(std::string(to_string(kind)) + "/log_z", err);
      }
    }
  }
  report.passed = report.max_rel_error < tolerance;
  return report;
}

}  // namespace powerflow
