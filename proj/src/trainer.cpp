#include "powerflow/trainer.hpp"

#include <fmt/format.h>
#include <fmt/ostream.h>

#include <cmath>
#include <nlohmann/json.hpp>
#include <ostream>
#include <set>

#include "powerflow/error.hpp"

namespace powerflow {

std::string_view to_string(OptimizerKind kind) {
  return kind == OptimizerKind::Sgd ? "sgd" : "adam";
}

OptimizerKind parse_optimizer_kind(std::string_view name) {
  if (name == "sgd") return OptimizerKind::Sgd;
  if (name == "adam") return OptimizerKind::AdaptiveMoment;
  throw InvalidArgument(fmt::format("unknown optimizer '{}'", name));
}

double TrainConfig::effective_temperature() const {
  if (temperature) return *temperature;
  return target.alpha < 1.0 ? 0.7 : 1.0;
}

void TrainConfig::validate() const {
  auto positive = [](auto v, std::string_view name) {
    if (!(v > 0)) throw InvalidArgument(fmt::format("{} must be positive, got {}", name, v));
  };
  positive(steps, "steps");
  positive(batch_queries, "batch_queries");
  positive(samples_per_query, "samples_per_query");
  positive(lr, "lr");
  positive(logz_lr, "logz_lr");
  positive(effective_temperature(), "temperature");
  positive(refresh_every, "refresh_every");
  positive(beta, "beta");
  positive(metrics_every, "metrics_every");
  if (!(logz_noise >= 0.0)) throw InvalidArgument("logz_noise must be non-negative");
  clip.validate();
  target.validate();
}

void optimizer_step(std::span<double> params, std::span<const double> grads, Moments& state,
                    long t, double lr, const OptimizerSpec& spec) {
  if (params.size() != grads.size()) throw InvalidArgument("parameter/gradient size mismatch");
  for (double g : grads)
    if (!std::isfinite(g)) throw DivergenceError("non-finite gradient entry");
  if (spec.kind == OptimizerKind::Sgd) {
    for (std::size_t i = 0; i < params.size(); ++i) params[i] -= lr * grads[i];
    return;
  }
  if (t < 1) throw InvalidArgument("adaptive-moment step index starts at 1");
  state.m.resize(params.size(), 0.0);
  state.v.resize(params.size(), 0.0);
  const double c1 = 1.0 - std::pow(spec.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(spec.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = spec.beta1 * state.m[i] + (1.0 - spec.beta1) * grads[i];
    state.v[i] = spec.beta2 * state.v[i] + (1.0 - spec.beta2) * grads[i] * grads[i];
    const double m_hat = state.m[i] / c1;
    const double v_hat = state.v[i] / c2;
    params[i] -= lr * m_hat / (std::sqrt(v_hat) + spec.eps);
  }
}

void Optimizer::step(Policy& policy, const ParamGradient& grad, double lr, LogZTable& logz,
                     const std::map<LogZKey, double>& d_logz, double logz_lr) {
  ++t_;
  if (spec_.kind == OptimizerKind::Sgd) {
    Moments unused;
    for (const auto& [key, g] : grad.entries)
      optimizer_step(policy.mutable_logits(key), g, unused, t_, lr, spec_);
    for (const auto& [key, g] : d_logz) {
      double& p = logz.at(key);
      optimizer_step({&p, 1}, {&g, 1}, unused, t_, logz_lr, spec_);
    }
    return;
  }
  // Adaptive moments: every parameter with state keeps stepping, absent
  // gradients count as zero.
  std::set<LogitKey> keys;
  for (const auto& [key, g] : grad.entries) keys.insert(key);
  for (const auto& [key, s] : policy_state_) keys.insert(key);
  const std::vector<double> zeros(policy.vocab().size, 0.0);
  for (const auto& key : keys) {
    auto it = grad.entries.find(key);
    const std::vector<double>& g = it == grad.entries.end() ? zeros : it->second;
    optimizer_step(policy.mutable_logits(key), g, policy_state_[key], t_, lr, spec_);
  }
  std::set<LogZKey> zkeys;
  for (const auto& [key, g] : d_logz) zkeys.insert(key);
  for (const auto& [key, s] : logz_state_) zkeys.insert(key);
  for (const auto& key : zkeys) {
    auto it = d_logz.find(key);
    const double g = it == d_logz.end() ? 0.0 : it->second;
    double& p = logz.at(key);
    optimizer_step({&p, 1}, {&g, 1}, logz_state_[key], t_, logz_lr, spec_);
  }
}

FiniteDist oracle_target(LossKind kind, const Policy& base, QueryId q, const TargetSpec& spec) {
  if (kind == LossKind::TBTraj || kind == LossKind::RLTraj)
    return exact_target_dist(base, q, spec);
  return exact_la_target(base, q, spec).dist;
}

namespace {

LogZKey logz_key(const TrainConfig& config, QueryId q, std::size_t len) {
  if (config.loss == LossKind::TBToken && config.tb_token_form == TbTokenForm::PerLengthZ)
    return {q.value, len};
  return {q.value, 0};
}

void check_finite(const Policy& policy, const LogZTable& logz) {
  for (const auto& [key, logits] : policy.explicit_logits())
    for (double v : logits)
      if (!std::isfinite(v))
        throw DivergenceError(fmt::format("non-finite logit at query {} context {}", key.query,
                                          to_string(key.context)));
  for (const auto& [key, v] : logz.values)
    if (!std::isfinite(v)) throw DivergenceError(fmt::format("non-finite log Z for query {}", key.query));
}

// Token-level mean reference log-probability and mean length over a batch
// drawn from the base policy.
struct RefStats {
  double mean_token_logprob = 0.0;
  double mean_length = 0.0;
};

RefStats reference_stats(const Policy& base, QueryId q, int samples, double temperature, Rng& rng) {
  double lp = 0.0, tokens = 0.0;
  for (int i = 0; i < samples; ++i) {
    const auto y = base.sample(q, rng, temperature);
    lp += base.log_prob(q, y);
    tokens += static_cast<double>(y.length());
  }
  return {lp / tokens, tokens / samples};
}

void init_log_partition(const TrainConfig& config, const Policy& base,
                        std::span<const QueryId> queries, Rng& rng, LogZTable& logz) {
  if (is_rl(config.loss)) return;
  std::uniform_real_distribution<double> noise(-config.logz_noise, config.logz_noise);
  const double alpha = config.target.alpha;
  for (const QueryId q : queries) {
    const auto ref = reference_stats(base, q, config.samples_per_query,
                                     config.effective_temperature(), rng);
    const double eps = config.logz_noise > 0.0 ? noise(rng) : 0.0;
    switch (config.loss) {
      case LossKind::LATB:
      case LossKind::PowerFlow:
        logz.at({q.value, 0}) = init_logz(ref.mean_token_logprob, alpha, eps);
        break;
      case LossKind::TBTraj:
        // Trajectory-level normalizer: the per-token estimate times |y|.
        logz.at({q.value, 0}) = init_logz(ref.mean_token_logprob, alpha, 0.0) * ref.mean_length + eps;
        break;
      case LossKind::TBToken:
        if (config.tb_token_form == TbTokenForm::PerLengthZ) {
          for (int len = 1; len <= base.max_len(); ++len)
            logz.at({q.value, static_cast<std::size_t>(len)}) =
                ref.mean_token_logprob * (alpha - len) + eps;
        } else {
          logz.at({q.value, 0}) = ref.mean_token_logprob * (alpha - ref.mean_length) + eps;
        }
        break;
      default: break;
    }
  }
}

}  // namespace

TrainResult train(const TrainConfig& config, const Policy& base, std::span<const QueryId> queries,
                  const TrainHooks& hooks) {
  config.validate();
  if (queries.empty()) throw InvalidArgument("train needs at least one query");
  for (const QueryId q : queries)
    if (q.value >= base.num_queries())
      throw InvalidArgument(fmt::format("unknown query id {}", q.value));

  Rng rng(config.seed);
  const double temperature = config.effective_temperature();
  const LossParams params{config.target.alpha, config.beta, config.clip};
  const auto universe = universe_of(base);

  std::vector<FiniteDist> targets;
  for (const QueryId q : queries) targets.push_back(oracle_target(config.loss, base, q, config.target));

  TrainResult result{base, {}, {}};
  Policy& policy = result.policy;
  LogZTable& logz = result.logz;
  init_log_partition(config, base, queries, rng, logz);

  Optimizer optimizer(config.optimizer);
  std::shared_ptr<const Policy> old_policy;
  const auto n_queries = queries.size();
  const auto batch = static_cast<std::size_t>(config.batch_queries);
  const double batch_scale = 1.0 / static_cast<double>(batch * config.samples_per_query);

  for (int step = 0; step < config.steps; ++step) {
    if (step % config.refresh_every == 0) old_policy = policy.clone_frozen();
    const Policy& behaviour = is_rl(config.loss) ? policy : *old_policy;

    ParamGradient grad;
    std::map<LogZKey, double> d_logz;
    double loss_sum = 0.0, len_sum = 0.0, base_tok_sum = 0.0;

    for (std::size_t b = 0; b < batch; ++b) {
      const QueryId q = queries[(static_cast<std::size_t>(step) * batch + b) % n_queries];
      std::vector<Trajectory> ys;
      std::vector<SampleTerms> terms;
      for (int i = 0; i < config.samples_per_query; ++i) {
        auto y = behaviour.sample(q, rng, temperature);
        SampleTerms s;
        s.length = y.length();
        s.log_pi = policy.log_prob(q, y);
        s.log_pi_old = old_policy->log_prob(q, y);
        s.log_pbase = base.log_prob(q, y);
        s.log_ptilde = log_density_unnorm(base, q, y, config.target);
        s.psi = per_token_penalty(y, base.vocab(), config.target);
        if (!is_rl(config.loss)) s.log_z = logz.at(logz_key(config, q, s.length));
        ys.push_back(std::move(y));
        terms.push_back(s);
      }
      if (is_rl(config.loss)) {
        double mean_a = 0.0;
        for (const auto& s : terms)
          mean_a += loss_rl_kl(config.loss, s.log_pi, s.log_pbase, s.length, config.beta, 0.0)
                        .coefficient;
        mean_a /= static_cast<double>(terms.size());
        for (auto& s : terms) s.baseline = mean_a;
      }
      for (std::size_t i = 0; i < ys.size(); ++i) {
        const auto g = grad_loss(config.loss, params, terms[i], policy, q, ys[i]);
        if (hooks.on_sample) hooks.on_sample(terms[i], g);
        grad.add_scaled(g.policy, batch_scale);
        if (!is_rl(config.loss)) d_logz[logz_key(config, q, terms[i].length)] += g.d_log_z * batch_scale;
        loss_sum += g.loss;
        len_sum += static_cast<double>(terms[i].length);
        base_tok_sum += terms[i].log_pbase / static_cast<double>(terms[i].length);
      }
    }

    const double n = static_cast<double>(batch * config.samples_per_query);
    const double mean_loss = loss_sum / n;
    if (!std::isfinite(mean_loss) || std::abs(mean_loss) > 1e6)
      throw DivergenceError(fmt::format("mean loss {} at step {}", mean_loss, step));

    if (step % config.metrics_every == 0 || step + 1 == config.steps) {
      StepMetrics m;
      m.step = step;
      m.mean_loss = mean_loss;
      m.mean_sampled_length = len_sum / n;
      m.mean_token_logprob_base = base_tok_sum / n;
      m.target_applicable = config.loss != LossKind::TBToken;
      for (std::size_t i = 0; i < n_queries; ++i) {
        const auto pd = policy_dist(policy, queries[i], universe);
        m.tv_to_target += tv(pd, targets[i]) / static_cast<double>(n_queries);
        m.kl_to_target += kl(pd, targets[i]) / static_cast<double>(n_queries);
      }
      if (!is_rl(config.loss)) m.logz_values = logz.per_query(base.num_queries());
      result.metrics.push_back(std::move(m));
    }

    if (hooks.on_step) hooks.on_step({step, policy, *old_policy, logz});
    optimizer.step(policy, grad, config.lr, logz, d_logz, config.logz_lr);
    check_finite(policy, logz);
  }
  return result;
}

std::vector<DynamicsRun> compare_dynamics(std::span<const NamedConfig> configs, const Policy& base,
                                          std::span<const QueryId> queries) {
  std::vector<DynamicsRun> runs;
  for (const auto& nc : configs) runs.push_back({nc.name, train(nc.config, base, queries)});
  return runs;
}

void write_metrics_jsonl(std::span<const StepMetrics> metrics, std::ostream& out,
                         std::string_view run) {
  for (const auto& m : metrics) {
    nlohmann::ordered_json j;
    if (!run.empty()) j["run"] = std::string(run);
    j["step"] = m.step;
    j["mean_loss"] = m.mean_loss;
    j["mean_sampled_length"] = m.mean_sampled_length;
    j["tv_to_target"] = m.tv_to_target;
    j["kl_to_target"] = m.kl_to_target;
    j["logz_values"] = m.logz_values;
    j["mean_token_logprob_base"] = m.mean_token_logprob_base;
    j["target_applicable"] = m.target_applicable;
    out << j.dump() << '\n';
  }
}

void write_summary_csv(std::span<const DynamicsRun> runs, std::ostream& out) {
  out << "run,steps,mean_loss,mean_sampled_length,tv_to_target,kl_to_target,"
         "mean_token_logprob_base,target_applicable\n";
  for (const auto& run : runs) {
    if (run.result.metrics.empty()) continue;
    const auto& m = run.result.metrics.back();
    fmt::print(out, "{},{},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{}\n", run.name, m.step + 1,
               m.mean_loss, m.mean_sampled_length, m.tv_to_target, m.kl_to_target,
               m.mean_token_logprob_base, m.target_applicable ? "true" : "false");
  }
}

}  // namespace powerflow
