#pragma once

// Batched on-policy (or clipped off-policy) training of a tabular policy and
// its log-partition table, with exact oracle metrics per step.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "powerflow/objectives.hpp"
#include "powerflow/oracle.hpp"

namespace powerflow {

enum class OptimizerKind { Sgd, AdaptiveMoment };

struct OptimizerSpec {
  OptimizerKind kind = OptimizerKind::AdaptiveMoment;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  bool operator==(const OptimizerSpec&) const = default;
};

std::string_view to_string(OptimizerKind kind);
OptimizerKind parse_optimizer_kind(std::string_view name);

struct TrainConfig {
  int steps = 2000;
  int batch_queries = 4;
  int samples_per_query = 16;
  double lr = 0.05;
  double logz_lr = 0.05;
  OptimizerSpec optimizer;
  // Unset: 1.0 for alpha >= 1 and 0.7 for alpha < 1.
  std::optional<double> temperature;
  ClipSpec clip;
  int refresh_every = 8;
  std::uint64_t seed = 0;
  LossKind loss = LossKind::LATB;
  TargetSpec target;
  double beta = 1.0 / 3.0;  // RL kinds
  TbTokenForm tb_token_form = TbTokenForm::SharedZ;
  double logz_noise = 0.01;  // half-width of the uniform init noise
  int metrics_every = 1;

  double effective_temperature() const;
  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

// Measured on the policy that drew the step's samples, before its update.
struct StepMetrics {
  int step = 0;
  double mean_loss = 0.0;
  double mean_sampled_length = 0.0;
  double tv_to_target = 0.0;
  double kl_to_target = 0.0;
  std::vector<double> logz_values;
  double mean_token_logprob_base = 0.0;
  // False for TB-token, whose divergences are reported against the LA target.
  bool target_applicable = true;
};

struct TrainResult {
  Policy policy;
  LogZTable logz;
  std::vector<StepMetrics> metrics;
};

struct StepView {
  int step;
  const Policy& policy;
  const Policy& old_policy;
  const LogZTable& logz;
};

struct TrainHooks {
  // Called once per step before the parameter update.
  std::function<void(const StepView&)> on_step;
  // Called for every sample's loss evaluation.
  std::function<void(const SampleTerms&, const LossGradient&)> on_sample;
};

struct Moments {
  std::vector<double> m;
  std::vector<double> v;
};

// p <- p - lr * g (Sgd) or the bias-corrected adaptive-moment update at step
// t >= 1. Throws DivergenceError on non-finite gradient entries.
void optimizer_step(std::span<double> params, std::span<const double> grads, Moments& state,
                    long t, double lr, const OptimizerSpec& spec);

class Optimizer {
 public:
  explicit Optimizer(OptimizerSpec spec) : spec_(spec) {}

  void step(Policy& policy, const ParamGradient& grad, double lr, LogZTable& logz,
            const std::map<LogZKey, double>& d_logz, double logz_lr);
  long steps_taken() const { return t_; }

 private:
  OptimizerSpec spec_;
  long t_ = 0;
  std::map<LogitKey, Moments> policy_state_;
  std::map<LogZKey, Moments> logz_state_;
};

// The oracle distribution a loss kind converges to: the alpha-power target
// for trajectory-level kinds, the length-normalized fixed point otherwise
// (TB-token is reported against the latter for reference).
FiniteDist oracle_target(LossKind kind, const Policy& base, QueryId q, const TargetSpec& spec);

TrainResult train(const TrainConfig& config, const Policy& base, std::span<const QueryId> queries,
                  const TrainHooks& hooks = {});

struct NamedConfig {
  std::string name;
  TrainConfig config;
};

struct DynamicsRun {
  std::string name;
  TrainResult result;
};

std::vector<DynamicsRun> compare_dynamics(std::span<const NamedConfig> configs, const Policy& base,
                                          std::span<const QueryId> queries);

// One JSON object per line with keys exactly the StepMetrics field names,
// preceded by "run" when `run` is non-empty.
void write_metrics_jsonl(std::span<const StepMetrics> metrics, std::ostream& out,
                         std::string_view run = {});
// Final-step summary, one row per run.
void write_summary_csv(std::span<const DynamicsRun> runs, std::ostream& out);

}  // namespace powerflow
