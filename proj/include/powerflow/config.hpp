#pragma once

// Experiment configuration: flat key = value pairs under [section] headers.
//
//   [experiment] out_dir
//   [vocab]      size, eos_id, marker_id (optional), max_len
//   [base]       generator, queries, family, logit_scale, policy_file
//   [target]     alpha, psi_value, marker_required, length_aware, penalty_scaling
//   [train]      steps, batch_queries, samples_per_query, lr, logz_lr, optimizer,
//                adam_beta1, adam_beta2, adam_eps, temperature, eps_low, eps_high,
//                refresh_every, seed, loss, beta, tb_token_form, logz_noise,
//                metrics_every
//   [compare]    losses (comma separated loss kinds)
//   [mvsim]      pi0, n_votes, beta, iterations, mode, mc_samples, mc_seed,
//                reward
//   [gradcheck]  instances, seed, h, tolerance
//
// Generators: uniform | constant-rate(c) | two-mode(short_p, long_p, long_len)
//             | random(seed) | mismatch | file (reads policy_file).

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "powerflow/error.hpp"
#include "powerflow/mvsim.hpp"
#include "powerflow/trainer.hpp"

namespace powerflow {

class ConfigError : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

struct BaseSpec {
  std::string generator = "uniform";
  std::size_t queries = 4;
  PolicyFamily family = PolicyFamily::Tabular;
  double logit_scale = 1.0;
  std::string policy_file;

  bool operator==(const BaseSpec&) const = default;
};

struct GradcheckConfig {
  int instances = 50;
  std::uint64_t seed = 0;
  double h = 1e-5;
  double tolerance = 1e-6;

  bool operator==(const GradcheckConfig&) const = default;
};

struct ExperimentConfig {
  std::filesystem::path out_dir = "out";
  Vocab vocab{3, 0, std::nullopt};
  int max_len = 4;
  BaseSpec base;
  TrainConfig train;
  std::vector<LossKind> compare_losses;
  VoteConfig vote;
  VotePopulation pi0;
  GradcheckConfig gradcheck;

  bool operator==(const ExperimentConfig&) const = default;
};

ExperimentConfig parse_config(std::istream& in);
ExperimentConfig load_config(const std::filesystem::path& path);
std::string serialize_config(const ExperimentConfig& config);

// Checks that the fields `subcommand` needs are present and consistent.
void validate_for(const ExperimentConfig& config, std::string_view subcommand);

// Materializes the configured base policy (two-mode and mismatch bring their
// own vocabulary and max_len).
Policy build_base(const ExperimentConfig& config);

}  // namespace powerflow
