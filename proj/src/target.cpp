#include "powerflow/target.hpp"

#include <fmt/format.h>

#include <cmath>

#include "powerflow/error.hpp"

namespace powerflow {

void TargetSpec::validate() const {
  if (!(alpha > 0.0) || !std::isfinite(alpha))
    throw InvalidArgument(fmt::format("alpha must be positive, got {}", alpha));
  if (!(psi_value <= 0.0))
    throw InvalidArgument(fmt::format("psi_value must be non-positive, got {}", psi_value));
}

double format_penalty(const Trajectory& y, const Vocab& vocab, const TargetSpec& spec) {
  if (!spec.marker_required) return 0.0;
  if (!vocab.marker_id) throw InvalidArgument("marker_required set but the vocab has no marker_id");
  const auto& t = y.tokens;
  auto last = t.rbegin();
  if (last != t.rend() && *last == vocab.eos_id) ++last;
  if (last != t.rend() && *last == *vocab.marker_id) return 0.0;
  return spec.psi_value;
}

double per_token_penalty(const Trajectory& y, const Vocab& vocab, const TargetSpec& spec) {
  const double psi = format_penalty(y, vocab, spec);
  if (spec.penalty_scaling == PenaltyScaling::PerToken) return psi;
  return psi / static_cast<double>(y.length());
}

double log_density_unnorm(const Policy& base, QueryId q, const Trajectory& y,
                          const TargetSpec& spec) {
  spec.validate();
  const double len = static_cast<double>(y.length());
  return spec.alpha * (base.log_prob(q, y) + len * per_token_penalty(y, base.vocab(), spec));
}

std::vector<double> alpha_power(std::span<const double> p, double alpha) {
  if (!(alpha > 0.0)) throw InvalidArgument(fmt::format("alpha must be positive, got {}", alpha));
  if (p.empty()) throw InvalidArgument("alpha_power of an empty vector");
  std::vector<double> logw(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] < 0.0 || !std::isfinite(p[i]))
      throw InvalidArgument("alpha_power needs finite non-negative probabilities");
    if (p[i] == 0.0 && alpha < 1.0)
      throw InvalidArgument("zero probability with alpha < 1 has infinite energy");
    logw[i] = alpha * std::log(p[i]);
  }
  const double lz = log_sum_exp(logw);
  std::vector<double> out(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) out[i] = std::exp(logw[i] - lz);
  return out;
}

std::shared_ptr<const Policy> temperature_scaled_policy(const Policy& base, double alpha) {
  if (!(alpha > 0.0)) throw InvalidArgument(fmt::format("alpha must be positive, got {}", alpha));
  Policy scaled = base;
  auto scale = [alpha](std::span<const double> l) {
    std::vector<double> out(l.begin(), l.end());
    for (double& v : out) v *= alpha;
    return out;
  };
  for (std::size_t q = 0; q < base.num_queries(); ++q)
    scaled.set_default_logits(QueryId{q}, scale(base.default_logits(QueryId{q})));
  for (const auto& [key, logits] : base.explicit_logits()) scaled.set_logits(key, scale(logits));
  return std::make_shared<const Policy>(std::move(scaled));
}

std::string_view to_string(PenaltyScaling scaling) {
  return scaling == PenaltyScaling::PerToken ? "per_token" : "flat";
}

PenaltyScaling parse_penalty_scaling(std::string_view name) {
  if (name == "per_token") return PenaltyScaling::PerToken;
  if (name == "flat") return PenaltyScaling::Flat;
  throw InvalidArgument(fmt::format("unknown penalty scaling '{}'", name));
}

}  // namespace powerflow
