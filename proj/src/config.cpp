#include "powerflow/config.hpp"

#include <fmt/format.h>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "powerflow/generators.hpp"

namespace powerflow {

namespace pt = boost::property_tree;

namespace {

const std::map<std::string, std::set<std::string>>& known_keys() {
  static const std::map<std::string, std::set<std::string>> keys{
      {"experiment", {"out_dir"}},
      {"vocab", {"size", "eos_id", "marker_id", "max_len"}},
      {"base", {"generator", "queries", "family", "logit_scale", "policy_file"}},
      {"target", {"alpha", "psi_value", "marker_required", "length_aware", "penalty_scaling"}},
      {"train",
       {"steps", "batch_queries", "samples_per_query", "lr", "logz_lr", "optimizer", "adam_beta1",
        "adam_beta2", "adam_eps", "temperature", "eps_low", "eps_high", "refresh_every", "seed",
        "loss", "beta", "tb_token_form", "logz_noise", "metrics_every"}},
      {"compare", {"losses"}},
      {"mvsim", {"pi0", "n_votes", "beta", "iterations", "mode", "mc_samples", "mc_seed", "reward"}},
      {"gradcheck", {"instances", "seed", "h", "tolerance"}},
  };
  return keys;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(std::string_view s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto comma = s.find(',', start);
    const auto piece = trim(s.substr(start, comma == std::string_view::npos ? s.size() - start
                                                                             : comma - start));
    if (!piece.empty()) out.push_back(piece);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

double to_double(const std::string& s, std::string_view where) {
  std::size_t used = 0;
  try {
    const double v = std::stod(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw ConfigError(fmt::format("{}: expected a number, got '{}'", where, s));
}

long long to_int(const std::string& s, std::string_view where) {
  long long v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size())
    throw ConfigError(fmt::format("{}: expected an integer, got '{}'", where, s));
  return v;
}

bool to_bool(const std::string& s, std::string_view where) {
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw ConfigError(fmt::format("{}: expected a boolean, got '{}'", where, s));
}

std::string fmt_double(double v) { return fmt::format("{:.17g}", v); }

class Reader {
 public:
  explicit Reader(const pt::ptree& tree) : tree_(tree) {}

  std::optional<std::string> raw(const std::string& section, const std::string& key) const {
    const auto sec = tree_.get_child_optional(section);
    if (!sec) return std::nullopt;
    const auto v = sec->get_optional<std::string>(pt::ptree::path_type(key, '\0'));
    if (!v) return std::nullopt;
    return trim(*v);
  }

  template <typename T, typename Parse>
  void read(const std::string& section, const std::string& key, T& dst, Parse parse) const {
    if (auto v = raw(section, key)) dst = parse(*v, section + "." + key);
  }

  void number(const std::string& s, const std::string& k, double& dst) const {
    read(s, k, dst, to_double);
  }
  template <typename Int>
  void integer(const std::string& s, const std::string& k, Int& dst) const {
    read(s, k, dst, [](const std::string& v, std::string_view w) { return static_cast<Int>(to_int(v, w)); });
  }
  void boolean(const std::string& s, const std::string& k, bool& dst) const {
    read(s, k, dst, to_bool);
  }
  template <typename T, typename F>
  void named(const std::string& s, const std::string& k, T& dst, F parse) const {
    if (auto v = raw(s, k)) {
      try {
        dst = parse(*v);
      } catch (const InvalidArgument& e) {
        throw ConfigError(fmt::format("{}.{}: {}", s, k, e.what()));
      }
    }
  }

 private:
  const pt::ptree& tree_;
};

void check_known(const pt::ptree& tree) {
  for (const auto& [section, body] : tree) {
    const auto it = known_keys().find(section);
    if (it == known_keys().end()) {
      if (body.empty()) throw ConfigError(fmt::format("key '{}' outside any section", section));
      throw ConfigError(fmt::format("unknown section [{}]", section));
    }
    for (const auto& [key, value] : body)
      if (!it->second.contains(key)) throw ConfigError(fmt::format("unknown key {}.{}", section, key));
  }
}

// name(arg, arg, ...) -> {name, args}
std::pair<std::string, std::vector<std::string>> split_call(std::string_view spec) {
  const auto open = spec.find('(');
  if (open == std::string_view::npos) return {trim(spec), {}};
  if (spec.back() != ')') throw ConfigError(fmt::format("malformed generator '{}'", spec));
  return {trim(spec.substr(0, open)), split_list(spec.substr(open + 1, spec.size() - open - 2))};
}

}  // namespace

ExperimentConfig parse_config(std::istream& in) {
  pt::ptree tree;
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(fmt::format("config parse error: {}", e.what()));
  }
  check_known(tree);
  const Reader r(tree);
  ExperimentConfig c;

  if (auto v = r.raw("experiment", "out_dir")) c.out_dir = *v;

  r.integer("vocab", "size", c.vocab.size);
  r.integer("vocab", "eos_id", c.vocab.eos_id);
  if (auto v = r.raw("vocab", "marker_id")) {
    if (*v == "none" || v->empty())
      c.vocab.marker_id.reset();
    else
      c.vocab.marker_id = static_cast<Token>(to_int(*v, "vocab.marker_id"));
  }
  r.integer("vocab", "max_len", c.max_len);

  if (auto v = r.raw("base", "generator")) c.base.generator = *v;
  r.integer("base", "queries", c.base.queries);
  r.named("base", "family", c.base.family, parse_policy_family);
  r.number("base", "logit_scale", c.base.logit_scale);
  if (auto v = r.raw("base", "policy_file")) c.base.policy_file = *v;

  auto& t = c.train;
  r.number("target", "alpha", t.target.alpha);
  r.number("target", "psi_value", t.target.psi_value);
  r.boolean("target", "marker_required", t.target.marker_required);
  r.boolean("target", "length_aware", t.target.length_aware);
  r.named("target", "penalty_scaling", t.target.penalty_scaling, parse_penalty_scaling);

  r.integer("train", "steps", t.steps);
  r.integer("train", "batch_queries", t.batch_queries);
  r.integer("train", "samples_per_query", t.samples_per_query);
  r.number("train", "lr", t.lr);
  r.number("train", "logz_lr", t.logz_lr);
  r.named("train", "optimizer", t.optimizer.kind, parse_optimizer_kind);
  r.number("train", "adam_beta1", t.optimizer.beta1);
  r.number("train", "adam_beta2", t.optimizer.beta2);
  r.number("train", "adam_eps", t.optimizer.eps);
  if (auto v = r.raw("train", "temperature"); v && *v != "auto")
    t.temperature = to_double(*v, "train.temperature");
  r.number("train", "eps_low", t.clip.eps_low);
  r.number("train", "eps_high", t.clip.eps_high);
  r.integer("train", "refresh_every", t.refresh_every);
  r.integer("train", "seed", t.seed);
  r.named("train", "loss", t.loss, parse_loss_kind);
  r.number("train", "beta", t.beta);
  r.named("train", "tb_token_form", t.tb_token_form, parse_tb_token_form);
  r.number("train", "logz_noise", t.logz_noise);
  r.integer("train", "metrics_every", t.metrics_every);

  if (auto v = r.raw("compare", "losses"))
    for (const auto& name : split_list(*v)) {
      try {
        c.compare_losses.push_back(parse_loss_kind(name));
      } catch (const InvalidArgument& e) {
        throw ConfigError(fmt::format("compare.losses: {}", e.what()));
      }
    }

  if (auto v = r.raw("mvsim", "pi0"))
    for (const auto& p : split_list(*v)) c.pi0.probs.push_back(to_double(p, "mvsim.pi0"));
  r.integer("mvsim", "n_votes", c.vote.n_votes);
  r.number("mvsim", "beta", c.vote.beta);
  r.integer("mvsim", "iterations", c.vote.iterations);
  r.named("mvsim", "mode", c.vote.mode, [](std::string_view s) {
    if (s == "exact") return VoteMode::Exact;
    if (s == "monte_carlo") return VoteMode::MonteCarlo;
    throw InvalidArgument(fmt::format("unknown mode '{}'", s));
  });
  r.integer("mvsim", "mc_samples", c.vote.mc_samples);
  r.integer("mvsim", "mc_seed", c.vote.mc_seed);
  r.named("mvsim", "reward", c.vote.reading, parse_reward_reading);

  r.integer("gradcheck", "instances", c.gradcheck.instances);
  r.integer("gradcheck", "seed", c.gradcheck.seed);
  r.number("gradcheck", "h", c.gradcheck.h);
  r.number("gradcheck", "tolerance", c.gradcheck.tolerance);
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot read config file '{}'", path.string()));
  return parse_config(in);
}

std::string serialize_config(const ExperimentConfig& c) {
  pt::ptree tree;
  auto put = [&](const std::string& section, const std::string& key, const std::string& value) {
    tree.put(pt::ptree::path_type(section + '\x01' + key, '\x01'), value);
  };
  auto b = [](bool v) { return std::string(v ? "true" : "false"); };
  put("experiment", "out_dir", c.out_dir.string());
  put("vocab", "size", std::to_string(c.vocab.size));
  put("vocab", "eos_id", std::to_string(c.vocab.eos_id));
  put("vocab", "marker_id", c.vocab.marker_id ? std::to_string(*c.vocab.marker_id) : "none");
  put("vocab", "max_len", std::to_string(c.max_len));
  put("base", "generator", c.base.generator);
  put("base", "queries", std::to_string(c.base.queries));
  put("base", "family", to_string(c.base.family));
  put("base", "logit_scale", fmt_double(c.base.logit_scale));
  if (!c.base.policy_file.empty()) put("base", "policy_file", c.base.policy_file);
  const auto& t = c.train;
  put("target", "alpha", fmt_double(t.target.alpha));
  put("target", "psi_value", fmt_double(t.target.psi_value));
  put("target", "marker_required", b(t.target.marker_required));
  put("target", "length_aware", b(t.target.length_aware));
  put("target", "penalty_scaling", std::string(to_string(t.target.penalty_scaling)));
  put("train", "steps", std::to_string(t.steps));
  put("train", "batch_queries", std::to_string(t.batch_queries));
  put("train", "samples_per_query", std::to_string(t.samples_per_query));
  put("train", "lr", fmt_double(t.lr));
  put("train", "logz_lr", fmt_double(t.logz_lr));
  put("train", "optimizer", std::string(to_string(t.optimizer.kind)));
  put("train", "adam_beta1", fmt_double(t.optimizer.beta1));
  put("train", "adam_beta2", fmt_double(t.optimizer.beta2));
  put("train", "adam_eps", fmt_double(t.optimizer.eps));
  put("train", "temperature", t.temperature ? fmt_double(*t.temperature) : "auto");
  put("train", "eps_low", fmt_double(t.clip.eps_low));
  put("train", "eps_high", fmt_double(t.clip.eps_high));
  put("train", "refresh_every", std::to_string(t.refresh_every));
  put("train", "seed", std::to_string(t.seed));
  put("train", "loss", std::string(to_string(t.loss)));
  put("train", "beta", fmt_double(t.beta));
  put("train", "tb_token_form", std::string(to_string(t.tb_token_form)));
  put("train", "logz_noise", fmt_double(t.logz_noise));
  put("train", "metrics_every", std::to_string(t.metrics_every));
  if (!c.compare_losses.empty()) {
    std::string losses;
    for (auto k : c.compare_losses) losses += (losses.empty() ? "" : ", ") + std::string(to_string(k));
    put("compare", "losses", losses);
  }
  if (!c.pi0.probs.empty()) {
    std::string pi;
    for (double p : c.pi0.probs) pi += (pi.empty() ? "" : ", ") + fmt_double(p);
    put("mvsim", "pi0", pi);
  }
  put("mvsim", "n_votes", std::to_string(c.vote.n_votes));
  put("mvsim", "beta", fmt_double(c.vote.beta));
  put("mvsim", "iterations", std::to_string(c.vote.iterations));
  put("mvsim", "mode", c.vote.mode == VoteMode::Exact ? "exact" : "monte_carlo");
  put("mvsim", "mc_samples", std::to_string(c.vote.mc_samples));
  put("mvsim", "mc_seed", std::to_string(c.vote.mc_seed));
  put("mvsim", "reward", std::string(to_string(c.vote.reading)));
  put("gradcheck", "instances", std::to_string(c.gradcheck.instances));
  put("gradcheck", "seed", std::to_string(c.gradcheck.seed));
  put("gradcheck", "h", fmt_double(c.gradcheck.h));
  put("gradcheck", "tolerance", fmt_double(c.gradcheck.tolerance));
  std::ostringstream out;
  pt::write_ini(out, tree);
  return out.str();
}

void validate_for(const ExperimentConfig& c, std::string_view subcommand) {
  auto wrap = [&](auto&& check) {
    try {
      check();
    } catch (const ConfigError&) {
      throw;
    } catch (const InvalidArgument& e) {
      throw ConfigError(e.what());
    }
  };
  if (subcommand == "train" || subcommand == "compare" || subcommand == "oracle") {
    wrap([&] {
      c.vocab.validate();
      if (c.max_len < 1) throw ConfigError("vocab.max_len must be >= 1");
      if (c.base.queries < 1) throw ConfigError("base.queries must be >= 1");
      c.train.validate();
    });
    if (subcommand == "compare" && c.compare_losses.empty())
      throw ConfigError("compare needs [compare] losses");
    return;
  }
  if (subcommand == "mvsim") {
    if (c.pi0.probs.empty()) throw ConfigError("mvsim needs [mvsim] pi0");
    wrap([&] {
      c.pi0.validate();
      c.pi0.unique_mode();
      c.vote.validate(c.pi0.probs.size());
    });
    return;
  }
  if (subcommand == "gradcheck") {
    if (c.gradcheck.instances < 1) throw ConfigError("gradcheck.instances must be >= 1");
    if (!(c.gradcheck.h > 0.0)) throw ConfigError("gradcheck.h must be positive");
    return;
  }
  throw ConfigError(fmt::format("unknown subcommand '{}'", subcommand));
}

Policy build_base(const ExperimentConfig& c) {
  const auto [name, args] = split_call(c.base.generator);
  auto arg = [&, &name = name, &args = args](std::size_t i) {
    if (i >= args.size()) throw ConfigError(fmt::format("generator {} is missing arguments", name));
    return args[i];
  };
  auto expect_args = [&, &name = name, &args = args](std::size_t n) {
    if (args.size() != n)
      throw ConfigError(fmt::format("generator {} takes {} arguments, got {}", name, n, args.size()));
  };
  try {
    if (name == "uniform") {
      expect_args(0);
      return uniform_policy(c.vocab, c.max_len, c.base.queries, c.base.family);
    }
    if (name == "constant-rate") {
      expect_args(1);
      return constant_rate_policy(c.vocab, c.max_len, c.base.queries,
                                  to_double(arg(0), "constant-rate"));
    }
    if (name == "random") {
      expect_args(1);
      return random_policy(c.vocab, c.max_len, c.base.queries,
                           static_cast<std::uint64_t>(to_int(arg(0), "random")), c.base.family,
                           c.base.logit_scale);
    }
    if (name == "two-mode") {
      expect_args(3);
      return two_mode_policy(to_double(arg(0), "two-mode"), to_double(arg(1), "two-mode"),
                             static_cast<int>(to_int(arg(2), "two-mode")), c.base.queries);
    }
    if (name == "mismatch") {
      expect_args(0);
      return mismatch_policy(c.base.queries);
    }
    if (name == "file") {
      expect_args(0);
      std::ifstream in(c.base.policy_file);
      if (!in) throw ConfigError(fmt::format("cannot read policy file '{}'", c.base.policy_file));
      std::stringstream buf;
      buf << in.rdbuf();
      return parse_policy(buf.str());
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const InvalidArgument& e) {
    throw ConfigError(fmt::format("base.generator: {}", e.what()));
  }
  throw ConfigError(fmt::format("unknown base generator '{}'", c.base.generator));
}

}  // namespace powerflow
