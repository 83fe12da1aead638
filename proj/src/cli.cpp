#include "powerflow/cli.hpp"

#include <fmt/format.h>
#include <fmt/ostream.h>

#include <CLI11.hpp>
#include <cstdlib>
#include <fstream>
#include <nlohmann/json.hpp>
#include <ostream>
#include <sstream>

#include "powerflow/chart.hpp"
#include "powerflow/config.hpp"
#include "powerflow/error.hpp"
#include "powerflow/gradcheck.hpp"

namespace powerflow {

namespace fs = std::filesystem;

namespace {

// Artifacts are assembled in memory and written only after the subcommand
// has finished, so a failing run leaves nothing behind.
struct Artifacts {
  std::vector<std::pair<std::string, std::string>> files;

  void add(std::string name, std::string body) { files.emplace_back(std::move(name), std::move(body)); }

  void write(const fs::path& dir) const {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw ConfigError(fmt::format("cannot create output directory '{}'", dir.string()));
    for (const auto& [name, body] : files) {
      std::ofstream f(dir / name, std::ios::binary);
      if (!(f << body)) throw ConfigError(fmt::format("cannot write '{}'", (dir / name).string()));
    }
  }
};

std::vector<QueryId> all_queries(const Policy& base) {
  std::vector<QueryId> qs;
  for (std::size_t i = 0; i < base.num_queries(); ++i) qs.push_back(QueryId{i});
  return qs;
}

std::vector<Series> metric_series(std::span<const StepMetrics> metrics, std::string_view prefix) {
  std::vector<Series> out(3);
  out[0].name = fmt::format("{}mean_sampled_length", prefix);
  out[1].name = fmt::format("{}tv_to_target", prefix);
  out[2].name = fmt::format("{}mean_loss", prefix);
  for (const auto& m : metrics) {
    out[0].values.push_back(m.mean_sampled_length);
    out[1].values.push_back(m.tv_to_target);
    out[2].values.push_back(m.mean_loss);
  }
  return out;
}

std::vector<double> steps_axis(std::span<const StepMetrics> metrics) {
  std::vector<double> x;
  for (const auto& m : metrics) x.push_back(m.step);
  return x;
}

void cmd_train(const ExperimentConfig& c, Artifacts& a, std::ostream& out) {
  const Policy base = build_base(c);
  const auto queries = all_queries(base);
  const auto result = train(c.train, base, queries);
  const DynamicsRun run{std::string(to_string(c.train.loss)), result};

  std::ostringstream jsonl, csv;
  write_metrics_jsonl(result.metrics, jsonl);
  write_summary_csv(std::span(&run, 1), csv);
  a.add("metrics.jsonl", jsonl.str());
  a.add("summary.csv", csv.str());
  a.add("policy.txt", serialize_policy(result.policy));
  const auto series = metric_series(result.metrics, "");
  a.add("chart.svg", render_svg(series, ChartSpec{fmt::format("train {}", run.name), "step",
                                                  "value", steps_axis(result.metrics)}));
  if (!result.metrics.empty()) {
    const auto& last = result.metrics.back();
    fmt::print(out, "{} steps={} mean_length={:.6f} tv={:.6f} kl={:.6f}\n", run.name,
               last.step + 1, last.mean_sampled_length, last.tv_to_target, last.kl_to_target);
  }
}

void cmd_compare(const ExperimentConfig& c, Artifacts& a, std::ostream& out) {
  const Policy base = build_base(c);
  const auto queries = all_queries(base);
  std::vector<NamedConfig> configs;
  for (auto kind : c.compare_losses) {
    TrainConfig t = c.train;
    t.loss = kind;
    configs.push_back({std::string(to_string(kind)), t});
  }
  const auto runs = compare_dynamics(configs, base, queries);

  std::ostringstream jsonl, csv;
  std::vector<Series> lengths;
  for (const auto& run : runs) {
    write_metrics_jsonl(run.result.metrics, jsonl, run.name);
    Series s{run.name, {}};
    for (const auto& m : run.result.metrics) s.values.push_back(m.mean_sampled_length);
    lengths.push_back(std::move(s));
  }
  write_summary_csv(runs, csv);
  a.add("metrics.jsonl", jsonl.str());
  a.add("summary.csv", csv.str());
  a.add("chart.svg",
        render_svg(lengths, ChartSpec{"mean sampled length", "step", "tokens",
                                      runs.empty() ? std::vector<double>{}
                                                   : steps_axis(runs.front().result.metrics)}));
  for (const auto& run : runs) {
    const auto& last = run.result.metrics.back();
    fmt::print(out, "{} mean_length={:.6f} tv={:.6f}\n", run.name, last.mean_sampled_length,
               last.tv_to_target);
  }
}

void cmd_oracle(const ExperimentConfig& c, Artifacts& a, std::ostream& out) {
  const Policy base = build_base(c);
  const auto& spec = c.train.target;
  std::ostringstream jsonl, csv;
  csv << "query,log_z,log_z_prime,base_mean_length,target_mean_length,la_mean_length,"
         "target_entropy,la_entropy\n";
  std::vector<Series> chart;
  for (const auto q : all_queries(base)) {
    const auto pb = policy_dist(base, q);
    const auto target = exact_target_dist(base, q, spec);
    const auto la = exact_la_target(base, q, spec);
    const double log_z = exact_log_partition(base, q, spec);
    const auto sb = dist_stats(pb), st = dist_stats(target), sl = dist_stats(la.dist);

    nlohmann::ordered_json j;
    j["query"] = q.value;
    j["log_z"] = log_z;
    j["log_z_prime"] = la.log_z_prime;
    j["base_mean_length"] = sb.mean_length;
    j["target_mean_length"] = st.mean_length;
    j["la_mean_length"] = sl.mean_length;
    j["target_entropy"] = st.entropy;
    j["la_entropy"] = sl.entropy;
    j["tv_target_la"] = tv(target, la.dist);
    jsonl << j.dump() << '\n';
    fmt::print(csv, "{},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g}\n", q.value, log_z,
               la.log_z_prime, sb.mean_length, st.mean_length, sl.mean_length, st.entropy,
               sl.entropy);

    std::ostringstream t, l;
    write_csv(target, t);
    write_csv(la.dist, l);
    a.add(fmt::format("target_q{}.csv", q.value), t.str());
    a.add(fmt::format("la_target_q{}.csv", q.value), l.str());
    if (q.value == 0) {
      chart.push_back({"base", pb.probs});
      chart.push_back({"alpha_power", target.probs});
      chart.push_back({"length_aware", la.dist.probs});
    }
    fmt::print(out, "query {} log_z={:.12f} log_z_prime={:.12f} la_mean_length={:.6f}\n", q.value,
               log_z, la.log_z_prime, sl.mean_length);
  }
  a.add("metrics.jsonl", jsonl.str());
  a.add("summary.csv", csv.str());
  a.add("chart.svg", render_svg(chart, ChartSpec{"query 0 trajectory probabilities",
                                                 "trajectory index", "probability", {}}));
}

void cmd_mvsim(const ExperimentConfig& c, Artifacts& a, std::ostream& out) {
  const auto series = run_dynamics(c.pi0, c.vote);
  std::ostringstream csv, jsonl, summary;
  write_csv(series, csv);
  a.add("series.csv", csv.str());
  for (const auto& s : series.steps) {
    nlohmann::ordered_json j;
    j["iteration"] = s.iteration;
    j["pi"] = s.pi;
    j["rbar"] = s.rbar;
    j["lambda"] = s.lambda;
    jsonl << j.dump() << '\n';
  }
  a.add("metrics.jsonl", jsonl.str());
  const auto& last = series.steps.back();
  summary << "mode,iterations,converged,pi_mode\n";
  fmt::print(summary, "{},{},{},{:.17g}\n", series.mode, last.iteration,
             series.converged ? "true" : "false", last.pi[series.mode]);
  a.add("summary.csv", summary.str());

  std::vector<Series> chart;
  std::vector<double> x;
  for (std::size_t i = 0; i < c.pi0.probs.size(); ++i) chart.push_back({fmt::format("pi_{}", i), {}});
  for (const auto& s : series.steps) {
    x.push_back(s.iteration);
    for (std::size_t i = 0; i < s.pi.size(); ++i) chart[i].values.push_back(s.pi[i]);
  }
  a.add("chart.svg", render_svg(chart, ChartSpec{"majority-vote dynamics", "iteration", "pi", x}));
  fmt::print(out, "mode={} iterations={} converged={} pi_mode={:.12f}\n", series.mode,
             last.iteration, series.converged, last.pi[series.mode]);
}

bool cmd_gradcheck(const ExperimentConfig& c, Artifacts& a, std::ostream& out) {
  const auto& g = c.gradcheck;
  const auto report = run_gradcheck(g.instances, g.seed, g.h, g.tolerance);
  std::ostringstream jsonl, csv;
  std::map<std::string, double> worst;
  std::map<std::string, Series> per_check;
  for (const auto& e : report.entries) {
    nlohmann::ordered_json j;
    j["check"] = e.check;
    j["instance"] = e.instance;
    j["rel_error"] = e.rel_error;
    jsonl << j.dump() << '\n';
    worst[e.check] = std::max(worst[e.check], e.rel_error);
    auto& s = per_check[e.check];
    s.name = e.check;
    s.values.push_back(e.rel_error);
  }
  csv << "check,max_rel_error,passed\n";
  for (const auto& [check, err] : worst)
    fmt::print(csv, "{},{:.6e},{}\n", check, err, err < g.tolerance ? "true" : "false");
  a.add("metrics.jsonl", jsonl.str());
  a.add("summary.csv", csv.str());
  std::vector<Series> chart;
  for (auto& [name, s] : per_check) chart.push_back(std::move(s));
  a.add("chart.svg",
        render_svg(chart, ChartSpec{"relative gradient error", "instance", "relative error", {}}));
  for (const auto& [check, err] : worst) fmt::print(out, "{:<20} max_rel_error={:.3e}\n", check, err);
  fmt::print(out, "instances={} max_rel_error={:.3e} tolerance={:.1e} {}\n", g.instances,
             report.max_rel_error, g.tolerance, report.passed ? "PASS" : "FAIL");
  return report.passed;
}

std::string one_line(std::string_view s) {
  std::string r(s);
  for (auto& ch : r)
    if (ch == '\n' || ch == '\r') ch = ' ';
  return r;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Power-distribution sampling experiments on enumerable sequence spaces", "powerflow"};
  app.require_subcommand(1);
  std::string config_path;
  for (const char* name : {"train", "compare", "oracle", "mvsim", "gradcheck"}) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("config", config_path, "experiment config file")->required();
  }
  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "powerflow: " << one_line(e.what()) << '\n';
    return kExitConfig;
  }
  const std::string subcommand = app.get_subcommands().front()->get_name();

  try {
    ExperimentConfig config = load_config(config_path);
    if (const char* env = std::getenv("POWERFLOW_OUT"); env && *env) config.out_dir = env;
    validate_for(config, subcommand);

    Artifacts artifacts;
    bool ok = true;
    if (subcommand == "train") cmd_train(config, artifacts, out);
    else if (subcommand == "compare") cmd_compare(config, artifacts, out);
    else if (subcommand == "oracle") cmd_oracle(config, artifacts, out);
    else if (subcommand == "mvsim") cmd_mvsim(config, artifacts, out);
    else ok = cmd_gradcheck(config, artifacts, out);
    artifacts.write(config.out_dir);
    if (!ok) {
      err << "powerflow: gradcheck exceeded tolerance\n";
      return kExitAssertion;
    }
    return kExitOk;
  } catch (const DivergenceError& e) {
    err << "powerflow: divergence: " << one_line(e.what()) << '\n';
    return kExitDivergence;
  } catch (const BracketError& e) {
    err << "powerflow: divergence: " << one_line(e.what()) << '\n';
    return kExitDivergence;
  } catch (const InvalidArgument& e) {
    err << "powerflow: config error: " << one_line(e.what()) << '\n';
    return kExitConfig;
  } catch (const CapacityError& e) {
    err << "powerflow: config error: " << one_line(e.what()) << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "powerflow: assertion failed: " << one_line(e.what()) << '\n';
    return kExitAssertion;
  }
}

}  // namespace powerflow
