#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "powerflow/cli.hpp"
#include "powerflow/config.hpp"
#include "powerflow/generators.hpp"
#include "powerflow/gradcheck.hpp"
#include "powerflow/mvsim.hpp"
#include "powerflow/objectives.hpp"
#include "powerflow/oracle.hpp"
#include "powerflow/trainer.hpp"

namespace py = pybind11;
using namespace powerflow;

namespace {

// Trajectories cross the boundary as token lists.
std::vector<std::pair<std::vector<Token>, double>> as_pairs(const FiniteDist& d) {
  std::vector<std::pair<std::vector<Token>, double>> out;
  out.reserve(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) out.emplace_back(d.at(i).tokens, d.probs[i]);
  return out;
}

TargetSpec target(double alpha, double psi_value, bool marker_required) {
  TargetSpec s;
  s.alpha = alpha;
  s.psi_value = psi_value;
  s.marker_required = marker_required;
  s.validate();
  return s;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Power-distribution sampling on enumerable sequence spaces";

  py::register_exception<InvalidArgument>(m, "InvalidArgument", PyExc_ValueError);
  py::register_exception<CapacityError>(m, "CapacityError", PyExc_RuntimeError);
  py::register_exception<DivergenceError>(m, "DivergenceError", PyExc_RuntimeError);

  py::class_<Vocab>(m, "Vocab")
      .def(py::init(&Vocab::make), py::arg("size"), py::arg("eos_id") = 0,
           py::arg("marker_id") = std::nullopt)
      .def_readonly("size", &Vocab::size)
      .def_readonly("eos_id", &Vocab::eos_id)
      .def_readonly("marker_id", &Vocab::marker_id);

  m.def("enumerate_trajectories", [](const Vocab& v, int max_len) {
    std::vector<std::vector<Token>> out;
    for (const auto& y : enumerate_trajectories(v, max_len)) out.push_back(y.tokens);
    return out;
  });
  m.def("trajectory_count", [](const Vocab& v, int max_len) { return trajectory_count(v, max_len); });

  py::class_<Policy>(m, "Policy")
      .def_property_readonly("vocab", &Policy::vocab)
      .def_property_readonly("max_len", &Policy::max_len)
      .def_property_readonly("num_queries", &Policy::num_queries)
      .def("log_prob",
           [](const Policy& p, std::size_t q, const std::vector<Token>& tokens) {
             return p.log_prob(QueryId{q}, make_trajectory(tokens, p.vocab(), p.max_len()));
           })
      .def("next_token_dist",
           [](const Policy& p, std::size_t q, const std::vector<Token>& prefix, double t) {
             return p.next_token_dist(QueryId{q}, prefix, t);
           },
           py::arg("query"), py::arg("prefix"), py::arg("temperature") = 1.0)
      .def("sample",
           [](const Policy& p, std::size_t q, std::uint64_t seed, int n, double t) {
             Rng rng(seed);
             std::vector<std::vector<Token>> out;
             for (int i = 0; i < n; ++i) out.push_back(p.sample(QueryId{q}, rng, t).tokens);
             return out;
           },
           py::arg("query"), py::arg("seed"), py::arg("n") = 1, py::arg("temperature") = 1.0)
      .def("serialize", &serialize_policy)
      .def_static("parse", [](const std::string& text) { return parse_policy(text); });

  m.def("uniform_policy",
        [](const Vocab& v, int max_len, std::size_t queries) { return uniform_policy(v, max_len, queries); },
        py::arg("vocab"), py::arg("max_len"), py::arg("queries") = 1);
  m.def("random_policy",
        [](const Vocab& v, int max_len, std::size_t queries, std::uint64_t seed, double scale) {
          return random_policy(v, max_len, queries, seed, PolicyFamily::Tabular, scale);
        },
        py::arg("vocab"), py::arg("max_len"), py::arg("queries") = 1, py::arg("seed") = 0,
        py::arg("scale") = 1.0);
  m.def("two_mode_policy", &two_mode_policy, py::arg("short_p"), py::arg("long_p"),
        py::arg("long_len"), py::arg("queries") = 1);
  m.def("mismatch_policy", &mismatch_policy, py::arg("queries") = 1);

  m.def("alpha_power", [](const std::vector<double>& p, double alpha) { return alpha_power(p, alpha); });

  m.def("exact_log_partition",
        [](const Policy& base, std::size_t q, double alpha, double psi, bool marker) {
          return exact_log_partition(base, QueryId{q}, target(alpha, psi, marker));
        },
        py::arg("base"), py::arg("query"), py::arg("alpha"), py::arg("psi_value") = -0.5,
        py::arg("marker_required") = false);
  m.def("exact_target_dist",
        [](const Policy& base, std::size_t q, double alpha, double psi, bool marker) {
          return as_pairs(exact_target_dist(base, QueryId{q}, target(alpha, psi, marker)));
        },
        py::arg("base"), py::arg("query"), py::arg("alpha"), py::arg("psi_value") = -0.5,
        py::arg("marker_required") = false);
  m.def("exact_la_target",
        [](const Policy& base, std::size_t q, double alpha, double psi, bool marker) {
          const auto t = exact_la_target(base, QueryId{q}, target(alpha, psi, marker));
          return py::make_tuple(as_pairs(t.dist), t.log_z_prime);
        },
        py::arg("base"), py::arg("query"), py::arg("alpha"), py::arg("psi_value") = -0.5,
        py::arg("marker_required") = false);
  m.def("policy_dist", [](const Policy& p, std::size_t q) { return as_pairs(policy_dist(p, QueryId{q})); });

  m.def("loss_tb_traj", &loss_tb_traj);
  m.def("loss_tb_token", &loss_tb_token);
  m.def("loss_la_tb", &loss_la_tb);
  m.def("clip_ratio",
        [](double log_new, double log_old, double eps_low, double eps_high) {
          return clip_ratio(log_new, log_old, ClipSpec{eps_low, eps_high});
        },
        py::arg("log_pi_new"), py::arg("log_pi_old"), py::arg("eps_low") = 0.2,
        py::arg("eps_high") = 0.28);
  m.def("init_logz", &init_logz);

  m.def("expected_majority_reward",
        [](const std::vector<double>& pi, int n_votes) {
          VoteConfig c;
          c.n_votes = n_votes;
          return expected_majority_reward({pi}, c);
        },
        py::arg("pi"), py::arg("n_votes"));
  m.def("mv_update",
        [](const std::vector<double>& pi, const std::vector<double>& rbar, double beta) {
          return mv_update({pi}, rbar, beta).probs;
        });
  m.def("run_dynamics",
        [](const std::vector<double>& pi0, int n_votes, double beta, int iterations) {
          VoteConfig c;
          c.n_votes = n_votes;
          c.beta = beta;
          c.iterations = iterations;
          std::vector<std::vector<double>> out;
          for (const auto& s : run_dynamics({pi0}, c).steps) out.push_back(s.pi);
          return out;
        },
        py::arg("pi0"), py::arg("n_votes") = 3, py::arg("beta") = 1.0,
        py::arg("iterations") = 10'000);

  m.def("train",
        [](const Policy& base, const std::string& loss, double alpha, int steps, std::uint64_t seed) {
          TrainConfig c;
          c.loss = parse_loss_kind(loss);
          c.target.alpha = alpha;
          c.steps = steps;
          c.seed = seed;
          std::vector<QueryId> qs;
          for (std::size_t q = 0; q < base.num_queries(); ++q) qs.push_back(QueryId{q});
          auto r = train(c, base, qs);
          std::vector<double> tv_series;
          for (const auto& s : r.metrics) tv_series.push_back(s.tv_to_target);
          return py::make_tuple(std::move(r.policy), tv_series);
        },
        py::arg("base"), py::arg("loss") = "la_tb", py::arg("alpha") = 4.0, py::arg("steps") = 2000,
        py::arg("seed") = 0);

  m.def("gradcheck",
        [](int instances, std::uint64_t seed) {
          const auto r = run_gradcheck(instances, seed);
          return py::make_tuple(r.passed, r.max_rel_error);
        },
        py::arg("instances") = 50, py::arg("seed") = 0);

  m.def("run_cli", [](const std::vector<std::string>& args) {
    std::ostringstream out, err;
    const int code = run_cli(args, out, err);
    return py::make_tuple(code, out.str(), err.str());
  });
}
