#include "dtdlab/analysis.hpp"
#include "dtdlab/dtd.hpp"
#include "dtdlab/exact.hpp"
#include "dtdlab/features.hpp"
#include "dtdlab/harness.hpp"
#include "dtdlab/mdp.hpp"
#include "dtdlab/network.hpp"

#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

namespace py = pybind11;
using namespace dtdlab;

namespace {

ConsensusMatrix consensus_for(const std::string& kind, std::size_t n, double p, std::uint64_t seed) {
  return metropolis_weights(make_graph(parse_graph_kind(kind), n, p, seed));
}

StepSchedule schedule_for(const std::string& kind, double value) {
  if (kind == "constant") return StepSchedule::constant(value);
  if (kind == "diminishing") return StepSchedule::diminishing(value);
  throw Error("schedule must be 'constant' or 'diminishing'");
}

// Trajectory as a dict of arrays; theta is (records, N, L) flattened to a
// list of N x L matrices.
py::dict trajectory_dict(const Trajectory& t) {
  std::vector<std::size_t> ks;
  std::vector<double> mse, cons, steps;
  std::vector<Matrix> theta;
  Matrix mean(static_cast<Eigen::Index>(t.snapshots.size()),
              t.snapshots.empty() ? 0 : t.snapshots.front().mean.size());
  for (std::size_t i = 0; i < t.snapshots.size(); ++i) {
    const auto& s = t.snapshots[i];
    ks.push_back(s.k);
    mse.push_back(s.mse);
    cons.push_back(s.consensus_error);
    steps.push_back(s.stepsize);
    theta.push_back(s.theta);
    mean.row(static_cast<Eigen::Index>(i)) = s.mean.transpose();
  }
  py::dict d;
  d["k"] = ks;
  d["mse"] = mse;
  d["consensus_error"] = cons;
  d["stepsize"] = steps;
  d["theta"] = theta;
  d["mean"] = mean;
  return d;
}

py::dict lambda_result_dict(const LambdaResult& r) {
  py::dict d;
  d["lambda"] = r.lambda;
  d["theta_star"] = r.oracle.theta_star;
  d["sigma_min"] = r.oracle.sigma_min;
  d["sigma2"] = r.sigma2;
  d["alpha"] = r.inputs.alpha;
  d["alpha0"] = r.inputs.alpha0;
  d["tau"] = r.inputs.tau;
  d["C"] = r.model.C;
  d["kstar"] = r.kstar ? py::cast(r.kstar->kstar) : py::none();
  d["stepsize_ok"] = r.verdict.ok();
  d["plateau"] = r.plateau;
  d["plateau_se"] = r.plateau_se;
  d["dominated"] = r.report.dominated;
  d["consensus_ok"] = r.report.consensus_ok;
  d["drift_checked"] = r.report.drift_checked;
  d["drift_ok"] = r.report.drift_ok;
  std::vector<std::size_t> ks;
  std::vector<double> mse, rhs;
  for (const auto& row : r.report.rows) {
    ks.push_back(row.k);
    mse.push_back(row.mse);
    rhs.push_back(row.theorem_rhs);
  }
  d["k"] = ks;
  d["mse"] = mse;
  d["theorem_rhs"] = rhs;
  d["failures"] = r.failures;
  d["notes"] = r.notes;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Distributed TD(lambda) simulator, fixed-point oracle and finite-time bound evaluators.";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<InvariantError>(m, "InvariantError", base.ptr());

  py::class_<MultiAgentMdp>(m, "MultiAgentMdp")
      .def(py::init([](Matrix P, std::vector<Matrix> rewards, double gamma, double R) {
             MultiAgentMdp mdp{MarkovChain{std::move(P)}, std::move(rewards), gamma, R};
             const auto v = mdp.validate();
             if (!v.ok) throw Error("invalid mdp: " + v.defect);
             const auto c = validate_chain(mdp.chain);
             if (!c.ok) throw Error("invalid chain: " + c.defect);
             return mdp;
           }),
           py::arg("P"), py::arg("rewards"), py::arg("gamma"), py::arg("reward_bound"))
      .def_property_readonly("P", [](const MultiAgentMdp& m) { return m.chain.P; })
      .def_readonly("rewards", &MultiAgentMdp::rewards)
      .def_readonly("gamma", &MultiAgentMdp::gamma)
      .def_readonly("reward_bound", &MultiAgentMdp::reward_bound)
      .def_property_readonly("num_states", &MultiAgentMdp::num_states)
      .def_property_readonly("num_agents", &MultiAgentMdp::num_agents)
      .def("true_value", [](const MultiAgentMdp& m) { return true_value(m); })
      .def("save", [](const MultiAgentMdp& m, const std::string& path) { save_mdp(path, m); });

  m.def("random_mdp",
        [](std::size_t states, std::size_t agents, std::size_t branching, double reward_bound, double gamma,
           std::uint64_t seed) {
          return random_mdp({states, agents, branching == 0 ? states : branching, reward_bound, gamma, seed});
        },
        py::arg("states") = 10, py::arg("agents") = 4, py::arg("branching") = 0, py::arg("reward_bound") = 1.0,
        py::arg("gamma") = 0.9, py::arg("seed") = 0);
  m.def("load_mdp", &load_mdp, py::arg("path"));
  m.def("stationary_distribution", [](const Matrix& P) { return stationary_distribution(MarkovChain{P}).pi; },
        py::arg("P"));

  m.def("aggregation_features", &aggregation_features, py::arg("states"), py::arg("features"));
  m.def("gaussian_features", &gaussian_features, py::arg("states"), py::arg("features"), py::arg("seed") = 0);
  m.def("normalize_features", [](const Matrix& raw) { return normalize_features(raw).Phi(); }, py::arg("raw"));

  m.def("consensus_matrix",
        [](const std::string& kind, std::size_t agents, double p, std::uint64_t seed) {
          const auto c = consensus_for(kind, agents, p, seed);
          return py::make_tuple(c.W, c.sigma2);
        },
        py::arg("kind"), py::arg("agents"), py::arg("p") = 0.5, py::arg("seed") = 0,
        "Metropolis weights on a generated graph; returns (W, sigma2).");

  py::class_<FixedPointOracle>(m, "FixedPointOracle")
      .def_readonly("gamma", &FixedPointOracle::gamma)
      .def_readonly("lambda_", &FixedPointOracle::lambda)
      .def_property_readonly("pi", [](const FixedPointOracle& o) { return o.dist.pi; })
      .def_readonly("U", &FixedPointOracle::U)
      .def_readonly("A", &FixedPointOracle::A)
      .def_readonly("b_v", &FixedPointOracle::b_v)
      .def_readonly("b", &FixedPointOracle::b)
      .def_readonly("theta_star", &FixedPointOracle::theta_star)
      .def_readonly("sigma_min", &FixedPointOracle::sigma_min)
      .def_readonly("sigma_min_singular", &FixedPointOracle::sigma_min_singular)
      .def_readonly("J", &FixedPointOracle::J)
      .def_readonly("residual", &FixedPointOracle::residual)
      .def("approximation_quality",
           [](const FixedPointOracle& o, const Matrix& Phi) {
             const auto q = approximation_quality(o, o.J, FeatureMap(Phi), o.dist);
             return py::make_tuple(q.lower, q.actual, q.upper);
           },
           py::arg("Phi"), "(||Pi J - J||_D, ||Phi theta* - J||_D, upper bound).");

  m.def("build_oracle",
        [](const MultiAgentMdp& mdp, const Matrix& Phi, double lambda) {
          return build_oracle(mdp, FeatureMap(Phi), lambda);
        },
        py::arg("mdp"), py::arg("Phi"), py::arg("lambda_"));
  m.def("compute_U", [](const Matrix& P, double g, double l) { return compute_U(MarkovChain{P}, g, l); },
        py::arg("P"), py::arg("gamma"), py::arg("lambda_"));

  m.def("simulate",
        [](const MultiAgentMdp& mdp, const Matrix& Phi, const Matrix& W, double lambda, const std::string& schedule,
           double step, std::size_t steps, std::size_t record_every, std::uint64_t seed,
           std::vector<Vector> theta0) {
          const FeatureMap fm(Phi);
          const ConsensusMatrix cm{W, second_singular_value(W)};
          const auto o = build_oracle(mdp, fm, lambda);
          RunOptions opt;
          opt.num_steps = steps;
          opt.record_every = record_every;
          opt.seed = seed;
          opt.theta0 = std::move(theta0);
          Trajectory t;
          {
            py::gil_scoped_release release;
            t = run(mdp, fm, cm, schedule_for(schedule, step), lambda, o.theta_star, opt);
          }
          return trajectory_dict(t);
        },
        py::arg("mdp"), py::arg("Phi"), py::arg("W"), py::arg("lambda_"), py::arg("schedule") = "constant",
        py::arg("step") = 0.01, py::arg("steps") = 1000, py::arg("record_every") = 100, py::arg("seed") = 0,
        py::arg("theta0") = std::vector<Vector>{},
        "Runs distributed TD(lambda); returns k, mse, consensus_error, stepsize, theta and mean.");

  m.def("tv_mixing_steps", [](const Matrix& P, double alpha) {
          const MarkovChain c{P};
          return tv_mixing_steps(c, stationary_distribution(c).pi, alpha);
        },
        py::arg("P"), py::arg("alpha"));
  m.def("fit_mixing_constant", [](const Matrix& P) {
          const MarkovChain c{P};
          return fit_mixing_constant(c, stationary_distribution(c).pi);
        },
        py::arg("P"));
  m.def("mc_mixing_check",
        [](const MultiAgentMdp& mdp, const Matrix& Phi, const FixedPointOracle& o, double alpha, std::size_t tau,
           std::size_t samples, std::uint64_t seed) {
          const auto r = mc_mixing_check(mdp, FeatureMap(Phi), o, alpha, tau, samples, seed);
          py::dict d;
          d["passed"] = r.passed;
          d["pairs"] = r.pairs;
          d["max_dev_A"] = r.max_dev_A;
          d["max_dev_b"] = r.max_dev_b;
          d["worst_margin"] = r.worst_margin;
          return d;
        },
        py::arg("mdp"), py::arg("Phi"), py::arg("oracle"), py::arg("alpha"), py::arg("tau"),
        py::arg("samples") = 10000, py::arg("seed") = 0);

  py::enum_<Psi2Form>(m, "Psi2Form").value("derivation", Psi2Form::derivation).value("statement", Psi2Form::statement);

  py::class_<BoundInputs>(m, "BoundInputs")
      .def(py::init<>())
      .def_readwrite("gamma", &BoundInputs::gamma)
      .def_readwrite("lambda_", &BoundInputs::lambda)
      .def_readwrite("R", &BoundInputs::R)
      .def_readwrite("sigma2", &BoundInputs::sigma2)
      .def_readwrite("sigma_min", &BoundInputs::sigma_min)
      .def_readwrite("theta_star_norm", &BoundInputs::theta_star_norm)
      .def_readwrite("alpha", &BoundInputs::alpha)
      .def_readwrite("alpha0", &BoundInputs::alpha0)
      .def_readwrite("tau", &BoundInputs::tau)
      .def_readwrite("C", &BoundInputs::C)
      .def_readwrite("num_agents", &BoundInputs::num_agents)
      .def_readwrite("init_Theta_sq", &BoundInputs::init_Theta_sq)
      .def_readwrite("init_Theta_norm", &BoundInputs::init_Theta_norm)
      .def_readwrite("init_mean_err_sq", &BoundInputs::init_mean_err_sq)
      .def_readwrite("kstar", &BoundInputs::kstar)
      .def_readwrite("psi2_form", &BoundInputs::psi2_form);

  m.def("delta", &delta, py::arg("sigma2"), py::arg("alpha"), py::arg("gamma"), py::arg("lambda_"));
  m.def("psi_constant_step", [](const BoundInputs& in) {
          const auto p = psi_constant_step(in);
          return py::make_tuple(p.first, p.second);
        });
  m.def("psi_diminishing_step", [](const BoundInputs& in) {
          const auto p = psi_diminishing_step(in);
          return py::make_tuple(p.first, p.second);
        });
  m.def("stepsize_conditions", [](const BoundInputs& in) {
          const auto v = constant_stepsize_conditions(in);
          return py::make_tuple(v.ok(), v.failed_clause(), v.describe());
        },
        "Returns (ok, first failing clause or 0, description).");
  m.def("variance_floor", &variance_floor, py::arg("R"), py::arg("alpha"), py::arg("gamma"), py::arg("lambda_"),
        py::arg("delta"));
  m.def("theorem1_rhs", &theorem1_rhs, py::arg("inputs"), py::arg("k"));
  m.def("theorem1_limit", &theorem1_limit, py::arg("inputs"));
  m.def("theorem2_rhs", &theorem2_rhs, py::arg("inputs"), py::arg("k"));
  m.def("consensus_bound_constant", &consensus_bound_constant, py::arg("inputs"), py::arg("k"));

  m.def("run_experiment",
        [](const std::string& config_json, const std::string& base_dir) {
          const auto cfg = parse_config(config_json, base_dir);
          ExperimentResult res;
          {
            py::gil_scoped_release release;
            res = run_experiment(cfg);
          }
          py::list out;
          for (const auto& r : res.per_lambda) out.append(lambda_result_dict(r));
          return out;
        },
        py::arg("config_json"), py::arg("base_dir") = ".",
        "Runs a JSON experiment config; returns one result dict per lambda.");
}
