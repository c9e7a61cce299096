// Acceptance checks.  Prints one PASS/FAIL line per criterion and exits
// nonzero when any fails.

#include "dtdlab/analysis.hpp"
#include "dtdlab/dtd.hpp"
#include "dtdlab/exact.hpp"
#include "dtdlab/harness.hpp"
#include "dtdlab/io.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

using namespace dtdlab;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", x);
  return buf;
}

int failures = 0;

void report(int id, bool ok, const std::string& detail) {
  std::printf("%s criterion %d: %s\n", ok ? "PASS" : "FAIL", id, detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

// Runs a criterion, turning an exception into a failure line.
void criterion(int id, const std::function<void()>& body) {
  try {
    body();
  } catch (const std::exception& e) {
    report(id, false, std::string("exception: ") + e.what());
  }
}

std::string config_path(const char* name) { return std::string(DTDLAB_SOURCE_DIR) + "/configs/" + name; }

RunConfig quiet(RunConfig cfg) {
  cfg.out_dir.clear();
  return cfg;
}

struct Case {
  MultiAgentMdp mdp;
  FeatureMap fm;
  double lambda = 0.0;
};

std::vector<Case> instances() {
  const double lambdas[4] = {0.0, 0.3, 0.7, 0.95};
  std::vector<Case> out;
  for (std::uint64_t i = 0; i < 50; ++i) {
    RandomMdpSpec spec;
    spec.num_states = 5 + i % 16;
    spec.num_agents = 1 + i % 8;
    spec.branching = 2 + (i * 7) % (spec.num_states - 1);
    spec.reward_bound = 1.0;
    spec.gamma = 0.5 + 0.45 * static_cast<double>(i % 10) / 9.0;
    spec.seed = 100 + i;
    const std::size_t L = std::min<std::size_t>(1 + i % 6, spec.num_states);
    out.push_back({random_mdp(spec), normalize_features(gaussian_features(spec.num_states, L, 500 + i)),
                   lambdas[i % 4]});
  }
  return out;
}

Matrix truncated_U(const Matrix& P, double gamma, double lambda) {
  Matrix sum = Matrix::Zero(P.rows(), P.cols());
  Matrix power = gamma * P;
  double c = 1.0 - lambda;
  for (int k = 0; k < 100000 && c * std::pow(gamma, k + 1) > 1e-18; ++k) {
    sum += c * power;
    power = power * (gamma * P);
    c *= lambda;
  }
  return sum;
}

Vector truncated_b(const Case& c, const StationaryDist& d, const Vector& r) {
  const double gl = c.mdp.gamma * c.lambda;
  Vector acc = Vector::Zero(r.size());
  Vector term = r;
  for (int k = 0; k < 100000 && term.cwiseAbs().maxCoeff() > 1e-18; ++k) {
    acc += term;
    term = gl * (c.mdp.chain.P * term);
  }
  return c.fm.Phi().transpose() * d.D() * acc;
}

double fit_rate(const std::vector<std::size_t>& ks, const std::vector<double>& ys) {
  double sk = 0, sy = 0, skk = 0, sky = 0;
  const double n = static_cast<double>(ks.size());
  for (std::size_t i = 0; i < ks.size(); ++i) {
    const double k = static_cast<double>(ks[i]), y = std::log(ys[i]);
    sk += k;
    sy += y;
    skk += k * k;
    sky += k * y;
  }
  return std::exp((n * sky - sk * sy) / (n * skk - sk * sk));
}

}  // namespace

int main() {
  const auto cases = instances();
  const RunConfig desk_cfg = quiet(load_config(config_path("desk.json")));
  const Instance desk = build_instance(desk_cfg);

  // 1. Fixed-point oracle.
  criterion(1, [&] {
    const auto t0 = Clock::now();
    double worst_U = 0, worst_b = 0, worst_res = 0, min_margin = 1e300;
    for (const auto& c : cases) {
      const auto o = build_oracle(c.mdp, c.fm, c.lambda);
      worst_U = std::max(worst_U, (compute_U(c.mdp.chain, c.mdp.gamma, c.lambda) -
                                   truncated_U(c.mdp.chain.P, c.mdp.gamma, c.lambda)).cwiseAbs().maxCoeff());
      for (std::size_t v = 0; v < c.mdp.num_agents(); ++v) {
        const Vector r = expected_reward_vector(c.mdp, v);
        worst_b = std::max(worst_b, (compute_b(c.fm, o.dist, c.mdp.chain, r, c.mdp.gamma, c.lambda) -
                                     truncated_b(c, o.dist, r)).cwiseAbs().maxCoeff());
      }
      worst_res = std::max(worst_res, (o.A * o.theta_star + o.b).norm());
      const Matrix sym = -(o.A + o.A.transpose()) / 2;
      min_margin = std::min(min_margin, Eigen::SelfAdjointEigenSolver<Matrix>(sym).eigenvalues()(0));
    }
    const double t = seconds_since(t0);
    report(1, worst_U <= 1e-12 && worst_b <= 1e-12 && worst_res <= 1e-10 && min_margin > 1e-10 && t < 10.0,
           "50 instances, max |U - series| " + fmt(worst_U) + ", max |b - series| " + fmt(worst_b) +
               ", max ||A theta* + b|| " + fmt(worst_res) + ", min ND margin " + fmt(min_margin) + ", " + fmt(t) + " s");
  });

  // 2. lambda = 1 gives the best approximation.
  criterion(2, [&] {
    const auto o1 = build_oracle(desk.mdp, desk.fm, 1.0);
    const auto oe = build_oracle(desk.mdp, desk.fm, 1.0 - 1e-6);
    const double proj = weighted_norm(desk.fm.Phi() * o1.theta_star - project(desk.fm, o1.dist, o1.J), o1.dist);
    const double gap = (o1.theta_star - oe.theta_star).norm();
    report(2, proj <= 1e-8 && gap <= 1e-6,
           "||Phi theta* - Pi J||_D " + fmt(proj) + ", ||theta*(1) - theta*(1 - 1e-6)|| " + fmt(gap));
  });

  // 3. Approximation sandwich.
  criterion(3, [&] {
    double worst_low = -1e300, worst_up = -1e300;
    for (const auto& c : cases) {
      const auto o = build_oracle(c.mdp, c.fm, c.lambda);
      const double lower = weighted_norm(project(c.fm, o.dist, o.J) - o.J, o.dist);
      const double actual = weighted_norm(c.fm.Phi() * o.theta_star - o.J, o.dist);
      const double upper = (1 - c.mdp.gamma * c.lambda) / (1 - c.mdp.gamma) * lower + 1e-9;
      // Both sides are round-off when Phi spans J exactly (L = S).
      worst_low = std::max(worst_low, lower - actual - 1e-12);
      worst_up = std::max(worst_up, actual - upper);
    }
    report(3, worst_low <= 0.0 && worst_up <= 0.0,
           "max (lower - actual - 1e-12) " + fmt(worst_low) + ", max (actual - upper) " + fmt(worst_up));
  });

  // 4. Algorithm fidelity.
  criterion(4, [&] {
    const double gamma = desk.mdp.gamma, lambda = 0.5, alpha = 0.01;
    const std::size_t N = desk.mdp.num_agents(), L = desk.fm.num_features();
    std::vector<Vector> init;
    Rng irng(1);
    for (std::size_t v = 0; v < N; ++v) {
      Vector t(static_cast<Eigen::Index>(L));
      for (Eigen::Index i = 0; i < t.size(); ++i) t[i] = irng.normal();
      init.push_back(t);
    }
    auto s = init_swarm(init, L, N, 0);
    Rng rng(2);
    std::vector<std::size_t> history{0};
    double worst_matrix = 0, worst_mean = 0, worst_trace = 0;
    for (std::size_t k = 0; k < 10000; ++k) {
      const Matrix Theta = s.Theta();
      const Vector mean = s.mean_theta();
      const auto t = sample_transition(desk.mdp, s.current_state, rng);
      step(s, desk.W, desk.fm, t, alpha, alpha, {gamma, lambda});
      const auto op = noisy_operators(t, s.agents[0].trace, desk.fm, gamma);
      Matrix B(static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(L));
      for (std::size_t v = 0; v < N; ++v) B.row(static_cast<Eigen::Index>(v)) = op.b[v].transpose();
      worst_matrix = std::max(worst_matrix, (s.Theta() - (desk.W.W * Theta + alpha * Theta * op.A.transpose() + alpha * B))
                                                .cwiseAbs().maxCoeff());
      worst_mean = std::max(worst_mean, (s.mean_theta() - (mean + alpha * (op.A * mean + op.b_mean()))).cwiseAbs().maxCoeff());
      if (k % 10 == 0)
        worst_trace = std::max(worst_trace, (s.agents[0].trace - trace_closed_form(history, gamma, lambda, desk.fm, k))
                                                .cwiseAbs().maxCoeff());
      history.push_back(t.to);
    }

    // N = 1 against a plain TD(lambda) loop on agent 0's rewards.
    MultiAgentMdp single = desk.mdp;
    single.rewards.resize(1);
    const ConsensusMatrix one{Matrix::Identity(1, 1), 0.0};
    auto s1 = init_swarm({init[0]}, L, 1, 0);
    Rng r1(3), r2(3);
    Vector theta = init[0], z = Vector::Zero(static_cast<Eigen::Index>(L));
    std::size_t state = 0;
    bool bitwise = true;
    for (int k = 0; k < 10000 && bitwise; ++k) {
      step(s1, one, desk.fm, sample_transition(single, s1.current_state, r1), alpha, alpha, {gamma, lambda});
      const std::size_t next = sample_next_state(single.chain, state, r2);
      for (std::size_t i = 0; i < L; ++i) z[i] = gamma * lambda * z[i] + desk.fm.Phi()(state, i);
      double d = 0.0;
      for (std::size_t i = 0; i < L; ++i) d += (gamma * desk.fm.Phi()(next, i) - desk.fm.Phi()(state, i)) * theta[i];
      d += single.rewards[0](state, next);
      for (std::size_t i = 0; i < L; ++i) theta[i] += alpha * d * z[i];
      state = next;
      bitwise = s1.agents[0].theta == theta;
    }
    report(4, worst_matrix <= 1e-12 && worst_mean <= 1e-12 && worst_trace <= 1e-12 && bitwise,
           "1e4 steps: matrix form " + fmt(worst_matrix) + ", mean form " + fmt(worst_mean) + ", trace closed form " +
               fmt(worst_trace) + ", N=1 bit-match " + (bitwise ? "yes" : "no"));
  });

  // 5, 6, 10 share the constant-step desk run.
  ExperimentResult constant_run;
  double constant_seconds = 0.0;
  criterion(5, [&] {
    const auto t0 = Clock::now();
    constant_run = run_experiment(desk_cfg);
    constant_seconds = seconds_since(t0);
    const auto& r = constant_run.per_lambda.at(0);
    double worst_ratio = 0.0;
    std::size_t checked = 0;
    for (const auto& row : r.report.rows)
      if (!std::isnan(row.consensus_worst_ratio)) {
        worst_ratio = std::max(worst_ratio, row.consensus_worst_ratio);
        ++checked;
      }
    const bool pathwise = r.verdict.ok() && r.report.consensus_ok && checked == r.report.rows.size();

    // R = 0: pure consensus decay from a random start.
    RunConfig cfg = desk_cfg;
    cfg.mdp.random.reward_bound = 0.0;
    cfg.theta0_scale = 1.0;
    cfg.num_steps = 100;
    cfg.record_every = 1;
    cfg.extra_records.clear();
    const auto z = run_experiment(cfg);
    const auto& rz = z.per_lambda.at(0);
    const double d = delta(rz.inputs.sigma2, rz.inputs.alpha, rz.inputs.gamma, rz.inputs.lambda);
    double worst_rate = 0.0;
    for (const auto& t : rz.runs) {
      std::vector<std::size_t> ks;
      std::vector<double> ys;
      for (const auto& snap : t.snapshots)
        if (snap.k >= 10 && snap.k <= 100) {
          ks.push_back(snap.k);
          ys.push_back(snap.consensus_error);
        }
      worst_rate = std::max(worst_rate, fit_rate(ks, ys));
    }
    report(5, pathwise && worst_rate <= d * 1.01,
           "20 seeds, " + std::to_string(checked) + " recorded k, worst error/bound " + fmt(worst_ratio) +
               "; R=0 fitted rate " + fmt(worst_rate) + " vs delta " + fmt(d));
  });

  criterion(6, [&] {
    const auto& r = constant_run.per_lambda.at(0);
    std::size_t checked = 0;
    double worst = 0.0;
    for (const auto& row : r.report.rows)
      if (!std::isnan(row.theorem_rhs)) {
        ++checked;
        worst = std::max(worst, row.mse / row.theorem_rhs);
      }
    const double limit = theorem1_limit(r.inputs);
    report(6, r.report.dominated && checked > 0 && r.plateau <= limit && constant_seconds < 60.0,
           "alpha " + fmt(r.inputs.alpha) + ", tau " + std::to_string(r.inputs.tau) + ", " + std::to_string(checked) +
               " recorded k, max mse/rhs " + fmt(worst) + ", plateau " + fmt(r.plateau) + " <= limit " + fmt(limit) +
               ", " + fmt(constant_seconds) + " s");
  });

  // 7. Diminishing steps past K*.
  criterion(7, [&] {
    const auto cfg = quiet(load_config(config_path("desk_diminishing.json")));
    const auto res = run_experiment(cfg);
    const auto& r = res.per_lambda.at(0);
    std::size_t checked = 0;
    double worst = 0.0, at_2e4 = NAN, at_2e5 = NAN;
    for (const auto& row : r.report.rows) {
      if (!std::isnan(row.theorem_rhs)) {
        ++checked;
        worst = std::max(worst, row.mse / row.theorem_rhs);
      }
      if (row.k == 20000) at_2e4 = row.mse;
      if (row.k == 200000) at_2e5 = row.mse;
    }
    const bool have_kstar = r.kstar.has_value();
    report(7, have_kstar && r.report.dominated && checked > 0 && at_2e5 < at_2e4 &&
                  std::abs(r.inputs.alpha0 * r.oracle.sigma_min - 1.0) < 1e-12,
           "alpha0 = 1/sigma_min = " + fmt(r.inputs.alpha0) + ", K* " +
               (have_kstar ? std::to_string(r.kstar->kstar) : std::string("none")) + ", " + std::to_string(checked) +
               " recorded k >= K*, max mse/rhs " + fmt(worst) + ", mse(2e4) " + fmt(at_2e4) + " > mse(2e5) " +
               fmt(at_2e5));
  });

  // 8. lambda trade-off.
  criterion(8, [&] {
    bool formula = true;
    for (const auto& c : cases) {
      const std::size_t N = c.mdp.num_agents();
      const double s2 = metropolis_weights(N == 1 ? CommGraph(1, {}) : ring_graph(N)).sigma2;
      const double g = c.mdp.gamma, R = c.mdp.reward_bound;
      const double alpha = 0.5 * (1 - g * 0.9) * (1 - s2) / (1 + g);
      formula = formula && variance_floor(R, alpha, g, 0.9, delta(s2, alpha, g, 0.9)) >
                               variance_floor(R, alpha, g, 0.0, delta(s2, alpha, g, 0.0));
    }
    const auto res = run_experiment(quiet(load_config(config_path("desk_tradeoff.json"))));
    const auto& r0 = res.per_lambda.at(0);
    const auto& r9 = res.per_lambda.at(1);
    const double se = std::sqrt(r0.plateau_se * r0.plateau_se + r9.plateau_se * r9.plateau_se);
    const bool measured = r0.lambda == 0.0 && r9.lambda == 0.9 && r9.plateau - r0.plateau >= se;
    report(8, formula && measured,
           std::string("variance floor monotone on 50 instances: ") + (formula ? "yes" : "no") + "; R=5 alpha=" +
               fmt(r0.inputs.alpha) + " plateau lambda=0.9 " + fmt(r9.plateau) + " vs lambda=0 " + fmt(r0.plateau) +
               " (se " + fmt(se) + ")");
  });

  // 9. Mixing time.
  criterion(9, [&] {
    const double lambda = desk_cfg.lambdas.at(0);
    const auto o = build_oracle(desk.mdp, desk.fm, lambda);
    std::string detail;
    bool ok = true;
    for (double a : {0.1, 0.01}) {
      const auto t = tv_mixing_steps(desk.mdp.chain, o.dist.pi, a);
      const auto m = mc_mixing_check(desk.mdp, desk.fm, o, a, t, 10000, 17);
      ok = ok && m.passed;
      detail += "alpha " + fmt(a) + " tau " + std::to_string(t) + " max dev A " + fmt(m.max_dev_A) + " b " +
                fmt(m.max_dev_b) + (m.passed ? " ok; " : " FAILED");
      if (!m.passed) {
        // Diagnostic only: the conditioning pair (s0, s1) uses up one transition.
        const auto next = mc_mixing_check(desk.mdp, desk.fm, o, a, t + 1, 10000, 17);
        detail += std::string(" (tau + 1: dev A ") + fmt(next.max_dev_A) + (next.passed ? " ok); " : " fails); ");
      }
    }
    const MixingModel model{fit_mixing_constant(desk.mdp.chain, o.dist.pi)};
    long worst = 0;
    for (int j = 2; j <= 16; ++j) {
      const double a = std::pow(10.0, -0.5 * j);
      const long diff = static_cast<long>(model.tau(a)) - static_cast<long>(tv_mixing_steps(desk.mdp.chain, o.dist.pi, a));
      worst = std::max(worst, std::labs(diff));
    }
    report(9, ok && worst <= 1,
           detail + "C " + fmt(model.C) + ", max |tau_model - tau_tv| over alpha in [1e-8, 0.1]: " + std::to_string(worst));
  });

  // 10. Drift inequalities on every seed of the constant run.
  criterion(10, [&] {
    const auto& r = constant_run.per_lambda.at(0);
    std::size_t checked = 0;
    for (const auto& row : r.report.rows) checked += !std::isnan(row.drift_lhs);
    report(10, r.report.drift_checked && r.report.drift_ok && checked > 0,
           std::string("drift monitor ") + (r.report.drift_checked ? "applied" : "not applicable") + ", " +
               std::to_string(checked) + " recorded k on 20 seeds, all inequalities " +
               (r.report.drift_ok ? "hold" : "VIOLATED"));
  });

  std::printf("%d of 10 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
