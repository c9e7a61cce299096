#include "dtdlab/dtd.hpp"

#include "dtdlab/analysis.hpp"
#include "dtdlab/io.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

namespace dtdlab {
namespace {

constexpr double kDivergenceNorm = 1e12;

}  // namespace

std::size_t SwarmState::num_features() const {
  return agents.empty() ? 0 : static_cast<std::size_t>(agents.front().theta.size());
}

Matrix SwarmState::Theta() const {
  Matrix m(static_cast<Eigen::Index>(num_agents()), static_cast<Eigen::Index>(num_features()));
  for (std::size_t v = 0; v < agents.size(); ++v) m.row(static_cast<Eigen::Index>(v)) = agents[v].theta.transpose();
  return m;
}

Vector SwarmState::mean_theta() const {
  Vector mean = Vector::Zero(static_cast<Eigen::Index>(num_features()));
  for (const auto& a : agents) mean += a.theta;
  return mean / static_cast<double>(agents.size());
}

Matrix SwarmState::OutAvg() const {
  Matrix m(static_cast<Eigen::Index>(num_agents()), static_cast<Eigen::Index>(num_features()));
  for (std::size_t v = 0; v < agents.size(); ++v) m.row(static_cast<Eigen::Index>(v)) = agents[v].out_avg.transpose();
  return m;
}

StepSchedule StepSchedule::constant(double alpha) {
  if (!(alpha > 0.0) || !std::isfinite(alpha)) throw Error("step size must be positive");
  return {Kind::constant, alpha};
}

StepSchedule StepSchedule::diminishing(double alpha0) {
  if (!(alpha0 > 0.0) || !std::isfinite(alpha0)) throw Error("alpha0 must be positive");
  return {Kind::diminishing, alpha0};
}

DivergenceError::DivergenceError(std::size_t k, std::size_t agent)
    : Error("iterate of agent " + std::to_string(agent) + " diverged at iteration " + std::to_string(k)), k_(k) {}

SwarmState init_swarm(const std::vector<Vector>& theta0, std::size_t num_features, std::size_t num_agents,
                      std::size_t start_state) {
  if (num_agents == 0) throw Error("init_swarm: need at least one agent");
  if (!theta0.empty() && theta0.size() != num_agents)
    throw Error("init_swarm: expected " + std::to_string(num_agents) + " initial iterates, got " +
                std::to_string(theta0.size()));
  const auto L = static_cast<Eigen::Index>(num_features);
  SwarmState s;
  s.current_state = start_state;
  for (std::size_t v = 0; v < num_agents; ++v) {
    AgentState a;
    a.theta = theta0.empty() ? Vector::Zero(L) : theta0[v];
    if (a.theta.size() != L) throw Error("init_swarm: initial iterate of agent " + std::to_string(v) + " has wrong length");
    a.trace = Vector::Zero(L);
    a.out_avg = a.theta;
    s.agents.push_back(std::move(a));
  }
  s.scratch.assign(num_agents, Vector::Zero(L));
  return s;
}

void step(SwarmState& swarm, const ConsensusMatrix& W, const FeatureMap& fm, const Transition& sample,
          double alpha, double alpha_next, const TdParams& td) {
  const std::size_t N = swarm.num_agents();
  const auto L = static_cast<Eigen::Index>(swarm.num_features());
  if (sample.from != swarm.current_state) throw Error("step: sample does not start at the current state");
  if (sample.rewards.size() != N || W.num_agents() != N) throw Error("step: agent count mismatch");
  if (static_cast<Eigen::Index>(fm.num_features()) != L) throw Error("step: feature dimension mismatch");
  if (swarm.scratch.size() != N) swarm.scratch.assign(N, Vector::Zero(L));

  const auto phi = fm.row(sample.from);
  const auto phi_next = fm.row(sample.to);
  const double decay = td.gamma * td.lambda;

  for (std::size_t v = 0; v < N; ++v) {
    auto& a = swarm.agents[v];
    for (Eigen::Index i = 0; i < L; ++i) a.trace[i] = decay * a.trace[i] + phi[i];
  }

  for (std::size_t v = 0; v < N; ++v) {
    const auto& a = swarm.agents[v];
    Vector& y = swarm.scratch[v];
    for (Eigen::Index i = 0; i < L; ++i) y[i] = 0.0;
    for (std::size_t u = 0; u < N; ++u) {
      const double w = W.W(static_cast<Eigen::Index>(v), static_cast<Eigen::Index>(u));
      if (w == 0.0) continue;
      const Vector& theta_u = swarm.agents[u].theta;
      for (Eigen::Index i = 0; i < L; ++i) y[i] += w * theta_u[i];
    }
    double td_err = 0.0;
    for (Eigen::Index i = 0; i < L; ++i) td_err += (td.gamma * phi_next[i] - phi[i]) * a.theta[i];
    td_err += sample.rewards[v];
    const double scale = alpha * td_err;
    for (Eigen::Index i = 0; i < L; ++i) y[i] += scale * a.trace[i];
  }

  for (std::size_t v = 0; v < N; ++v) {
    auto& a = swarm.agents[v];
    std::swap(a.theta, swarm.scratch[v]);
    double sq = 0.0;
    for (Eigen::Index i = 0; i < L; ++i) sq += a.theta[i] * a.theta[i];
    if (!(std::sqrt(sq) <= kDivergenceNorm)) throw DivergenceError(swarm.k, v);
    const double total = a.stepsum + alpha_next;
    for (Eigen::Index i = 0; i < L; ++i) a.out_avg[i] = (a.stepsum * a.out_avg[i] + alpha_next * a.theta[i]) / total;
    a.stepsum = total;
  }
  ++swarm.k;
  swarm.current_state = sample.to;
}

void step(SwarmState& swarm, const ConsensusMatrix& W, const FeatureMap& fm, const Transition& sample,
          const StepSchedule& schedule, const TdParams& td) {
  step(swarm, W, fm, sample, schedule.at(swarm.k), schedule.at(swarm.k + 1), td);
}

Vector trace_closed_form(const std::vector<std::size_t>& states, double gamma, double lambda,
                         const FeatureMap& fm, std::size_t k) {
  if (k >= states.size()) throw Error("trace_closed_form: history too short");
  const double decay = gamma * lambda;
  Vector z = Vector::Zero(static_cast<Eigen::Index>(fm.num_features()));
  double weight = 1.0;
  for (std::size_t u = k + 1; u-- > 0;) {
    z += weight * fm.row(states[u]).transpose();
    weight *= decay;
    if (weight == 0.0) break;
  }
  return z;
}

Vector NoisyOperators::b_mean() const {
  Vector m = Vector::Zero(A.rows());
  for (const auto& bv : b) m += bv;
  return m / static_cast<double>(b.size());
}

NoisyOperators noisy_operators(const Transition& sample, const Vector& trace, const FeatureMap& fm,
                               double gamma) {
  NoisyOperators op;
  const Vector diff = gamma * fm.row(sample.to).transpose() - fm.row(sample.from).transpose();
  op.A = trace * diff.transpose();
  for (double r : sample.rewards) op.b.push_back(r * trace);
  return op;
}

Trajectory run(const MultiAgentMdp& mdp, const FeatureMap& fm, const ConsensusMatrix& W,
               const StepSchedule& schedule, double lambda, const Vector& theta_star,
               const RunOptions& options) {
  if (options.record_every == 0) throw Error("record_every must be positive");
  if (W.num_agents() != mdp.num_agents()) throw Error("consensus matrix and mdp disagree on the number of agents");
  if (fm.num_states() != mdp.num_states()) throw Error("features and mdp disagree on the number of states");

  Rng rng(options.seed);
  std::size_t start = 0;
  if (options.start_state) {
    start = *options.start_state;
    if (start >= mdp.num_states()) throw Error("start state out of range");
  } else {
    start = sample_from(stationary_distribution(mdp.chain).pi, rng);
  }

  SwarmState swarm = init_swarm(options.theta0, fm.num_features(), mdp.num_agents(), start);
  const TdParams td{mdp.gamma, lambda};

  std::vector<std::size_t> extra = options.extra_records;
  std::sort(extra.begin(), extra.end());
  auto next_extra = extra.begin();

  Trajectory traj;
  auto record = [&] {
    Snapshot s;
    s.k = swarm.k;
    s.theta = swarm.Theta();
    s.mean = swarm.mean_theta();
    s.out_avg = swarm.OutAvg();
    const auto m = error_metrics(s.theta, theta_star);
    s.mse = m.mse;
    s.consensus_error = m.consensus_error;
    s.stepsize = schedule.at(swarm.k);
    traj.snapshots.push_back(std::move(s));
  };
  auto wanted = [&](std::size_t k) {
    while (next_extra != extra.end() && *next_extra < k) ++next_extra;
    const bool hit = next_extra != extra.end() && *next_extra == k;
    return hit || k % options.record_every == 0 || k == options.num_steps;
  };

  if (options.keep_mean_history) {
    traj.mean_history.resize(static_cast<Eigen::Index>(fm.num_features()), static_cast<Eigen::Index>(options.num_steps + 1));
    traj.mean_history.col(0) = swarm.mean_theta();
  }
  record();
  for (std::size_t k = 0; k < options.num_steps; ++k) {
    const Transition t = sample_transition(mdp, swarm.current_state, rng);
    step(swarm, W, fm, t, schedule, td);
    if (options.keep_mean_history) traj.mean_history.col(static_cast<Eigen::Index>(swarm.k)) = swarm.mean_theta();
    if (wanted(swarm.k)) record();
  }
  return traj;
}

std::string trajectory_csv_header(std::size_t num_features) {
  std::string h = "k,agent";
  for (std::size_t i = 0; i < num_features; ++i) h += ",theta_" + std::to_string(i);
  h += ",mse,consensus_error,stepsize";
  return h;
}

void write_trajectory_csv(std::ostream& out, const Trajectory& trajectory) {
  const std::size_t L = trajectory.snapshots.empty() ? 0 : static_cast<std::size_t>(trajectory.snapshots[0].mean.size());
  out << trajectory_csv_header(L) << '\n';
  for (const auto& s : trajectory.snapshots) {
    const std::string tail =
        ',' + format_double(s.mse) + ',' + format_double(s.consensus_error) + ',' + format_double(s.stepsize) + '\n';
    for (Eigen::Index v = 0; v < s.theta.rows(); ++v) {
      out << s.k << ',' << v;
      for (Eigen::Index i = 0; i < s.theta.cols(); ++i) out << ',' << format_double(s.theta(v, i));
      out << tail;
    }
    out << s.k << ",mean";
    for (Eigen::Index i = 0; i < s.mean.size(); ++i) out << ',' << format_double(s.mean[i]);
    out << tail;
  }
}

}  // namespace dtdlab
