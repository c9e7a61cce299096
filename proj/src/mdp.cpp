#include "dtdlab/mdp.hpp"

#include "dtdlab/io.hpp"

#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <queue>

namespace dtdlab {
namespace {

constexpr double kRowSumTol = 1e-12;
constexpr double kStationaryTol = 1e-10;

// Breadth-first levels from state 0 over positive entries; -1 when unreachable.
std::vector<long> bfs_levels(const Matrix& P, bool transpose) {
  const auto n = P.rows();
  std::vector<long> level(static_cast<std::size_t>(n), -1);
  std::queue<Eigen::Index> frontier;
  level[0] = 0;
  frontier.push(0);
  while (!frontier.empty()) {
    const auto u = frontier.front();
    frontier.pop();
    for (Eigen::Index v = 0; v < n; ++v) {
      const double w = transpose ? P(v, u) : P(u, v);
      if (w > 0.0 && level[static_cast<std::size_t>(v)] < 0) {
        level[static_cast<std::size_t>(v)] = level[static_cast<std::size_t>(u)] + 1;
        frontier.push(v);
      }
    }
  }
  return level;
}

double stationary_residual(const Matrix& P, const Vector& pi) {
  return (P.transpose() * pi - pi).cwiseAbs().maxCoeff();
}

}  // namespace

Matrix MultiAgentMdp::mean_reward() const {
  Matrix mean = Matrix::Zero(chain.P.rows(), chain.P.cols());
  for (const auto& r : rewards) mean += r;
  return mean / static_cast<double>(rewards.size());
}

Validation MultiAgentMdp::validate() const {
  if (chain.P.rows() == 0 || chain.P.rows() != chain.P.cols())
    return Validation::fail("transition matrix must be square and nonempty");
  if (rewards.empty()) return Validation::fail("at least one agent is required");
  if (!(gamma >= 0.0 && gamma < 1.0)) return Validation::fail("gamma must lie in [0, 1)");
  for (std::size_t v = 0; v < rewards.size(); ++v) {
    if (rewards[v].rows() != chain.P.rows() || rewards[v].cols() != chain.P.cols())
      return Validation::fail("reward table shape mismatch", v);
    if (rewards[v].cwiseAbs().maxCoeff() > reward_bound)
      return Validation::fail("reward exceeds reward_bound", v);
  }
  return Validation::pass();
}

std::size_t chain_period(const MarkovChain& chain) {
  const Matrix& P = chain.P;
  const auto level = bfs_levels(P, false);
  long g = 0;
  for (Eigen::Index u = 0; u < P.rows(); ++u) {
    for (Eigen::Index v = 0; v < P.cols(); ++v) {
      if (P(u, v) <= 0.0) continue;
      const long lu = level[static_cast<std::size_t>(u)];
      const long lv = level[static_cast<std::size_t>(v)];
      if (lu < 0 || lv < 0) continue;
      g = std::gcd(g, std::labs(lu + 1 - lv));
    }
  }
  return static_cast<std::size_t>(g);
}

Validation validate_chain(const MarkovChain& chain) {
  const Matrix& P = chain.P;
  if (P.rows() == 0 || P.rows() != P.cols()) return Validation::fail("not a nonempty square matrix");
  for (Eigen::Index i = 0; i < P.rows(); ++i) {
    for (Eigen::Index j = 0; j < P.cols(); ++j) {
      const double p = P(i, j);
      if (!(p >= 0.0 && p <= 1.0)) return Validation::fail("entry outside [0,1]", static_cast<std::size_t>(i));
    }
    if (std::abs(P.row(i).sum() - 1.0) > kRowSumTol)
      return Validation::fail("row does not sum to 1", static_cast<std::size_t>(i));
  }
  const auto forward = bfs_levels(P, false);
  const auto backward = bfs_levels(P, true);
  for (std::size_t s = 0; s < forward.size(); ++s) {
    if (forward[s] < 0 || backward[s] < 0) return Validation::fail("reducible", s);
  }
  const std::size_t period = chain_period(chain);
  if (period != 1) return Validation::fail("periodic (period " + std::to_string(period) + ")");
  return Validation::pass();
}

StationaryDist stationary_distribution(const MarkovChain& chain) {
  const Matrix& P = chain.P;
  const auto n = P.rows();
  Matrix system(n + 1, n);
  system.topRows(n) = P.transpose() - Matrix::Identity(n, n);
  system.row(n).setOnes();
  Vector rhs = Vector::Zero(n + 1);
  rhs(n) = 1.0;
  Vector pi = system.colPivHouseholderQr().solve(rhs);
  if (pi.allFinite() && pi.minCoeff() > 0.0) {
    pi /= pi.sum();
    if (stationary_residual(P, pi) <= kStationaryTol) return {pi};
  }

  // Fallback: power iteration from the uniform distribution.
  pi = Vector::Constant(n, 1.0 / static_cast<double>(n));
  double residual = 0.0;
  for (int it = 0; it < 1'000'000; ++it) {
    Vector next = P.transpose() * pi;
    next /= next.sum();
    residual = (next - pi).cwiseAbs().maxCoeff();
    pi = std::move(next);
    if (residual < 1e-15) break;
  }
  residual = stationary_residual(P, pi);
  if (residual > kStationaryTol || pi.minCoeff() <= 0.0)
    throw Error("stationary distribution did not converge (residual " + format_double(residual) + ")");
  return {pi};
}

Vector expected_reward_vector(const MultiAgentMdp& mdp, std::size_t agent) {
  if (agent >= mdp.num_agents()) throw Error("agent index out of range");
  return mdp.chain.P.cwiseProduct(mdp.rewards[agent]).rowwise().sum();
}

Vector mean_expected_reward(const MultiAgentMdp& mdp) {
  Vector r = Vector::Zero(mdp.chain.P.rows());
  for (std::size_t v = 0; v < mdp.num_agents(); ++v) r += expected_reward_vector(mdp, v);
  return r / static_cast<double>(mdp.num_agents());
}

Vector true_value(const MultiAgentMdp& mdp) {
  const Matrix& P = mdp.chain.P;
  const auto n = P.rows();
  const Vector rbar = mean_expected_reward(mdp);
  const Matrix system = Matrix::Identity(n, n) - mdp.gamma * P;
  Vector J = system.partialPivLu().solve(rbar);
  const double residual = (J - rbar - mdp.gamma * P * J).cwiseAbs().maxCoeff();
  if (!J.allFinite() || residual > 1e-10)
    throw InvariantError("Bellman solve failed (residual " + format_double(residual) + ")");
  return J;
}

std::size_t sample_next_state(const MarkovChain& chain, std::size_t state, Rng& rng) {
  const auto row = chain.P.row(static_cast<Eigen::Index>(state));
  const double u = rng.uniform();
  double acc = 0.0;
  std::size_t last_positive = 0;
  for (Eigen::Index j = 0; j < row.size(); ++j) {
    if (row(j) <= 0.0) continue;
    acc += row(j);
    last_positive = static_cast<std::size_t>(j);
    if (u < acc) return last_positive;
  }
  return last_positive;
}

std::size_t sample_from(const Vector& probabilities, Rng& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  std::size_t last_positive = 0;
  for (Eigen::Index j = 0; j < probabilities.size(); ++j) {
    if (probabilities(j) <= 0.0) continue;
    acc += probabilities(j);
    last_positive = static_cast<std::size_t>(j);
    if (u < acc) return last_positive;
  }
  return last_positive;
}

Transition sample_transition(const MultiAgentMdp& mdp, std::size_t state, Rng& rng) {
  Transition t;
  t.from = state;
  t.to = sample_next_state(mdp.chain, state, rng);
  t.rewards.resize(mdp.num_agents());
  const auto i = static_cast<Eigen::Index>(t.from);
  const auto j = static_cast<Eigen::Index>(t.to);
  for (std::size_t v = 0; v < mdp.num_agents(); ++v) t.rewards[v] = mdp.rewards[v](i, j);
  return t;
}

MultiAgentMdp random_mdp(const RandomMdpSpec& spec) {
  const std::size_t S = spec.num_states;
  if (S == 0 || spec.num_agents == 0) throw Error("random_mdp: need at least one state and one agent");
  if (spec.branching == 0 || spec.branching > S) throw Error("random_mdp: branching must lie in [1, states]");
  if (!(spec.gamma >= 0.0 && spec.gamma < 1.0)) throw Error("random_mdp: gamma must lie in [0, 1)");
  constexpr double kSelfLoop = 0.01;
  constexpr int kAttempts = 100;
  const auto n = static_cast<Eigen::Index>(S);

  for (int attempt = 0; attempt < kAttempts; ++attempt) {
    Rng rng(spec.seed + static_cast<std::uint64_t>(attempt));
    MultiAgentMdp mdp;
    mdp.gamma = spec.gamma;
    mdp.reward_bound = spec.reward_bound;
    mdp.chain.P = Matrix::Zero(n, n);
    std::vector<std::size_t> order(S);
    for (Eigen::Index i = 0; i < n; ++i) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      // Partial Fisher-Yates picks `branching` distinct successors.
      for (std::size_t k = 0; k < spec.branching; ++k) {
        const auto pick = k + static_cast<std::size_t>(rng.uniform() * static_cast<double>(S - k));
        std::swap(order[k], order[std::min(pick, S - 1)]);
      }
      double total = 0.0;
      for (std::size_t k = 0; k < spec.branching; ++k) {
        const double w = rng.uniform() + 1e-12;
        mdp.chain.P(i, static_cast<Eigen::Index>(order[k])) = w;
        total += w;
      }
      mdp.chain.P.row(i) /= total;
      mdp.chain.P(i, i) += kSelfLoop;
      mdp.chain.P.row(i) /= mdp.chain.P.row(i).sum();
    }
    mdp.rewards.assign(spec.num_agents, Matrix(n, n));
    for (auto& table : mdp.rewards)
      for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j)
          table(i, j) = spec.reward_bound * (2.0 * rng.uniform() - 1.0);
    if (validate_chain(mdp.chain)) return mdp;
  }
  throw Error("random_mdp: no irreducible chain after 100 attempts");
}

void write_mdp(std::ostream& out, const MultiAgentMdp& mdp) {
  out << "dtdlab-mdp 1\n";
  out << "states " << mdp.num_states() << '\n';
  out << "agents " << mdp.num_agents() << '\n';
  out << "gamma " << format_double(mdp.gamma) << '\n';
  out << "reward_bound " << format_double(mdp.reward_bound) << '\n';
  out << "transitions\n";
  write_dense(out, mdp.chain.P);
  for (std::size_t v = 0; v < mdp.num_agents(); ++v) {
    out << "rewards " << v << '\n';
    write_dense(out, mdp.rewards[v]);
  }
}

MultiAgentMdp read_mdp(std::istream& in) {
  TokenReader reader(in);
  reader.expect("dtdlab-mdp");
  if (reader.count() != 1) reader.fail("unsupported mdp format version");
  MultiAgentMdp mdp;
  reader.expect("states");
  const std::size_t S = reader.count();
  reader.expect("agents");
  const std::size_t N = reader.count();
  reader.expect("gamma");
  mdp.gamma = reader.number();
  reader.expect("reward_bound");
  mdp.reward_bound = reader.number();
  reader.expect("transitions");
  mdp.chain.P = read_dense(reader, S, S);
  for (std::size_t v = 0; v < N; ++v) {
    reader.expect("rewards");
    if (reader.count() != v) reader.fail("reward blocks must appear in agent order");
    mdp.rewards.push_back(read_dense(reader, S, S));
  }
  if (!reader.at_end()) reader.fail("trailing content after last reward block");
  if (auto check = mdp.validate(); !check) throw ParseError(check.describe(), reader.line());
  if (auto check = validate_chain(mdp.chain); !check) throw ParseError("transitions: " + check.describe(), reader.line());
  return mdp;
}

void save_mdp(const std::string& path, const MultiAgentMdp& mdp) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open " + path + " for writing");
  write_mdp(out, mdp);
}

MultiAgentMdp load_mdp(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  try {
    return read_mdp(in);
  } catch (const ParseError& e) {
    throw Error(path + ": " + e.what());
  }
}

}  // namespace dtdlab
