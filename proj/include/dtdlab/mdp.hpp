#pragma once

#include "dtdlab/common.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace dtdlab {

/// Finite Markov chain given by a dense row-stochastic transition matrix.
struct MarkovChain {
  Matrix P;

  std::size_t num_states() const { return static_cast<std::size_t>(P.rows()); }
};

/// A fixed-policy multi-agent MDP: one shared state chain, one reward table per
/// agent.  `rewards[v](i, j)` is the reward agent v receives on the i -> j
/// transition.
struct MultiAgentMdp {
  MarkovChain chain;
  std::vector<Matrix> rewards;
  double gamma = 0.0;
  double reward_bound = 0.0;

  std::size_t num_states() const { return chain.num_states(); }
  std::size_t num_agents() const { return rewards.size(); }

  /// Reward averaged over agents, entry (i, j).
  Matrix mean_reward() const;

  /// Checks shapes, gamma in [0, 1) and |reward| <= reward_bound.
  Validation validate() const;
};

struct StationaryDist {
  Vector pi;

  Matrix D() const { return pi.asDiagonal(); }
};

/// Stochasticity, irreducibility and aperiodicity.
Validation validate_chain(const MarkovChain& chain);

/// Period of an irreducible chain (gcd of cycle lengths through state 0).
std::size_t chain_period(const MarkovChain& chain);

StationaryDist stationary_distribution(const MarkovChain& chain);

/// r^v(i) = sum_j p_ij R^v(i, j).
Vector expected_reward_vector(const MultiAgentMdp& mdp, std::size_t agent);

/// Network-average expected reward, (1/N) sum_v r^v.
Vector mean_expected_reward(const MultiAgentMdp& mdp);

/// Exact value of the network-average reward: (I - gamma P)^{-1} rbar.
Vector true_value(const MultiAgentMdp& mdp);

struct Transition {
  std::size_t from = 0;
  std::size_t to = 0;
  std::vector<double> rewards;  // one per agent
};

/// Draws the next state by inverse-CDF on row `state`.
std::size_t sample_next_state(const MarkovChain& chain, std::size_t state, Rng& rng);

Transition sample_transition(const MultiAgentMdp& mdp, std::size_t state, Rng& rng);

/// Draws a state from a distribution vector.
std::size_t sample_from(const Vector& probabilities, Rng& rng);

struct RandomMdpSpec {
  std::size_t num_states = 10;
  std::size_t num_agents = 4;
  std::size_t branching = 10;
  double reward_bound = 1.0;
  double gamma = 0.9;
  std::uint64_t seed = 0;
};

/// Garnet-style generator.  Each row gets `branching` random successors with
/// normalized uniform weights, plus self-loop mass 0.01 before renormalizing.
/// Reducible draws are retried with seed + 1 (at most 100 attempts).
MultiAgentMdp random_mdp(const RandomMdpSpec& spec);

// Text serialization.  Layout:
//
//   dtdlab-mdp 1
//   states <S>
//   agents <N>
//   gamma <g>
//   reward_bound <R>
//   transitions
//   <S rows of S numbers>
//   rewards <v>            (repeated for v = 0 .. N-1)
//   <S rows of S numbers>
//
// Numbers are written with 17 significant digits so a round trip is exact.
// Blank lines and lines starting with '#' are ignored.
void write_mdp(std::ostream& out, const MultiAgentMdp& mdp);
MultiAgentMdp read_mdp(std::istream& in);
void save_mdp(const std::string& path, const MultiAgentMdp& mdp);
MultiAgentMdp load_mdp(const std::string& path);

}  // namespace dtdlab
