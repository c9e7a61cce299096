#pragma once

#include "dtdlab/common.hpp"
#include "dtdlab/features.hpp"
#include "dtdlab/mdp.hpp"
#include "dtdlab/network.hpp"

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace dtdlab {

struct AgentState {
  Vector theta;    // current iterate
  Vector trace;    // eligibility trace z
  Vector out_avg;  // step-size weighted running average of the iterates
  double stepsum = 0.0;
};

struct SwarmState {
  std::vector<AgentState> agents;
  std::size_t k = 0;
  std::size_t current_state = 0;

  std::size_t num_agents() const { return agents.size(); }
  std::size_t num_features() const;

  /// N x L matrix whose row v is agent v's iterate.
  Matrix Theta() const;
  Vector mean_theta() const;
  /// N x L matrix of the output averages.
  Matrix OutAvg() const;

  // Scratch space for the consensus step; not part of the logical state.
  std::vector<Vector> scratch;
};

class StepSchedule {
public:
  enum class Kind { constant, diminishing };

  static StepSchedule constant(double alpha);
  /// alpha_k = alpha0 / (k + 1).
  static StepSchedule diminishing(double alpha0);

  Kind kind() const { return kind_; }
  /// alpha for constant, alpha0 for diminishing.
  double base() const { return value_; }
  double at(std::size_t k) const {
    return kind_ == Kind::constant ? value_ : value_ / (static_cast<double>(k) + 1.0);
  }

private:
  StepSchedule(Kind kind, double value) : kind_(kind), value_(value) {}
  Kind kind_;
  double value_;
};

/// TD discounting.
struct TdParams {
  double gamma = 0.0;
  double lambda = 0.0;
};

/// Raised by `step` when an iterate blows up; carries the iteration index.
class DivergenceError : public Error {
public:
  DivergenceError(std::size_t k, std::size_t agent);
  std::size_t iteration() const { return k_; }

private:
  std::size_t k_;
};

/// Zero traces, out_avg = theta0, stepsum = 0, k = 0.
SwarmState init_swarm(const std::vector<Vector>& theta0, std::size_t num_features,
                      std::size_t num_agents, std::size_t start_state = 0);

/// One iteration of distributed TD(lambda) on transition s_k -> s_{k+1}.
/// The trace is advanced with phi(s_k) first, then every agent mixes its
/// neighbours' iterates through W and takes a local TD step using its own
/// pre-mixing iterate in the TD error.  `alpha_next` (alpha_{k+1}) weights
/// the new iterate in the output average.
void step(SwarmState& swarm, const ConsensusMatrix& W, const FeatureMap& fm, const Transition& sample,
          double alpha, double alpha_next, const TdParams& td);

/// Convenience overload reading both step sizes from the schedule.
void step(SwarmState& swarm, const ConsensusMatrix& W, const FeatureMap& fm, const Transition& sample,
          const StepSchedule& schedule, const TdParams& td);

/// sum_{u=0}^{k} (gamma lambda)^{k-u} phi(s_u).
Vector trace_closed_form(const std::vector<std::size_t>& states, double gamma, double lambda,
                         const FeatureMap& fm, std::size_t k);

struct NoisyOperators {
  Matrix A;               // z (gamma phi(s') - phi(s))^T
  std::vector<Vector> b;  // r^v z, one per agent
  /// Network average of b.
  Vector b_mean() const;
};

NoisyOperators noisy_operators(const Transition& sample, const Vector& trace, const FeatureMap& fm,
                               double gamma);

struct Snapshot {
  std::size_t k = 0;
  Matrix theta;    // N x L
  Vector mean;     // theta bar
  Matrix out_avg;  // N x L
  double mse = 0.0;               // (1/N) sum_v ||theta^v - theta*||^2
  double consensus_error = 0.0;   // ||Theta - 1 theta bar^T||_F
  double stepsize = 0.0;          // alpha_k
};

struct RunOptions {
  std::size_t num_steps = 0;
  std::size_t record_every = 1;
  std::uint64_t seed = 0;
  /// Fixed start state; drawn from pi when empty.
  std::optional<std::size_t> start_state;
  /// Initial iterates; zeros when empty.
  std::vector<Vector> theta0;
  /// Extra iterations to record besides the regular grid.
  std::vector<std::size_t> extra_records;
  /// Keep theta bar for every k in Trajectory::mean_history.
  bool keep_mean_history = false;
};

struct Trajectory {
  std::vector<Snapshot> snapshots;
  Matrix mean_history;  // column k is theta bar_k, k = 0 .. num_steps, if requested
};

/// Simulates Algorithm 1 for `num_steps` iterations.  Snapshots are taken at
/// k = 0, every `record_every` iterations, at the requested extra indices and
/// at the final iteration.  Deterministic given the seed.
Trajectory run(const MultiAgentMdp& mdp, const FeatureMap& fm, const ConsensusMatrix& W,
               const StepSchedule& schedule, double lambda, const Vector& theta_star,
               const RunOptions& options);

/// CSV with header `k,agent,theta_0..theta_{L-1},mse,consensus_error,stepsize`.
/// One row per agent plus a "mean" row per snapshot.
void write_trajectory_csv(std::ostream& out, const Trajectory& trajectory);
std::string trajectory_csv_header(std::size_t num_features);

}  // namespace dtdlab
