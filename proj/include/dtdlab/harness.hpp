#pragma once

#include "dtdlab/analysis.hpp"
#include "dtdlab/dtd.hpp"
#include "dtdlab/exact.hpp"
#include "dtdlab/features.hpp"
#include "dtdlab/mdp.hpp"
#include "dtdlab/network.hpp"

#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace dtdlab {

// Experiment configuration, read from JSON.  See README.md for the schema.

struct MdpSource {
  std::optional<std::string> file;
  RandomMdpSpec random;
};

struct FeatureSpec {
  enum class Kind { aggregation, gaussian, identity, file };
  Kind kind = Kind::aggregation;
  std::size_t count = 4;
  std::uint64_t seed = 0;
  std::string file;
};

struct GraphSpec {
  std::optional<std::string> file;
  GraphKind kind = GraphKind::ring;
  std::size_t agents = 0;  // 0: take the MDP's agent count
  double p = 0.5;
  std::uint64_t seed = 0;
  std::optional<std::string> weights_file;
};

struct ScheduleSpec {
  enum class Kind { constant, diminishing };
  Kind kind = Kind::constant;
  /// Constant step; empty means the largest grid value passing the
  /// step-size conditions.  For diminishing steps this is the reference
  /// alpha that fixes delta.
  std::optional<double> alpha;
  /// Empty means 1 / sigma_min.
  std::optional<double> alpha0;
};

struct RunConfig {
  MdpSource mdp;
  FeatureSpec features;
  GraphSpec graph;
  ScheduleSpec schedule;
  std::vector<double> lambdas{0.5};
  std::size_t num_steps = 200000;
  std::size_t record_every = 1000;
  std::vector<std::size_t> extra_records;
  std::size_t num_seeds = 20;
  std::uint64_t base_seed = 1;
  /// Standard deviation of Gaussian initial iterates; 0 starts at zero.
  double theta0_scale = 0.0;
  std::optional<std::size_t> start_state;
  Psi2Form psi2_form = Psi2Form::derivation;
  std::size_t threads = 0;  // 0: hardware concurrency
  std::string out_dir;      // empty: do not write files
  bool write_seed_csv = true;
};

/// Parses a JSON document.  `base_dir` resolves relative file paths.
RunConfig parse_config(const std::string& text, const std::string& base_dir = ".");
RunConfig load_config(const std::string& path);

struct Instance {
  MultiAgentMdp mdp;
  FeatureMap fm;
  CommGraph graph;
  ConsensusMatrix W;
};

Instance build_instance(const RunConfig& cfg);

/// Seed-averaged curve point.
struct MeanPoint {
  std::size_t k = 0;
  double mse = 0.0;
  double mse_se = 0.0;
  double consensus_error = 0.0;
  double stepsize = 0.0;
  Vector mean_theta;  // seed average of theta bar
};

struct LambdaResult {
  double lambda = 0.0;
  FixedPointOracle oracle;
  ApproximationQuality quality;
  NormBoundReport norms;
  MixingModel model;
  double sigma2 = 0.0;
  StepSchedule schedule = StepSchedule::constant(1.0);
  BoundInputs inputs;
  StepsizeVerdict verdict;
  std::optional<KStarResult> kstar;  // diminishing schedule only
  std::vector<Trajectory> runs;
  std::vector<MeanPoint> curve;
  BoundReport report;
  /// Mean of the seed-averaged MSE over the last 10% of the run.
  double plateau = 0.0;
  double plateau_se = 0.0;
  /// Theorem-level failures (exit status).
  std::vector<std::string> failures;
  /// Statistical or advisory notes (do not affect exit status).
  std::vector<std::string> notes;
};

struct ExperimentResult {
  std::vector<LambdaResult> per_lambda;
  bool ok() const;
};

/// Runs every (lambda, seed) pair, evaluates all bounds and, when
/// `cfg.out_dir` is set, writes per-lambda trajectories, the seed-averaged
/// curve, the bound report, the oracle dump and summary.txt.
ExperimentResult run_experiment(const RunConfig& cfg);

struct ScheduleComparison {
  double lambda = 0.0;
  double alpha = 0.0;
  double alpha0 = 0.0;
  std::vector<std::size_t> ks;
  std::vector<double> mse_constant;
  std::vector<double> mse_diminishing;
  bool constant_plateaus = false;
  bool diminishing_decreasing = false;
};

/// Runs the constant and diminishing schedules on the same seeds and
/// tabulates seed-averaged MSE at log-spaced k.
std::vector<ScheduleComparison> compare_schedules(const RunConfig& cfg);
void write_comparison_csv(std::ostream& out, const ScheduleComparison& c);

/// One line per step of the tau(alpha) table for the chain: alpha, TV tau,
/// model tau.
void write_mixing_table(std::ostream& out, const MarkovChain& chain, const std::vector<double>& alphas);

void write_summary(std::ostream& out, const RunConfig& cfg, const ExperimentResult& result);

/// Runs fn(0) .. fn(n-1) on up to `threads` workers.  The first exception is
/// rethrown after all workers stop.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

}  // namespace dtdlab
