#pragma once

#include "dtdlab/common.hpp"
#include "dtdlab/exact.hpp"
#include "dtdlab/features.hpp"
#include "dtdlab/mdp.hpp"

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

namespace dtdlab {

// ---------------------------------------------------------------- metrics

struct ErrorMetrics {
  double mse = 0.0;              // (1/N) sum_v ||theta^v - theta*||^2
  double consensus_error = 0.0;  // ||Theta - 1 theta bar^T||_F
};

/// `Theta` is N x L, one agent per row.
ErrorMetrics error_metrics(const Matrix& Theta, const Vector& theta_star);

// ----------------------------------------------------------------- mixing

enum class MixingMethod { tv_state_chain, mc_definition };

struct MixingEstimate {
  double alpha = 0.0;
  std::size_t tau = 0;
  double C = 0.0;
  MixingMethod method = MixingMethod::tv_state_chain;
};

/// d(k) = max_i 1/2 sum_j |P^k(i, j) - pi(j)| for k = 0 .. max_k.
std::vector<double> tv_diagnostic(const MarkovChain& chain, const Vector& pi, std::size_t max_k);

/// Geometric constant C with log d(k) ~ -k / C, fitted by least squares
/// through the origin over k >= 1 while d(k) > 1e-10.  Zero when the chain
/// mixes exactly in one step.
double fit_mixing_constant(const MarkovChain& chain, const Vector& pi);

/// tau = min{k : d(k) <= alpha}.  Throws past k = 10^6.
std::size_t tv_mixing_steps(const MarkovChain& chain, const Vector& pi, double alpha);

/// tv_mixing_steps plus the fitted C.
MixingEstimate tv_mixing_time(const MarkovChain& chain, const Vector& pi, double alpha);

/// tau(alpha) = ceil(C log(1/alpha)), clamped at zero.
struct MixingModel {
  double C = 0.0;
  std::size_t tau(double alpha) const;
};

struct MixingCheck {
  bool passed = true;
  std::size_t pairs = 0;
  double max_dev_A = 0.0;
  double max_dev_b = 0.0;
  // The initial pair with the smallest margin alpha + 3 SE - deviation.
  std::size_t worst_from = 0;
  std::size_t worst_to = 0;
  double worst_margin = 0.0;
};

/// Monte-Carlo test of the mixing-time definition on the augmented chain
/// X_k = (s_k, s_{k+1}, z_k).  For every initial pair (s0, s1) with positive
/// probability, z0 is built from a stationary warm-up long enough for the
/// trace to forget its start, and E[A(X_k)], E[bbar(X_k)] at k = `tau` are
/// estimated from `num_mc` rollouts.  Passes when both spectral deviations
/// stay within alpha + 3 standard errors for every pair.
MixingCheck mc_mixing_check(const MultiAgentMdp& mdp, const FeatureMap& fm, const FixedPointOracle& oracle,
                            double alpha, std::size_t tau, std::size_t num_mc, std::uint64_t seed);

// -------------------------------------------------------------- constants

/// sigma2 + (1 + gamma)/(1 - gamma lambda) alpha.  Throws if >= 1.
double delta(double sigma2, double alpha, double gamma, double lambda);

/// The Psi_2 bracket carries a factor 2 in the derivation and none in the
/// stated constant.
enum class Psi2Form { derivation, statement };

struct BoundInputs {
  double gamma = 0.0;
  double lambda = 0.0;
  double R = 0.0;
  double sigma2 = 0.0;
  double sigma_min = 0.0;
  double theta_star_norm = 0.0;
  /// Constant step; for the diminishing schedule, the reference alpha that
  /// fixes delta.
  double alpha = 0.0;
  double alpha0 = 0.0;
  std::size_t tau = 0;
  double C = 0.0;
  std::size_t num_agents = 1;
  // Initial-condition magnitudes, taken at k = 0 for constant steps and at
  // k = K* for diminishing steps.
  double init_Theta_sq = 0.0;     // E ||Theta||^2
  double init_Theta_norm = 0.0;   // ||Theta - 1 theta bar^T|| on one path
  double init_mean_err_sq = 0.0;  // E ||theta bar - theta*||^2
  std::size_t kstar = 0;
  Psi2Form psi2_form = Psi2Form::derivation;
};

struct PsiConstants {
  double first = 0.0;   // Psi_1 or Psi_3
  double second = 0.0;  // Psi_2 or Psi_4
};

/// Psi_1, Psi_2 (with tau).
PsiConstants psi_constant_step(const BoundInputs& in);
/// Psi_3, Psi_4 (without tau).
PsiConstants psi_diminishing_step(const BoundInputs& in);

struct StepsizeVerdict {
  double alpha = 0.0;
  std::size_t tau = 0;
  double bounds[3] = {0.0, 0.0, 0.0};
  bool pass[3] = {false, false, false};

  bool ok() const { return pass[0] && pass[1] && pass[2]; }
  /// 1-based id of the first failing clause, 0 when all pass.
  int failed_clause() const;
  std::string describe() const;
};

/// alpha < min{(1-gl)(1-sigma2)/(1+g), (1-gl) log 2 / ((1+g) tau), sigma_min / Psi_1}.
StepsizeVerdict constant_stepsize_conditions(const BoundInputs& in);

using TauFunction = std::function<std::size_t(double)>;

/// Largest alpha on the grid alpha_top * ratio^j (j >= 1, alpha_top the first
/// clause bound) that passes all clauses with tau = tau_of(alpha).  Returns
/// the verdict for the chosen alpha.
StepsizeVerdict auto_constant_step(BoundInputs in, const TauFunction& tau_of, double ratio = 0.95);

struct KStarResult {
  std::size_t kstar = 0;
  double delta = 0.0;
  double clause2_bound = 0.0;
};

/// Smallest K* such that for all k >= K*: alpha_k <= alpha and
/// tau(alpha_k) alpha_{k - tau(alpha_k)} <= min{(1-gl) log 2/(1+g), sigma_min/Psi_3}.
/// The scan stops once it is past the maximum of the decaying second clause
/// and at least four times beyond the last violation.
KStarResult find_kstar(const BoundInputs& in, const TauFunction& tau_of,
                       std::size_t cap = 2'000'000'000);

// ----------------------------------------------------------------- bounds

/// 4R^2 alpha^2 / ((1 - gamma lambda)^2 (1 - delta)^2).
double variance_floor(double R, double alpha, double gamma, double lambda, double delta);

/// Finite-time bound for constant steps; requires k >= tau and the step-size
/// conditions.
double theorem1_rhs(const BoundInputs& in, std::size_t k);
/// Its k -> infinity limit.
double theorem1_limit(const BoundInputs& in);

/// Finite-time bound for alpha_k = alpha0/(k+1); requires k >= K* and
/// alpha0 >= 1/sigma_min.
double theorem2_rhs(const BoundInputs& in, std::size_t k);

/// delta^k ||Theta_0 - 1 theta bar_0^T|| + sqrt(N) R alpha / ((1 - gamma lambda)(1 - delta)).
double consensus_bound_constant(const BoundInputs& in, std::size_t k);
/// Three-term variant for diminishing steps, valid for k >= K*.
double consensus_bound_diminishing(const BoundInputs& in, std::size_t k);

struct DriftRow {
  std::size_t k = 0;
  double lhs = 0.0;      // ||theta bar_k - theta bar_{k - tau}||
  double rhs1 = 0.0;     // in terms of ||theta bar_{k - tau}||
  double rhs2 = 0.0;     // in terms of ||theta bar_k||
  double lhs_sq = 0.0;
  double rhs3 = 0.0;     // squared form
  double rhs3_loose = 0.0;  // 8 ||theta bar_k||^2 + 8 R^2
  bool ok = true;
};

/// Checks the three drift inequalities over a tau-window at every k in `ks`
/// with k >= tau.  Column k of `mean_history` is theta bar_k.  Requires
/// alpha tau <= (1 - gamma lambda) log 2 / (1 + gamma).
std::vector<DriftRow> drift_monitor(const Matrix& mean_history, const std::vector<std::size_t>& ks,
                                    std::size_t tau, double gamma, double lambda, double R, double alpha);

/// True when alpha tau <= (1 - gamma lambda) log 2 / (1 + gamma).
bool drift_precondition(std::size_t tau, double gamma, double lambda, double alpha);

// ----------------------------------------------------------------- report

struct BoundRow {
  std::size_t k = 0;
  double mse = 0.0;      // seed average
  double mse_se = 0.0;   // standard error over seeds
  double theorem_rhs = 0.0;  // NaN outside the validity range
  double consensus_error = 0.0;  // seed average
  double consensus_worst_ratio = 0.0;  // max over seeds of error / consensus bound
  double consensus_rhs = 0.0;       // NaN outside the validity range; seed average otherwise
  double drift_lhs = 0.0;        // max over seeds, NaN when unchecked
  double drift_rhs = 0.0;        // Ineq1 right-hand side at the worst seed
  bool mse_ok = true;
  bool consensus_ok = true;
  bool drift_ok = true;
};

struct BoundReport {
  std::vector<BoundRow> rows;
  bool dominated = true;      // theorem bound holds at every valid k (with 5% slack)
  bool consensus_ok = true;   // consensus bound holds pathwise on every seed
  bool drift_checked = false;
  bool drift_ok = true;
};

/// Domination with the 5% statistical slack on the empirical side.
bool dominated(double empirical, double rhs);

void write_bound_report_csv(std::ostream& out, const BoundReport& report);

}  // namespace dtdlab
