#pragma once

#include "dtdlab/common.hpp"
#include "dtdlab/features.hpp"
#include "dtdlab/mdp.hpp"

#include <iosfwd>
#include <vector>

namespace dtdlab {

/// U = (1 - lambda) sum_k lambda^k (gamma P)^{k+1}, evaluated in closed form
/// as (1 - lambda) gamma P (I - lambda gamma P)^{-1}.  Zero at lambda = 1.
Matrix compute_U(const MarkovChain& chain, double gamma, double lambda);

/// A = Phi^T D (U - I) Phi.  Throws InvariantError unless the symmetric part
/// is negative definite.
Matrix compute_A(const FeatureMap& fm, const StationaryDist& d, const Matrix& U);

/// b^v = Phi^T D (I - gamma lambda P)^{-1} r^v.
Vector compute_b(const FeatureMap& fm, const StationaryDist& d, const MarkovChain& chain,
                 const Vector& r_v, double gamma, double lambda);

struct FixedPointSolution {
  Vector theta_star;
  /// Smallest eigenvalue of -(A + A^T)/2; the quadratic-form constant.
  double sigma_min = 0.0;
  /// Smallest singular value of -A, reported alongside.
  double sigma_min_singular = 0.0;
};

/// Solves A theta + b = 0, the stationary point of the expected TD update
/// E[A(X)] theta + E[b(X)] with A and b the limits of the noisy operators.
FixedPointSolution solve_fixed_point(const Matrix& A, const Vector& b);

/// Weights of the D-projection of J: (Phi^T D Phi)^{-1} Phi^T D J.  This is the
/// fixed point at lambda = 1.
Vector best_approximation_weights(const FeatureMap& fm, const StationaryDist& d, const Vector& J);

/// Everything the tests and the bound evaluators need about one
/// (mdp, features, lambda) instance.
struct FixedPointOracle {
  double gamma = 0.0;
  double lambda = 0.0;
  StationaryDist dist;
  Matrix U;
  Matrix A;
  std::vector<Vector> b_v;
  Vector b;
  Vector theta_star;
  double sigma_min = 0.0;
  double sigma_min_singular = 0.0;
  Vector J;  // exact value function
  /// ||A theta* + b||.
  double residual = 0.0;
};

FixedPointOracle build_oracle(const MultiAgentMdp& mdp, const FeatureMap& fm, double lambda);

struct ApproximationQuality {
  double lower = 0.0;   // ||Pi J - J||_D
  double actual = 0.0;  // ||Phi theta* - J||_D
  double upper = 0.0;   // (1 - gamma lambda)/(1 - gamma) ||Pi J - J||_D
};

/// Evaluates the approximation sandwich; throws InvariantError if it fails by
/// more than 1e-9.
ApproximationQuality approximation_quality(const FixedPointOracle& oracle, const Vector& J,
                                           const FeatureMap& fm, const StationaryDist& d);

struct NormBoundReport {
  double a_norm = 0.0;
  double a_bound = 0.0;
  double b_norm = 0.0;
  double b_bound = 0.0;
  bool ok() const { return a_norm <= a_bound && b_norm <= b_bound; }
};

/// ||A||_2 <= (1+gamma)/(1-gamma lambda) and ||b|| <= R/(1-gamma lambda).
/// Throws InvariantError on violation.
NormBoundReport norm_bound_check(const FixedPointOracle& oracle, double gamma, double lambda, double R);

/// Human readable dump of the oracle (A, b, theta*, sigma_min, diagnostics).
void write_oracle(std::ostream& out, const FixedPointOracle& oracle);

}  // namespace dtdlab
