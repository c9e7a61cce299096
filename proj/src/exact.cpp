#include "dtdlab/exact.hpp"

#include "dtdlab/io.hpp"

#include <cmath>
#include <ostream>

namespace dtdlab {
namespace {

void require_discount(double gamma, double lambda) {
  if (!(gamma >= 0.0 && gamma < 1.0)) throw Error("gamma must lie in [0, 1)");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw Error("lambda must lie in [0, 1]");
}

double symmetric_min_eigen(const Matrix& M) {
  const Matrix sym = 0.5 * (M + M.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> eig(sym, Eigen::EigenvaluesOnly);
  return eig.eigenvalues()(0);
}

}  // namespace

Matrix compute_U(const MarkovChain& chain, double gamma, double lambda) {
  require_discount(gamma, lambda);
  const auto n = chain.P.rows();
  const Matrix resolvent = (Matrix::Identity(n, n) - lambda * gamma * chain.P).partialPivLu().inverse();
  return (1.0 - lambda) * gamma * chain.P * resolvent;
}

Matrix compute_A(const FeatureMap& fm, const StationaryDist& d, const Matrix& U) {
  const Matrix& phi = fm.Phi();
  const auto n = phi.rows();
  if (U.rows() != n || d.pi.size() != n) throw Error("compute_A: dimension mismatch");
  Matrix A = phi.transpose() * d.pi.asDiagonal() * (U - Matrix::Identity(n, n)) * phi;
  // Largest eigenvalue of the symmetric part must be negative.
  const double top = -symmetric_min_eigen(-A);
  if (!(top < 0.0)) throw InvariantError("compute_A: not negative definite (top eigenvalue " + format_double(top) + ")");
  return A;
}

Vector compute_b(const FeatureMap& fm, const StationaryDist& d, const MarkovChain& chain,
                 const Vector& r_v, double gamma, double lambda) {
  require_discount(gamma, lambda);
  const auto n = chain.P.rows();
  if (r_v.size() != n || fm.Phi().rows() != n) throw Error("compute_b: dimension mismatch");
  const Vector discounted = (Matrix::Identity(n, n) - gamma * lambda * chain.P).partialPivLu().solve(r_v);
  return fm.Phi().transpose() * d.pi.asDiagonal() * discounted;
}

FixedPointSolution solve_fixed_point(const Matrix& A, const Vector& b) {
  if (A.rows() != A.cols() || A.rows() != b.size()) throw Error("solve_fixed_point: dimension mismatch");
  FixedPointSolution sol;
  sol.sigma_min = symmetric_min_eigen(-A);
  if (!(sol.sigma_min > 0.0)) throw InvariantError("solve_fixed_point: A is not negative definite");
  Eigen::JacobiSVD<Matrix> svd(-A);
  sol.sigma_min_singular = svd.singularValues()(svd.singularValues().size() - 1);
  sol.theta_star = A.partialPivLu().solve(-b);
  if (!sol.theta_star.allFinite()) throw InvariantError("solve_fixed_point: solve failed");
  return sol;
}

Vector best_approximation_weights(const FeatureMap& fm, const StationaryDist& d, const Vector& J) {
  return projection_weights(fm, d, J);
}

FixedPointOracle build_oracle(const MultiAgentMdp& mdp, const FeatureMap& fm, double lambda) {
  if (fm.num_states() != mdp.num_states()) throw Error("features and mdp disagree on the number of states");
  FixedPointOracle o;
  o.gamma = mdp.gamma;
  o.lambda = lambda;
  o.dist = stationary_distribution(mdp.chain);
  o.U = compute_U(mdp.chain, mdp.gamma, lambda);
  o.A = compute_A(fm, o.dist, o.U);
  o.b = Vector::Zero(static_cast<Eigen::Index>(fm.num_features()));
  for (std::size_t v = 0; v < mdp.num_agents(); ++v) {
    o.b_v.push_back(compute_b(fm, o.dist, mdp.chain, expected_reward_vector(mdp, v), mdp.gamma, lambda));
    o.b += o.b_v.back();
  }
  o.b /= static_cast<double>(mdp.num_agents());
  auto sol = solve_fixed_point(o.A, o.b);
  o.sigma_min = sol.sigma_min;
  o.sigma_min_singular = sol.sigma_min_singular;
  o.J = true_value(mdp);
  // At lambda = 1 the fixed point is the D-projection of J; use that identity
  // directly rather than the (equivalent) degenerate closed form.
  o.theta_star = lambda == 1.0 ? best_approximation_weights(fm, o.dist, o.J) : std::move(sol.theta_star);
  o.residual = (o.A * o.theta_star + o.b).norm();
  return o;
}

ApproximationQuality approximation_quality(const FixedPointOracle& oracle, const Vector& J,
                                           const FeatureMap& fm, const StationaryDist& d) {
  constexpr double kTol = 1e-9;
  ApproximationQuality q;
  q.lower = weighted_norm(project(fm, d, J) - J, d);
  q.actual = weighted_norm(value_estimate(fm, oracle.theta_star) - J, d);
  q.upper = (1.0 - oracle.gamma * oracle.lambda) / (1.0 - oracle.gamma) * q.lower;
  if (q.lower > q.actual + kTol || q.actual > q.upper + kTol)
    throw InvariantError("approximation sandwich violated: " + format_double(q.lower) + " <= " +
                         format_double(q.actual) + " <= " + format_double(q.upper));
  return q;
}

NormBoundReport norm_bound_check(const FixedPointOracle& oracle, double gamma, double lambda, double R) {
  NormBoundReport r;
  Eigen::JacobiSVD<Matrix> svd(oracle.A);
  r.a_norm = svd.singularValues()(0);
  r.a_bound = (1.0 + gamma) / (1.0 - gamma * lambda);
  r.b_norm = oracle.b.norm();
  r.b_bound = R / (1.0 - gamma * lambda);
  if (!r.ok())
    throw InvariantError("norm bound violated: ||A|| = " + format_double(r.a_norm) + " (bound " +
                         format_double(r.a_bound) + "), ||b|| = " + format_double(r.b_norm) + " (bound " +
                         format_double(r.b_bound) + ")");
  return r;
}

void write_oracle(std::ostream& out, const FixedPointOracle& o) {
  out << "dtdlab-oracle 1\n";
  out << "gamma " << format_double(o.gamma) << '\n';
  out << "lambda " << format_double(o.lambda) << '\n';
  out << "sigma_min " << format_double(o.sigma_min) << '\n';
  out << "sigma_min_singular " << format_double(o.sigma_min_singular) << '\n';
  out << "residual " << format_double(o.residual) << '\n';
  out << "theta_star_norm " << format_double(o.theta_star.norm()) << '\n';
  out << "pi\n";
  write_matrix(out, o.dist.pi.transpose());
  out << "A\n";
  write_matrix(out, o.A);
  out << "b\n";
  write_matrix(out, o.b.transpose());
  out << "theta_star\n";
  write_matrix(out, o.theta_star.transpose());
}

}  // namespace dtdlab
