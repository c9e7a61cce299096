#pragma once

#include "dtdlab/analysis.hpp"
#include "dtdlab/dtd.hpp"
#include "dtdlab/exact.hpp"
#include "dtdlab/features.hpp"
#include "dtdlab/mdp.hpp"
#include "dtdlab/network.hpp"

#include <doctest.h>

#include <cmath>

namespace fixtures {

using namespace dtdlab;

inline Matrix mat(std::initializer_list<std::initializer_list<double>> rows) {
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.begin()->size()));
  Eigen::Index i = 0;
  for (const auto& r : rows) {
    Eigen::Index j = 0;
    for (double x : r) m(i, j++) = x;
    ++i;
  }
  return m;
}

inline Vector vec(std::initializer_list<double> xs) {
  Vector v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v[i++] = x;
  return v;
}

inline double max_abs(const Matrix& m) { return m.cwiseAbs().maxCoeff(); }

/// Seeded MDP with Gaussian features, the workhorse of the property tests.
struct Problem {
  MultiAgentMdp mdp;
  FeatureMap fm;
};

inline Problem problem(std::size_t S, std::size_t L, std::size_t N, double gamma, std::uint64_t seed,
                       std::size_t branching = 0) {
  RandomMdpSpec spec;
  spec.num_states = S;
  spec.num_agents = N;
  spec.branching = branching == 0 ? S : branching;
  spec.reward_bound = 1.0;
  spec.gamma = gamma;
  spec.seed = seed;
  return {random_mdp(spec), normalize_features(gaussian_features(S, L, seed + 1000))};
}

/// Plain sum_{k<=K} c_k M^k with the tail below `tol`.
inline Matrix truncated_U(const Matrix& P, double gamma, double lambda) {
  const auto n = P.rows();
  Matrix sum = Matrix::Zero(n, n);
  Matrix power = gamma * P;  // (gamma P)^{k+1}
  double coef = 1.0 - lambda;
  for (int k = 0; k < 100000 && coef > 1e-18; ++k) {
    sum += coef * power;
    power = power * (gamma * P);
    coef *= lambda;
    if (max_abs(power) * coef < 1e-18) break;
  }
  return sum;
}

}  // namespace fixtures
