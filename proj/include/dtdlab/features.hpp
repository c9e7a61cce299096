#pragma once

#include "dtdlab/common.hpp"
#include "dtdlab/mdp.hpp"

namespace dtdlab {

/// Linear features: row i of `Phi` is the feature vector of state i.
/// Columns are linearly independent and every row has Euclidean norm <= 1.
class FeatureMap {
public:
  FeatureMap() = default;

  /// Takes `phi` as given after checking the invariants.
  explicit FeatureMap(Matrix phi);

  const Matrix& Phi() const { return phi_; }
  std::size_t num_states() const { return static_cast<std::size_t>(phi_.rows()); }
  std::size_t num_features() const { return static_cast<std::size_t>(phi_.cols()); }
  auto row(std::size_t state) const { return phi_.row(static_cast<Eigen::Index>(state)); }

private:
  Matrix phi_;
};

/// Checks full column rank, row norms <= 1 and L <= S.
Validation validate_features(const Matrix& phi);

/// Scales `raw` globally by 1 / max_i ||phi(i)|| so the largest row has unit norm.
FeatureMap normalize_features(const Matrix& raw);

/// Phi theta.
Vector value_estimate(const FeatureMap& fm, const Vector& theta);

/// sqrt(x^T D x).
double weighted_norm(const Vector& x, const StationaryDist& d);

/// D-orthogonal projection onto span(Phi): Phi (Phi^T D Phi)^{-1} Phi^T D x.
Vector project(const FeatureMap& fm, const StationaryDist& d, const Vector& x);

/// Weights of the projection: (Phi^T D Phi)^{-1} Phi^T D x.
Vector projection_weights(const FeatureMap& fm, const StationaryDist& d, const Vector& x);

// Common raw feature families used by the harness.
Matrix aggregation_features(std::size_t num_states, std::size_t num_features);
Matrix gaussian_features(std::size_t num_states, std::size_t num_features, std::uint64_t seed);

}  // namespace dtdlab
