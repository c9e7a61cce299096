#include "dtdlab/features.hpp"

#include "dtdlab/io.hpp"

#include <cmath>

namespace dtdlab {
namespace {

constexpr double kMinSingular = 1e-10;

// Index of the first column that depends on the preceding ones, if any.
std::optional<std::size_t> dependent_column(const Matrix& phi) {
  for (Eigen::Index c = 1; c <= phi.cols(); ++c) {
    Eigen::JacobiSVD<Matrix> svd(phi.leftCols(c));
    if (svd.singularValues()(c - 1) <= kMinSingular) return static_cast<std::size_t>(c - 1);
  }
  return std::nullopt;
}

}  // namespace

Validation validate_features(const Matrix& phi) {
  if (phi.rows() == 0 || phi.cols() == 0) return Validation::fail("empty feature matrix");
  if (phi.cols() > phi.rows()) return Validation::fail("more features than states");
  if (!phi.allFinite()) return Validation::fail("non-finite feature entry");
  if (auto col = dependent_column(phi)) return Validation::fail("rank deficient: dependent column", *col);
  for (Eigen::Index i = 0; i < phi.rows(); ++i)
    if (phi.row(i).norm() > 1.0 + 1e-12)
      return Validation::fail("feature row norm exceeds 1", static_cast<std::size_t>(i));
  return Validation::pass();
}

FeatureMap::FeatureMap(Matrix phi) : phi_(std::move(phi)) {
  if (auto check = validate_features(phi_); !check) throw Error("invalid features: " + check.describe());
}

FeatureMap normalize_features(const Matrix& raw) {
  if (raw.rows() == 0 || raw.cols() == 0) throw Error("normalize_features: empty matrix");
  if (auto col = dependent_column(raw)) throw Error("normalize_features: rank deficient, column " + std::to_string(*col) + " is dependent");
  const double largest = raw.rowwise().norm().maxCoeff();
  return FeatureMap(raw / largest);
}

Vector value_estimate(const FeatureMap& fm, const Vector& theta) {
  if (static_cast<std::size_t>(theta.size()) != fm.num_features())
    throw Error("value_estimate: theta has " + std::to_string(theta.size()) + " entries, expected " +
                std::to_string(fm.num_features()));
  return fm.Phi() * theta;
}

double weighted_norm(const Vector& x, const StationaryDist& d) {
  if (x.size() != d.pi.size()) throw Error("weighted_norm: dimension mismatch");
  return std::sqrt(d.pi.dot(x.cwiseAbs2()));
}

Vector projection_weights(const FeatureMap& fm, const StationaryDist& d, const Vector& x) {
  const Matrix& phi = fm.Phi();
  if (x.size() != phi.rows() || d.pi.size() != phi.rows()) throw Error("project: dimension mismatch");
  const Matrix weighted = phi.transpose() * d.pi.asDiagonal();
  const Matrix gram = weighted * phi;
  Eigen::LLT<Matrix> llt(gram);
  if (llt.info() != Eigen::Success) throw InvariantError("project: singular Gram matrix");
  return llt.solve(weighted * x);
}

Vector project(const FeatureMap& fm, const StationaryDist& d, const Vector& x) {
  return fm.Phi() * projection_weights(fm, d, x);
}

Matrix aggregation_features(std::size_t num_states, std::size_t num_features) {
  if (num_features == 0 || num_features > num_states) throw Error("aggregation_features: need 1 <= L <= S");
  Matrix phi = Matrix::Zero(static_cast<Eigen::Index>(num_states), static_cast<Eigen::Index>(num_features));
  for (std::size_t i = 0; i < num_states; ++i)
    phi(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i * num_features / num_states)) = 1.0;
  return phi;
}

Matrix gaussian_features(std::size_t num_states, std::size_t num_features, std::uint64_t seed) {
  Rng rng(seed);
  Matrix phi(static_cast<Eigen::Index>(num_states), static_cast<Eigen::Index>(num_features));
  for (Eigen::Index i = 0; i < phi.rows(); ++i)
    for (Eigen::Index j = 0; j < phi.cols(); ++j) phi(i, j) = rng.normal();
  return phi;
}

}  // namespace dtdlab
