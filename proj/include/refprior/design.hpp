#ifndef REFPRIOR_DESIGN_HPP
#define REFPRIOR_DESIGN_HPP

#include <Eigen/Dense>
#include <vector>

namespace refprior {

// Observation locations with their pairwise geometry. Distances are
// Euclidean; duplicate locations are rejected because they make every
// correlation matrix in the model singular.
struct DesignSet {
  Eigen::MatrixXd points;     // n x dim
  Eigen::MatrixXd distances;  // n x n, symmetric, zero diagonal
  double max_distance = 0.0;
  double median_distance = 0.0;  // median over off-diagonal pairs

  int n() const { return static_cast<int>(points.rows()); }
  int dim() const { return static_cast<int>(points.cols()); }
};

DesignSet make_design(const Eigen::MatrixXd& points);

enum class BasisKind { none, constant, linear, custom };

// Regression (trend) basis evaluated at arbitrary locations. The custom kind
// takes monomial exponent vectors, one per basis function, each of length
// dim; constant is the single all-ones column and linear prepends it to the
// coordinates. A custom basis may additionally set `combination` (one row per
// monomial, one column per final basis function) to use linear combinations
// of the monomials instead of the raw monomials themselves.
struct RegressionBasis {
  BasisKind kind = BasisKind::constant;
  std::vector<std::vector<int>> monomials;
  Eigen::MatrixXd combination;  // optional; empty means identity

  int dimension(int spatial_dim) const;
  Eigen::MatrixXd evaluate(const Eigen::MatrixXd& points) const;
};

RegressionBasis basis_from_string(const std::string& name);

}  // namespace refprior

#endif  // REFPRIOR_DESIGN_HPP
