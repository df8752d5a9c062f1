#include "refprior/design.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "refprior/errors.hpp"

namespace refprior {

DesignSet make_design(const Eigen::MatrixXd& points) {
  const int n = static_cast<int>(points.rows());
  if (n < 2) throw design_error("a design needs at least two locations");
  if (points.cols() < 1) throw design_error("locations need at least one coordinate");
  if (!points.allFinite()) throw design_error("locations must be finite");

  DesignSet out;
  out.points = points;
  out.distances = Eigen::MatrixXd::Zero(n, n);
  std::vector<double> offdiag;
  offdiag.reserve(static_cast<size_t>(n) * (n - 1) / 2);
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const double d = (points.row(i) - points.row(j)).norm();
      if (d == 0.0)
        throw design_error("duplicate locations at rows " + std::to_string(i) +
                           " and " + std::to_string(j));
      out.distances(i, j) = d;
      out.distances(j, i) = d;
      offdiag.push_back(d);
    }
  }
  std::sort(offdiag.begin(), offdiag.end());
  out.max_distance = offdiag.back();
  const size_t mid = offdiag.size() / 2;
  out.median_distance = (offdiag.size() % 2 == 1)
                            ? offdiag[mid]
                            : 0.5 * (offdiag[mid - 1] + offdiag[mid]);
  return out;
}

int RegressionBasis::dimension(int spatial_dim) const {
  switch (kind) {
    case BasisKind::none: return 0;
    case BasisKind::constant: return 1;
    case BasisKind::linear: return 1 + spatial_dim;
    case BasisKind::custom:
      return combination.size() > 0 ? static_cast<int>(combination.cols())
                                    : static_cast<int>(monomials.size());
  }
  throw parameter_error("unknown basis kind enum value");
}

Eigen::MatrixXd RegressionBasis::evaluate(const Eigen::MatrixXd& points) const {
  const int n = static_cast<int>(points.rows());
  const int dim = static_cast<int>(points.cols());
  const int p = dimension(dim);
  Eigen::MatrixXd h(n, p);
  switch (kind) {
    case BasisKind::none:
      break;
    case BasisKind::constant:
      h.col(0).setOnes();
      break;
    case BasisKind::linear:
      h.col(0).setOnes();
      h.rightCols(dim) = points;
      break;
    case BasisKind::custom: {
      const int nm = static_cast<int>(monomials.size());
      Eigen::MatrixXd raw(n, nm);
      for (int j = 0; j < nm; ++j) {
        const auto& expo = monomials[static_cast<size_t>(j)];
        if (static_cast<int>(expo.size()) != dim)
          throw design_error("monomial exponent length does not match dimension");
        for (int i = 0; i < n; ++i) {
          double v = 1.0;
          for (int c = 0; c < dim; ++c) {
            if (expo[static_cast<size_t>(c)] < 0)
              throw design_error("monomial exponents must be nonnegative");
            for (int e = 0; e < expo[static_cast<size_t>(c)]; ++e)
              v *= points(i, c);
          }
          raw(i, j) = v;
        }
      }
      if (combination.size() > 0) {
        if (combination.rows() != nm)
          throw design_error("combination matrix rows must match monomial count");
        h = raw * combination;
      } else {
        h = raw;
      }
      break;
    }
  }
  return h;
}

RegressionBasis basis_from_string(const std::string& name) {
  RegressionBasis b;
  if (name == "none") { b.kind = BasisKind::none; return b; }
  if (name == "constant") { b.kind = BasisKind::constant; return b; }
  if (name == "linear") { b.kind = BasisKind::linear; return b; }
  throw parameter_error("unknown basis: " + name +
                        " (expected none, constant or linear)");
}

}  // namespace refprior
